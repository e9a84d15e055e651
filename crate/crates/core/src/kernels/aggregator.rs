use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EgcError;
use crate::scalar::Real;

/// Regularizer under the square root of the standard-deviation aggregator.
pub const STD_EPS: f64 = 1e-5;

/// Permutation-invariant reduction over a node's self-inclusive neighborhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// `Σ_j coeff(i, j) · x_j` with the graph's stored coefficients.
    SymNorm,
    Sum,
    Mean,
    Max,
    Min,
    Std,
    Var,
}

impl Aggregator {
    pub const ALL: [Aggregator; 7] = [
        Aggregator::SymNorm,
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::Max,
        Aggregator::Min,
        Aggregator::Std,
        Aggregator::Var,
    ];

    /// Stable on-disk tag.
    pub fn tag(self) -> u8 {
        match self {
            Aggregator::SymNorm => 0,
            Aggregator::Sum => 1,
            Aggregator::Mean => 2,
            Aggregator::Max => 3,
            Aggregator::Min => 4,
            Aggregator::Std => 5,
            Aggregator::Var => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::SymNorm => "symnorm",
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Min => "min",
            Aggregator::Std => "std",
            Aggregator::Var => "var",
        }
    }

    pub fn needs_coeff(self) -> bool {
        self == Aggregator::SymNorm
    }

    /// Scalars of running state per output feature.
    pub(crate) fn state_width(self) -> usize {
        match self {
            Aggregator::Std | Aggregator::Var => 2,
            _ => 1,
        }
    }

    /// Turn the running state into the aggregate, stored in the first
    /// `width` slots of `state`. `count` is the neighborhood size.
    #[inline]
    pub(crate) fn finalize<T: Real>(self, count: usize, width: usize, state: &mut [T]) {
        match self {
            Aggregator::Mean => {
                let inv = T::one() / T::of(count as f64);
                state[..width].iter_mut().for_each(|s| *s *= inv);
            }
            Aggregator::Std | Aggregator::Var => {
                let inv = T::one() / T::of(count as f64);
                let eps = T::of(STD_EPS);
                let (sum, sq) = state.split_at_mut(width);
                for (s, &q) in sum.iter_mut().zip(sq.iter()) {
                    let mean = *s * inv;
                    let var = (q * inv - mean * mean).max(T::zero());
                    *s = if self == Aggregator::Std {
                        (var + eps).sqrt()
                    } else {
                        var
                    };
                }
            }
            _ => {}
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = EgcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let agg = match lower.as_str() {
            "symnorm" | "sym_norm" | "sym-norm" | "gcn" => Aggregator::SymNorm,
            "sum" | "add" => Aggregator::Sum,
            "mean" => Aggregator::Mean,
            "max" => Aggregator::Max,
            "min" => Aggregator::Min,
            "std" | "stddev" => Aggregator::Std,
            "var" => Aggregator::Var,
            _ => return Err(EgcError::config(format!("unknown aggregator `{s}`"))),
        };
        Ok(agg)
    }
}

/// Parse a comma-separated aggregator list such as `sum,max,min`.
pub fn parse_aggregators(s: &str) -> Result<Vec<Aggregator>, EgcError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// How the multi-aggregator kernel orders its work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// One full CSR pass per aggregator, each materializing an `N × F`
    /// buffer, then a combination pass.
    Sequential,
    /// A single CSR pass that applies every aggregator to each fetched
    /// neighbor row, still materializing all aggregations before combining.
    FusedOrdered,
    /// A single CSR pass that combines each row's aggregations immediately
    /// and stores only the weighted result.
    FusedWeightedStore,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [
        FusionStrategy::Sequential,
        FusionStrategy::FusedOrdered,
        FusionStrategy::FusedWeightedStore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Sequential => "sequential",
            FusionStrategy::FusedOrdered => "fused_ordered",
            FusionStrategy::FusedWeightedStore => "fused_weighted_store",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
