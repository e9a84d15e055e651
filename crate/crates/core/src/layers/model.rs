use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{egc_forward, EgcConfig, EgcParams, Linear, WeightActivation};
use crate::error::{EgcError, Result};
use crate::graph::CsrGraph;
use crate::kernels::{Aggregator, ExecOptions};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub fn relu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| v.max(T::zero()))
}

/// Hyperparameters for building a stack from scratch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub bases: usize,
    pub aggs: Vec<Aggregator>,
    #[serde(default)]
    pub activation: WeightActivation,
}

/// EGC layers with a rectifier after each, followed by an optional linear
/// readout. Without a readout the last layer's output is returned as is.
#[derive(Clone, Debug, PartialEq)]
pub struct EgcModel<T = f32> {
    pub layers: Vec<EgcParams<T>>,
    pub readout: Option<Linear<T>>,
}

impl<T: Real> EgcModel<T> {
    pub fn new(layers: Vec<EgcParams<T>>, readout: Option<Linear<T>>) -> Result<Self> {
        let m = Self { layers, readout };
        m.validate()?;
        Ok(m)
    }

    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        if spec.num_layers == 0 {
            return Err(EgcError::config("a model needs at least one layer"));
        }
        let layers = (0..spec.num_layers)
            .map(|k| {
                let cfg = EgcConfig {
                    in_dim: if k == 0 { spec.in_dim } else { spec.hidden },
                    out_dim: spec.hidden,
                    heads: spec.heads,
                    bases: spec.bases,
                    aggs: spec.aggs.clone(),
                    activation: spec.activation,
                };
                EgcParams::init(cfg, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let readout = Linear::init(spec.hidden, spec.out_dim, rng);
        Self::new(layers, Some(readout))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(EgcError::config("a model needs at least one layer"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if k > 0 && l.config.in_dim != self.layers[k - 1].config.out_dim {
                return Err(EgcError::shape(
                    "layer input width",
                    self.layers[k - 1].config.out_dim,
                    l.config.in_dim,
                ));
            }
        }
        if let Some(r) = &self.readout {
            r.validate()?;
            let last = self.layers.last().unwrap().config.out_dim;
            if r.in_dim() != last {
                return Err(EgcError::shape("readout input width", last, r.in_dim()));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].config.in_dim
    }

    pub fn out_dim(&self) -> usize {
        match &self.readout {
            Some(r) => r.out_dim(),
            None => self.layers.last().unwrap().config.out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(EgcParams::param_count).sum::<usize>()
            + self.readout.as_ref().map_or(0, |r| r.weight.len() + r.bias.len())
    }

    /// Whether the rectifier follows layer `k`.
    pub fn relu_after(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.readout.is_some()
    }

    pub fn forward(&self, g: &CsrGraph, x: &Matrix<T>, opts: &ExecOptions) -> Result<Matrix<T>> {
        self.validate()?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = egc_forward(g, &h, layer, opts)?;
            if self.relu_after(k) {
                h = relu(&h);
            }
        }
        match &self.readout {
            Some(r) => r.forward(&h),
            None => Ok(h),
        }
    }

    pub fn cast<U: Real>(&self) -> EgcModel<U> {
        EgcModel {
            layers: self.layers.iter().map(EgcParams::cast).collect(),
            readout: self.readout.as_ref().map(Linear::cast),
        }
    }
}
