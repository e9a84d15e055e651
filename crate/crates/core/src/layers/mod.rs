//! Basis-combination graph convolutions and the isotropic baselines.
//!
//! Every node `i` mixes `B` shared basis transforms `Θ_b` with its own
//! combination weights `w(i) = act(Φ x_i + b)`:
//!
//! ```text
//! y_i = ∥_h Σ_a Σ_b w(i)[h, a, b] · agg_a{ Θ_b x_j : j ∈ N(i) ∪ {i} }
//! ```
//!
//! The weight vector is indexed `(head, aggregator, basis)` with basis
//! fastest. Transforming first keeps the sparse work at `B` feature blocks of
//! width `F′/H` instead of one aggregation per output head.

mod io;
mod model;

pub use io::{load_checkpoint, load_features, read_checkpoint, read_features, save_checkpoint, save_features,
    write_checkpoint, write_features};
pub use model::{relu, EgcModel, ModelSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EgcError, Result};
use crate::graph::{CsrGraph, NodeTypedGraph};
use crate::kernels::{self, Aggregator, BasisLayout, ExecOptions, FusionStrategy};
use crate::matrix::{axpy, Matrix};
use crate::scalar::Real;

/// Optional squashing of the combination weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightActivation {
    #[default]
    Identity,
    /// Softmax over the bases within each `(head, aggregator)` group.
    Softmax,
    Sigmoid,
    Hardtanh,
}

impl WeightActivation {
    pub fn tag(self) -> u8 {
        match self {
            WeightActivation::Identity => 0,
            WeightActivation::Softmax => 1,
            WeightActivation::Sigmoid => 2,
            WeightActivation::Hardtanh => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [
            WeightActivation::Identity,
            WeightActivation::Softmax,
            WeightActivation::Sigmoid,
            WeightActivation::Hardtanh,
        ]
        .get(tag as usize)
        .copied()
    }

    /// Apply in place to one row of pre-activations; `group` is the number
    /// of bases.
    pub fn apply<T: Real>(self, row: &mut [T], group: usize) {
        match self {
            WeightActivation::Identity => {}
            WeightActivation::Softmax => {
                for g in row.chunks_mut(group) {
                    let m = g.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for v in g.iter_mut() {
                        *v = (*v - m).exp();
                        total += *v;
                    }
                    g.iter_mut().for_each(|v| *v /= total);
                }
            }
            WeightActivation::Sigmoid => row.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp())),
            WeightActivation::Hardtanh => row.iter_mut().for_each(|v| *v = v.max(-T::one()).min(T::one())),
        }
    }

    /// Chain rule through [`apply`](Self::apply): turn the gradient with
    /// respect to the activated row `post` into one with respect to `pre`.
    pub fn backward<T: Real>(self, pre: &[T], post: &[T], grad: &mut [T], group: usize) {
        match self {
            WeightActivation::Identity => {}
            WeightActivation::Softmax => {
                for (g, p) in grad.chunks_mut(group).zip(post.chunks(group)) {
                    let s: T = g.iter().zip(p).map(|(&gv, &pv)| gv * pv).sum();
                    for (gv, &pv) in g.iter_mut().zip(p) {
                        *gv = pv * (*gv - s);
                    }
                }
            }
            WeightActivation::Sigmoid => {
                for (gv, &pv) in grad.iter_mut().zip(post) {
                    *gv *= pv * (T::one() - pv);
                }
            }
            WeightActivation::Hardtanh => {
                for (gv, &v) in grad.iter_mut().zip(pre) {
                    if v <= -T::one() || v >= T::one() {
                        *gv = T::zero();
                    }
                }
            }
        }
    }
}

/// Shape of one EGC layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgcConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub bases: usize,
    pub aggs: Vec<Aggregator>,
    #[serde(default)]
    pub activation: WeightActivation,
}

impl EgcConfig {
    /// Single symmetric-normalized aggregator with 8 heads over 4 bases.
    pub fn single(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            heads: 8,
            bases: 4,
            aggs: vec![Aggregator::SymNorm],
            activation: WeightActivation::Identity,
        }
    }

    /// Several aggregators with 4 heads over 4 bases.
    pub fn multi(in_dim: usize, out_dim: usize, aggs: Vec<Aggregator>) -> Self {
        Self {
            in_dim,
            out_dim,
            heads: 4,
            bases: 4,
            aggs,
            activation: WeightActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(EgcError::config("layer dimensions must be positive"));
        }
        if self.heads == 0 || self.bases == 0 {
            return Err(EgcError::config("heads and bases must be positive"));
        }
        if self.out_dim % self.heads != 0 {
            return Err(EgcError::config(format!(
                "output dimension {} is not divisible by {} heads",
                self.out_dim, self.heads
            )));
        }
        if self.aggs.is_empty() {
            return Err(EgcError::config("at least one aggregator is required"));
        }
        for (k, a) in self.aggs.iter().enumerate() {
            if self.aggs[..k].contains(a) {
                return Err(EgcError::config(format!("duplicate aggregator `{a}`")));
            }
        }
        Ok(())
    }

    /// Width of each basis output and of each head, `F′ / H`.
    pub fn head_dim(&self) -> usize {
        self.out_dim / self.heads
    }

    pub fn layout(&self) -> BasisLayout {
        BasisLayout {
            heads: self.heads,
            bases: self.bases,
        }
    }

    /// `H · |A| · B`.
    pub fn weight_cols(&self) -> usize {
        self.heads * self.aggs.len() * self.bases
    }

    /// `B · (F′/H) · F` basis entries plus `H·|A|·B · (F + 1)` weighting entries.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.bases * self.head_dim() * self.in_dim + self.weight_cols() * (self.in_dim + 1))
    }

    pub fn is_single_symnorm(&self) -> bool {
        self.aggs == [Aggregator::SymNorm]
    }
}

/// Weights of one EGC layer: `B` bases of shape `(F′/H) × F`, the weighting
/// map `Φ` of shape `(H·|A|·B) × F` and its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct EgcParams<T = f32> {
    pub config: EgcConfig,
    pub theta: Vec<Matrix<T>>,
    pub phi: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> EgcParams<T> {
    /// Uniform `±1/sqrt(F)` bases and weighting map, zero bias.
    pub fn init<R: Rng + ?Sized>(config: EgcConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.in_dim as f64).sqrt();
        let theta = (0..config.bases)
            .map(|_| Matrix::uniform(config.head_dim(), config.in_dim, bound, rng))
            .collect();
        let phi = Matrix::uniform(config.weight_cols(), config.in_dim, bound, rng);
        let bias = vec![T::zero(); config.weight_cols()];
        Ok(Self {
            config,
            theta,
            phi,
            bias,
        })
    }

    pub fn from_parts(config: EgcConfig, theta: Vec<Matrix<T>>, phi: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        let p = Self {
            config,
            theta,
            phi,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.theta.len() != c.bases {
            return Err(EgcError::shape("basis count", c.bases, self.theta.len()));
        }
        for t in &self.theta {
            if (t.rows(), t.cols()) != (c.head_dim(), c.in_dim) {
                return Err(EgcError::shape(
                    "basis matrix",
                    format!("{}x{}", c.head_dim(), c.in_dim),
                    format!("{}x{}", t.rows(), t.cols()),
                ));
            }
            t.ensure_finite("basis matrix")?;
        }
        if (self.phi.rows(), self.phi.cols()) != (c.weight_cols(), c.in_dim) {
            return Err(EgcError::shape(
                "weighting matrix",
                format!("{}x{}", c.weight_cols(), c.in_dim),
                format!("{}x{}", self.phi.rows(), self.phi.cols()),
            ));
        }
        self.phi.ensure_finite("weighting matrix")?;
        if self.bias.len() != c.weight_cols() {
            return Err(EgcError::shape("weighting bias", c.weight_cols(), self.bias.len()));
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(EgcError::NonFinite("weighting bias"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.theta.iter().map(Matrix::len).sum::<usize>() + self.phi.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> EgcParams<U> {
        EgcParams {
            config: self.config.clone(),
            theta: self.theta.iter().map(Matrix::cast).collect(),
            phi: self.phi.cast(),
            bias: self.bias.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    /// The bases stacked into one `(B · F′/H) × F` map.
    pub fn stacked_theta(&self) -> Matrix<T> {
        stack_rows(&self.theta)
    }
}

pub(crate) fn stack_rows<T: Real>(blocks: &[Matrix<T>]) -> Matrix<T> {
    let cols = blocks.first().map_or(0, Matrix::cols);
    let rows: usize = blocks.iter().map(Matrix::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        data.extend_from_slice(b.as_slice());
    }
    Matrix::from_vec(rows, cols, data).expect("stacked sizes agree")
}

pub(crate) fn check_input<T: Real>(n: usize, x: &Matrix<T>, in_dim: usize) -> Result<()> {
    if x.rows() != n {
        return Err(EgcError::shape("feature rows", n, x.rows()));
    }
    if x.cols() != in_dim {
        return Err(EgcError::shape("feature columns", in_dim, x.cols()));
    }
    x.ensure_finite("features")
}

/// `act(x Φᵀ + b)` row by row.
pub(crate) fn affine_weights<T: Real>(
    x: &Matrix<T>,
    phi: &Matrix<T>,
    bias: &[T],
    activation: WeightActivation,
    bases: usize,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut pre = x.matmul_t(phi)?;
    for i in 0..pre.rows() {
        pre.row_mut(i).iter_mut().zip(bias).for_each(|(v, &b)| *v += b);
    }
    let mut post = pre.clone();
    for i in 0..post.rows() {
        activation.apply(post.row_mut(i), bases);
    }
    Ok((pre, post))
}

/// Per-node combination weights, `N × (H·|A|·B)`.
pub fn combination_weights<T: Real>(x: &Matrix<T>, p: &EgcParams<T>) -> Result<Matrix<T>> {
    p.validate()?;
    check_input(x.rows(), x, p.config.in_dim)?;
    Ok(affine_weights(x, &p.phi, &p.bias, p.config.activation, p.config.bases)?.1)
}

/// Where the basis transform sits relative to the sparse propagation. Both
/// orders compute the same `Σ_j coeff · Θ_b x_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FactorizationOrder {
    /// `B` SpMM passes over the transformed blocks `X Θ_bᵀ`.
    #[default]
    TransformThenPropagate,
    /// One SpMM over `X`, then every basis applied to the result.
    PropagateThenTransform,
}

/// `out[i, h·D + d] (+)= Σ_b w[i, h·B + b] · s[i, b·D + d]`.
pub(crate) fn combine_bases<T: Real>(w: &Matrix<T>, s: &Matrix<T>, heads: usize, bases: usize, out: &mut Matrix<T>) {
    let d = s.cols() / bases;
    for i in 0..out.rows() {
        let (wr, sr) = (w.row(i), s.row(i));
        let o = out.row_mut(i);
        for h in 0..heads {
            for b in 0..bases {
                axpy(&mut o[h * d..(h + 1) * d], wr[h * bases + b], &sr[b * d..(b + 1) * d]);
            }
        }
    }
}

/// Single symmetric-normalized aggregator layer.
pub fn egc_s_forward<T: Real>(g: &CsrGraph, x: &Matrix<T>, p: &EgcParams<T>) -> Result<Matrix<T>> {
    egc_s_forward_with(g, x, p, FactorizationOrder::default(), &ExecOptions::default())
}

pub fn egc_s_forward_with<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    p: &EgcParams<T>,
    order: FactorizationOrder,
    opts: &ExecOptions,
) -> Result<Matrix<T>> {
    p.validate()?;
    if !p.config.is_single_symnorm() {
        return Err(EgcError::config(format!(
            "single-aggregator layer needs exactly [symnorm], got {:?}",
            p.config.aggs
        )));
    }
    if g.coeff().is_none() {
        return Err(EgcError::MissingCoefficients);
    }
    check_input(g.num_nodes(), x, p.config.in_dim)?;
    let theta = p.stacked_theta();
    let s = match order {
        FactorizationOrder::TransformThenPropagate => kernels::spmm_with(g, &x.matmul_t(&theta)?, opts)?.0,
        FactorizationOrder::PropagateThenTransform => kernels::spmm_with(g, x, opts)?.0.matmul_t(&theta)?,
    };
    let w = combination_weights(x, p)?;
    let mut y = Matrix::zeros(g.num_nodes(), p.config.out_dim);
    combine_bases(&w, &s, p.config.heads, p.config.bases, &mut y);
    Ok(y)
}

/// Multi-aggregator layer through the fused kernel.
pub fn egc_m_forward<T: Real>(g: &CsrGraph, x: &Matrix<T>, p: &EgcParams<T>) -> Result<Matrix<T>> {
    egc_m_forward_with(g, x, p, FusionStrategy::FusedWeightedStore, &ExecOptions::default())
}

pub fn egc_m_forward_with<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    p: &EgcParams<T>,
    strategy: FusionStrategy,
    opts: &ExecOptions,
) -> Result<Matrix<T>> {
    p.validate()?;
    check_input(g.num_nodes(), x, p.config.in_dim)?;
    let z = x.matmul_t(&p.stacked_theta())?;
    let w = combination_weights(x, p)?;
    Ok(kernels::fused_spmm_with(g, &z, &p.config.aggs, &w, strategy, p.config.layout(), opts)?.0)
}

/// The EGC layer for `p`: the SpMM path for `[symnorm]`, the fused kernel otherwise.
pub fn egc_forward<T: Real>(g: &CsrGraph, x: &Matrix<T>, p: &EgcParams<T>, opts: &ExecOptions) -> Result<Matrix<T>> {
    if p.config.is_single_symnorm() {
        egc_s_forward_with(g, x, p, FactorizationOrder::default(), opts)
    } else {
        egc_m_forward_with(g, x, p, FusionStrategy::FusedWeightedStore, opts)
    }
}

/// GCN propagation `y = (D̃^-½ Ã D̃^-½ x) Θᵀ`; `theta` is `F′ × F`.
pub fn gcn_forward<T: Real>(g: &CsrGraph, x: &Matrix<T>, theta: &Matrix<T>) -> Result<Matrix<T>> {
    if g.coeff().is_none() {
        return Err(EgcError::MissingCoefficients);
    }
    check_input(g.num_nodes(), x, theta.cols())?;
    kernels::spmm(g, x)?.matmul_t(theta)
}

/// Affine map `x Wᵀ + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Self {
            weight: Matrix::uniform(out_dim, in_dim, bound, rng),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = Matrix::zeros(dim, dim);
        (0..dim).for_each(|i| weight.set(i, i, T::one()));
        Self {
            weight,
            bias: vec![T::zero(); dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.out_dim() {
            return Err(EgcError::shape("linear bias", self.out_dim(), self.bias.len()));
        }
        self.weight.ensure_finite("linear weight")?;
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(EgcError::NonFinite("linear bias"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.validate()?;
        let mut y = x.matmul_t(&self.weight)?;
        for i in 0..y.rows() {
            y.row_mut(i).iter_mut().zip(&self.bias).for_each(|(v, &b)| *v += b);
        }
        Ok(y)
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// `Σ_{j ∈ N(i), j ≠ i} x_j` with unit edge weights.
pub(crate) fn neighbor_sum<T: Real>(g: &CsrGraph, x: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(g.num_nodes(), x.cols());
    for i in 0..g.num_nodes() {
        let o = out.row_mut(i);
        for &j in g.neighbors(i) {
            if j as usize != i {
                axpy(o, T::one(), x.row(j as usize));
            }
        }
    }
    out
}

/// GIN propagation `y_i = f((1 + ε) x_i + Σ_{j ∈ N(i)} x_j)`. Self-loops in
/// `g` are ignored; the self term comes only from `(1 + ε)`.
pub fn gin_forward<T: Real>(g: &CsrGraph, x: &Matrix<T>, eps: T, f: &Linear<T>) -> Result<Matrix<T>> {
    check_input(g.num_nodes(), x, f.in_dim())?;
    let mut h = neighbor_sum(g, x);
    for i in 0..h.rows() {
        axpy(h.row_mut(i), T::one() + eps, x.row(i));
    }
    f.forward(&h)
}

/// Shape of a heterogeneous layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReggcConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub bases: usize,
    pub num_relations: usize,
    pub num_node_types: usize,
    #[serde(default)]
    pub activation: WeightActivation,
}

impl ReggcConfig {
    fn as_egc(&self) -> EgcConfig {
        EgcConfig {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            heads: self.heads,
            bases: self.bases,
            aggs: vec![Aggregator::Mean],
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.as_egc().validate()?;
        if self.num_node_types == 0 {
            return Err(EgcError::config("at least one node type is required"));
        }
        Ok(())
    }

    /// `H · B`.
    pub fn weight_cols(&self) -> usize {
        self.heads * self.bases
    }
}

/// One shared set of bases, with a separate weighting map per node type
/// (self term) and per relation (neighbor terms).
#[derive(Clone, Debug, PartialEq)]
pub struct ReggcParams<T = f32> {
    pub config: ReggcConfig,
    pub theta: Vec<Matrix<T>>,
    pub type_phi: Vec<Matrix<T>>,
    pub type_bias: Vec<Vec<T>>,
    pub rel_phi: Vec<Matrix<T>>,
    pub rel_bias: Vec<Vec<T>>,
}

impl<T: Real> ReggcParams<T> {
    pub fn init<R: Rng + ?Sized>(config: ReggcConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.in_dim as f64).sqrt();
        let d = config.out_dim / config.heads;
        let wc = config.weight_cols();
        let theta = (0..config.bases)
            .map(|_| Matrix::uniform(d, config.in_dim, bound, rng))
            .collect();
        let type_phi = (0..config.num_node_types)
            .map(|_| Matrix::uniform(wc, config.in_dim, bound, rng))
            .collect();
        let rel_phi = (0..config.num_relations)
            .map(|_| Matrix::uniform(wc, config.in_dim, bound, rng))
            .collect();
        Ok(Self {
            theta,
            type_phi,
            type_bias: vec![vec![T::zero(); wc]; config.num_node_types],
            rel_phi,
            rel_bias: vec![vec![T::zero(); wc]; config.num_relations],
            config,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.out_dim / c.heads;
        let wc = c.weight_cols();
        if self.theta.len() != c.bases {
            return Err(EgcError::shape("basis count", c.bases, self.theta.len()));
        }
        if let Some(t) = self.theta.iter().find(|t| (t.rows(), t.cols()) != (d, c.in_dim)) {
            return Err(EgcError::shape(
                "basis matrix",
                format!("{d}x{}", c.in_dim),
                format!("{}x{}", t.rows(), t.cols()),
            ));
        }
        let maps = |phis: &[Matrix<T>], biases: &[Vec<T>], count: usize, what: &'static str| -> Result<()> {
            if phis.len() != count || biases.len() != count {
                return Err(EgcError::shape(what, count, format!("{}/{}", phis.len(), biases.len())));
            }
            for (p, b) in phis.iter().zip(biases) {
                if (p.rows(), p.cols()) != (wc, c.in_dim) || b.len() != wc {
                    return Err(EgcError::shape(
                        what,
                        format!("{wc}x{} map and {wc} bias", c.in_dim),
                        format!("{}x{} map and {} bias", p.rows(), p.cols(), b.len()),
                    ));
                }
            }
            Ok(())
        };
        maps(&self.type_phi, &self.type_bias, c.num_node_types, "node-type weighting")?;
        maps(&self.rel_phi, &self.rel_bias, c.num_relations, "relation weighting")?;
        let finite = self.theta.iter().chain(&self.type_phi).chain(&self.rel_phi).all(Matrix::is_finite)
            && self.type_bias.iter().chain(&self.rel_bias).flatten().all(|v| v.is_finite());
        if !finite {
            return Err(EgcError::NonFinite("heterogeneous layer parameters"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ReggcParams<U> {
        let vecs = |v: &[Vec<T>]| -> Vec<Vec<U>> {
            v.iter().map(|b| b.iter().map(|x| U::of(x.to_f64_lossy())).collect()).collect()
        };
        ReggcParams {
            config: self.config.clone(),
            theta: self.theta.iter().map(Matrix::cast).collect(),
            type_phi: self.type_phi.iter().map(Matrix::cast).collect(),
            type_bias: vecs(&self.type_bias),
            rel_phi: self.rel_phi.iter().map(Matrix::cast).collect(),
            rel_bias: vecs(&self.rel_bias),
        }
    }
}

/// Row means over each node's relation neighborhood, zero for empty rows.
/// Edge coefficients are ignored.
pub(crate) fn relation_mean<T: Real>(g: &CsrGraph, z: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(g.num_nodes(), z.cols());
    for i in 0..g.num_nodes() {
        let nb = g.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let o = out.row_mut(i);
        for &j in nb {
            axpy(o, T::one(), z.row(j as usize));
        }
        let inv = T::one() / T::of(nb.len() as f64);
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Node-type weighting: `act(Φ_η(i) x_i + b_η(i))` for every node.
pub(crate) fn type_weights<T: Real>(
    g: &NodeTypedGraph,
    x: &Matrix<T>,
    p: &ReggcParams<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let wc = p.config.weight_cols();
    let mut pre = Matrix::zeros(x.rows(), wc);
    let mut post = Matrix::zeros(x.rows(), wc);
    for i in 0..x.rows() {
        let t = g.node_type()[i] as usize;
        let phi = &p.type_phi[t];
        let xi = x.row(i);
        for (k, v) in pre.row_mut(i).iter_mut().enumerate() {
            *v = crate::matrix::dot(phi.row(k), xi) + p.type_bias[t][k];
        }
        post.row_mut(i).copy_from_slice(pre.row(i));
        p.config.activation.apply(post.row_mut(i), p.config.bases);
    }
    Ok((pre, post))
}

pub(crate) fn check_typed<T: Real>(g: &NodeTypedGraph, x: &Matrix<T>, p: &ReggcParams<T>) -> Result<()> {
    p.validate()?;
    if g.num_relations() != p.config.num_relations {
        return Err(EgcError::shape("relation count", p.config.num_relations, g.num_relations()));
    }
    if g.num_node_types() > p.config.num_node_types {
        return Err(EgcError::config(format!(
            "graph has {} node types but the layer weights only {}",
            g.num_node_types(),
            p.config.num_node_types
        )));
    }
    check_input(g.num_nodes(), x, p.config.in_dim)
}

/// Heterogeneous layer:
///
/// ```text
/// y_i = ∥_h Σ_b w_η(i)[h, b] Θ_b x_i + Σ_r ∥_h Σ_b w_r(i)[h, b] · mean_{j ∈ N_r(i)} Θ_b x_j
/// ```
///
/// Both weightings are computed from `x_i`. A relation with no neighbors at
/// `i` contributes nothing.
pub fn r_egc_forward<T: Real>(g: &NodeTypedGraph, x: &Matrix<T>, p: &ReggcParams<T>) -> Result<Matrix<T>> {
    check_typed(g, x, p)?;
    let c = &p.config;
    let z = x.matmul_t(&stack_rows(&p.theta))?;
    let mut y = Matrix::zeros(g.num_nodes(), c.out_dim);
    let (_, w_self) = type_weights(g, x, p)?;
    combine_bases(&w_self, &z, c.heads, c.bases, &mut y);
    for (r, rel) in g.relations().iter().enumerate() {
        let m = relation_mean(rel, &z);
        let (_, w) = affine_weights(x, &p.rel_phi[r], &p.rel_bias[r], c.activation, c.bases)?;
        combine_bases(&w, &m, c.heads, c.bases, &mut y);
    }
    Ok(y)
}

/// What [`memory_probe`] accounts for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    /// The fused EGC path: transformed basis blocks, combination weights and
    /// the kernel's own temporaries.
    Egc,
    /// Analytical model of a layer that materializes one message per edge.
    MaterializedMessages,
}

/// Transient element counts, excluding inputs and the layer output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryCounters {
    pub transformed_elems: usize,
    pub weight_elems: usize,
    pub kernel_elems: usize,
    pub message_elems: usize,
    pub peak_transient_elems: usize,
}

/// Peak transient memory of one layer application over `g` with `bases`
/// feature blocks of width `features`. The EGC figure runs the fused kernel
/// on the self-looped graph and records its counters.
pub fn memory_probe(
    kind: ProbeKind,
    g: &CsrGraph,
    features: usize,
    bases: usize,
    aggs: &[Aggregator],
) -> Result<MemoryCounters> {
    match kind {
        ProbeKind::MaterializedMessages => {
            let message_elems = g.num_edges() * features;
            Ok(MemoryCounters {
                message_elems,
                peak_transient_elems: message_elems,
                ..Default::default()
            })
        }
        ProbeKind::Egc => {
            let n = g.num_nodes();
            let layout = BasisLayout { heads: 1, bases };
            let gn = g.normalized();
            let z = Matrix::<f32>::zeros(n, features * bases);
            let w = Matrix::<f32>::zeros(n, layout.weight_cols(aggs.len()));
            let (_, stats) = kernels::fused_spmm_with(
                &gn,
                &z,
                aggs,
                &w,
                FusionStrategy::FusedWeightedStore,
                layout,
                &ExecOptions::default(),
            )?;
            let c = MemoryCounters {
                transformed_elems: z.len(),
                weight_elems: w.len(),
                kernel_elems: stats.peak_transient_elems,
                message_elems: 0,
                peak_transient_elems: 0,
            };
            Ok(MemoryCounters {
                peak_transient_elems: c.transformed_elems + c.weight_elems + c.kernel_elems,
                ..c
            })
        }
    }
}

#[cfg(test)]
mod tests;
