//! Finite-difference verification of the analytic backward passes on small
//! random instances, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    egc_m_backward, egc_s_backward, finite_diff_grad, gcn_backward, gin_backward, r_egc_backward, GradBundle,
    Params,
};
use crate::error::{EgcError, Result};
use crate::graph::{generate_graph, CsrGraph, GraphSpec, NodeTypedGraph};
use crate::kernels::{Aggregator, ExecOptions};
use crate::layers::{
    egc_m_forward, egc_s_forward, gcn_forward, gin_forward, r_egc_forward, EgcConfig, EgcParams, Linear,
    ReggcConfig, ReggcParams, WeightActivation,
};
use crate::matrix::{dot, Matrix};

/// Layer under test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckLayer {
    EgcS,
    EgcM(Vec<Aggregator>),
    Gcn,
    Gin,
    REgc,
}

impl CheckLayer {
    pub fn name(&self) -> String {
        match self {
            CheckLayer::EgcS => "egc-s".into(),
            CheckLayer::EgcM(aggs) => {
                let names: Vec<&str> = aggs.iter().map(|a| a.name()).collect();
                format!("egc-m[{}]", names.join(","))
            }
            CheckLayer::Gcn => "gcn".into(),
            CheckLayer::Gin => "gin".into(),
            CheckLayer::REgc => "r-egc".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step. The numerical gradient extrapolates from
    /// steps `h` and `h/2`.
    pub h: f64,
    pub rel_tol: f64,
    /// Absolute error below which an entry passes regardless of `rel_tol`.
    pub abs_floor: f64,
    pub nodes: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub bases: usize,
    pub activation: WeightActivation,
    /// Redraws allowed when an instance sits near a non-differentiable point.
    pub max_resamples: usize,
    /// Test hook: perturb the analytic basis gradient before comparing.
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            nodes: 10,
            in_dim: 5,
            out_dim: 4,
            heads: 2,
            bases: 2,
            activation: WeightActivation::Identity,
            max_resamples: 50,
            corrupt_backward: false,
        }
    }
}

impl GradCheckOptions {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.rel_tol > 0.0 && self.abs_floor >= 0.0) {
            return Err(EgcError::config("step and tolerances must be positive"));
        }
        if self.nodes < 2 || self.in_dim == 0 {
            return Err(EgcError::config("need at least 2 nodes and 1 input feature"));
        }
        Ok(())
    }

    /// Distance from a kink that a finite-difference probe cannot cross.
    fn margin(&self) -> f64 {
        10.0 * self.h
    }
}

/// Worst agreement for one parameter tensor (or the input, named `x`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub max_abs_err: f64,
    /// `max |a − n| / max(|a|, |n|, abs_floor / rel_tol)`, so an entry passes
    /// when it is within `rel_tol` relatively or `abs_floor` absolutely.
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layer: String,
    pub seed: u64,
    pub resamples: usize,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }
}

/// Compare analytic and numerical gradients of `Σ dy ⊙ layer(x)` for every
/// parameter tensor and the input. Instances where a max/min has a
/// near-tie or a variance is near zero are redrawn.
pub fn gradient_check(layer: &CheckLayer, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    opts.validate()?;
    for attempt in 0..=opts.max_resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        if let Some(groups) = try_instance(layer, &mut rng, opts)? {
            return Ok(GradCheckReport {
                layer: layer.name(),
                seed,
                resamples: attempt,
                groups,
            });
        }
    }
    Err(EgcError::config(format!(
        "no instance away from non-differentiable points after {} draws",
        opts.max_resamples + 1
    )))
}

fn try_instance(layer: &CheckLayer, rng: &mut ChaCha8Rng, opts: &GradCheckOptions) -> Result<Option<Vec<GroupError>>> {
    let n = opts.nodes;
    let exec = ExecOptions::default();
    let g = generate_graph(&GraphSpec::ErdosRenyi { n, p: 0.3 }, rng.random())?.normalized();
    let x = Matrix::<f64>::uniform(n, opts.in_dim, 1.0, rng);
    let dy = Matrix::<f64>::uniform(n, opts.out_dim, 1.0, rng);
    let probe = |y: Matrix<f64>| dot(y.as_slice(), dy.as_slice());
    let groups = match layer {
        CheckLayer::EgcS | CheckLayer::EgcM(_) => {
            let single = *layer == CheckLayer::EgcS;
            let aggs = match layer {
                CheckLayer::EgcM(a) => a.clone(),
                _ => vec![Aggregator::SymNorm],
            };
            let cfg = EgcConfig {
                in_dim: opts.in_dim,
                out_dim: opts.out_dim,
                heads: opts.heads,
                bases: opts.bases,
                aggs: aggs.clone(),
                activation: opts.activation,
            };
            let mut p = EgcParams::<f64>::init(cfg, rng)?;
            p.bias = Matrix::uniform(1, p.bias.len(), 0.5, rng).into_vec();
            if near_kink(&g, &x.matmul_t(&p.stacked_theta())?, &aggs, opts.margin()) {
                return Ok(None);
            }
            let analytic = if single {
                egc_s_backward(&g, &x, &p, &dy, &exec)?
            } else {
                egc_m_backward(&g, &x, &p, &dy, &exec)?
            };
            let mut names: Vec<String> = (0..opts.bases).map(|b| format!("theta[{b}]")).collect();
            names.extend(["phi".to_string(), "bias".to_string()]);
            compare(&p, &x, analytic, names, opts, |p, x| {
                let y = if single {
                    egc_s_forward(&g, x, p)?
                } else {
                    egc_m_forward(&g, x, p)?
                };
                Ok(probe(y))
            })?
        }
        CheckLayer::Gcn => {
            let theta = Matrix::<f64>::uniform(opts.out_dim, opts.in_dim, 1.0, rng);
            let analytic = gcn_backward(&g, &x, &theta, &dy, &exec)?;
            compare(&theta, &x, analytic, vec!["theta".into()], opts, |t, x| {
                Ok(probe(gcn_forward(&g, x, t)?))
            })?
        }
        CheckLayer::Gin => {
            let eps = 0.3;
            let mut f = Linear::<f64>::init(opts.in_dim, opts.out_dim, rng);
            f.bias = Matrix::uniform(1, opts.out_dim, 0.5, rng).into_vec();
            let analytic = gin_backward(&g, &x, eps, &f, &dy, &exec)?;
            compare(&f, &x, analytic, vec!["weight".into(), "bias".into()], opts, |f, x| {
                Ok(probe(gin_forward(&g, x, eps, f)?))
            })?
        }
        CheckLayer::REgc => {
            let (num_relations, num_node_types) = (2, 2);
            let relations = (0..num_relations)
                .map(|_| generate_graph(&GraphSpec::ErdosRenyi { n, p: 0.25 }, rng.random()))
                .collect::<Result<Vec<_>>>()?;
            let node_type = (0..n).map(|_| rng.random_range(0..num_node_types as u32)).collect();
            let tg = NodeTypedGraph::new(relations, node_type, num_node_types)?;
            let cfg = ReggcConfig {
                in_dim: opts.in_dim,
                out_dim: opts.out_dim,
                heads: opts.heads,
                bases: opts.bases,
                num_relations,
                num_node_types,
                activation: opts.activation,
            };
            let mut p = ReggcParams::<f64>::init(cfg, rng)?;
            for b in p.type_bias.iter_mut().chain(p.rel_bias.iter_mut()) {
                *b = Matrix::uniform(1, b.len(), 0.5, rng).into_vec();
            }
            let analytic = r_egc_backward(&tg, &x, &p, &dy, &exec)?;
            let mut names: Vec<String> = (0..opts.bases).map(|b| format!("theta[{b}]")).collect();
            names.extend((0..num_node_types).map(|t| format!("type_phi[{t}]")));
            names.extend((0..num_relations).map(|r| format!("rel_phi[{r}]")));
            names.extend((0..num_node_types).map(|t| format!("type_bias[{t}]")));
            names.extend((0..num_relations).map(|r| format!("rel_bias[{r}]")));
            compare(&p, &x, analytic, names, opts, |p, x| Ok(probe(r_egc_forward(&tg, x, p)?)))?
        }
    };
    Ok(Some(groups))
}

/// Whether a finite-difference probe around `z` could cross a max/min
/// switch or the variance clamp.
fn near_kink(g: &CsrGraph, z: &Matrix<f64>, aggs: &[Aggregator], margin: f64) -> bool {
    let extremal = aggs.iter().any(|a| matches!(a, Aggregator::Max | Aggregator::Min));
    let spread = aggs.iter().any(|a| matches!(a, Aggregator::Std | Aggregator::Var));
    if !extremal && !spread {
        return false;
    }
    let mut vals = Vec::new();
    for i in 0..g.num_nodes() {
        let nb = g.neighbors(i);
        if nb.len() < 2 {
            continue;
        }
        for t in 0..z.cols() {
            vals.clear();
            vals.extend(nb.iter().map(|&j| z.get(j as usize, t)));
            vals.sort_by(f64::total_cmp);
            let k = vals.len();
            if extremal && (vals[1] - vals[0] < margin || vals[k - 1] - vals[k - 2] < margin) {
                return true;
            }
            if spread {
                let mean = vals.iter().sum::<f64>() / k as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
                if var < 0.1 * margin {
                    return true;
                }
            }
        }
    }
    false
}

fn compare<P, F>(
    params: &P,
    x: &Matrix<f64>,
    mut analytic: GradBundle<f64>,
    names: Vec<String>,
    opts: &GradCheckOptions,
    loss: F,
) -> Result<Vec<GroupError>>
where
    P: Params<f64> + Clone,
    F: Fn(&P, &Matrix<f64>) -> Result<f64>,
{
    if opts.corrupt_backward {
        if let Some(t) = analytic.d_theta.first_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v += 1e-2);
        }
    }
    let numeric = richardson(
        finite_diff_grad(params, opts.h, |p| loss(p, x))?,
        finite_diff_grad(params, opts.h / 2.0, |p| loss(p, x))?,
    );
    let numeric_x = richardson(
        finite_diff_grad(x, opts.h, |xx| loss(params, xx))?,
        finite_diff_grad(x, opts.h / 2.0, |xx| loss(params, xx))?,
    );
    let tensors = analytic.tensors();
    if tensors.len() != numeric.len() || names.len() != numeric.len() {
        return Err(EgcError::shape("gradient tensor count", numeric.len(), tensors.len()));
    }
    let mut out: Vec<GroupError> = names
        .into_iter()
        .zip(tensors.iter().zip(&numeric))
        .map(|(name, (a, n))| group_error(name, a, n, opts))
        .collect();
    out.push(group_error("x".into(), analytic.d_x.as_slice(), &numeric_x[0], opts));
    Ok(out)
}

/// Fourth-order combination `(4·D(h/2) − D(h)) / 3` of two central differences.
fn richardson(coarse: Vec<Vec<f64>>, fine: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    coarse
        .into_iter()
        .zip(fine)
        .map(|(c, f)| c.iter().zip(&f).map(|(c, f)| (4.0 * f - c) / 3.0).collect())
        .collect()
}

fn group_error(name: String, analytic: &[f64], numeric: &[f64], opts: &GradCheckOptions) -> GroupError {
    let floor = opts.abs_floor / opts.rel_tol;
    let (mut max_abs_err, mut max_rel_err) = (0.0f64, 0.0f64);
    let mut finite = analytic.len() == numeric.len();
    for (&a, &n) in analytic.iter().zip(numeric) {
        finite &= a.is_finite();
        let e = (a - n).abs();
        max_abs_err = max_abs_err.max(e);
        max_rel_err = max_rel_err.max(e / a.abs().max(n.abs()).max(floor));
    }
    GroupError {
        name,
        max_abs_err,
        max_rel_err,
        passed: finite && max_rel_err <= opts.rel_tol,
    }
}
