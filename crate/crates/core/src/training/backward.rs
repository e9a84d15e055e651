//! Analytic gradients. Each backward recomputes the forward intermediates
//! it needs from the layer inputs, so it can be called with nothing but the
//! upstream gradient `dL/dy`.
//!
//! Extremum aggregators route the gradient to the first neighbor in row
//! order that attains the extremum. A variance clamped at zero passes no
//! gradient.

use super::GradBundle;
use crate::error::{EgcError, Result};
use crate::graph::{CsrGraph, NodeTypedGraph};
use crate::kernels::{self, Aggregator, ExecOptions};
use crate::layers::{
    affine_weights, check_input, check_typed, relation_mean, stack_rows, type_weights, EgcParams, Linear,
    ReggcParams, WeightActivation,
};
use crate::matrix::{axpy, dot, Matrix};
use crate::scalar::Real;

fn check_upstream<T: Real>(dy: &Matrix<T>, rows: usize, cols: usize) -> Result<()> {
    if (dy.rows(), dy.cols()) != (rows, cols) {
        return Err(EgcError::shape(
            "upstream gradient",
            format!("{rows}x{cols}"),
            format!("{}x{}", dy.rows(), dy.cols()),
        ));
    }
    dy.ensure_finite("upstream gradient")
}

fn col_sums<T: Real>(m: &Matrix<T>) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols()];
    for i in 0..m.rows() {
        axpy(&mut out, T::one(), m.row(i));
    }
    out
}

/// Reverse of `y[i, h·D + d] += Σ_b w[i, (h·A + a)·B + b] · s_a[i, b·D + d]`
/// summed over aggregators `a`. Returns `dL/dw` and one `dL/ds_a` per block.
fn combine_backward<T: Real>(
    w: &Matrix<T>,
    s: &[&Matrix<T>],
    dy: &Matrix<T>,
    heads: usize,
    bases: usize,
) -> (Matrix<T>, Vec<Matrix<T>>) {
    let na = s.len();
    let d = dy.cols() / heads;
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut ds: Vec<Matrix<T>> = s.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    for i in 0..dy.rows() {
        let dyr = dy.row(i);
        for h in 0..heads {
            let up = &dyr[h * d..(h + 1) * d];
            for (a, sa) in s.iter().enumerate() {
                for b in 0..bases {
                    let k = (h * na + a) * bases + b;
                    let blk = b * d..(b + 1) * d;
                    dw.row_mut(i)[k] = dot(up, &sa.row(i)[blk.clone()]);
                    axpy(&mut ds[a].row_mut(i)[blk], w.get(i, k), up);
                }
            }
        }
    }
    (dw, ds)
}

/// Turn `dL/dw` (with respect to activated weights) into the weighting-map
/// gradients; adds the input contribution to `dx`.
fn weighting_backward<T: Real>(
    x: &Matrix<T>,
    phi: &Matrix<T>,
    pre: &Matrix<T>,
    post: &Matrix<T>,
    mut dw: Matrix<T>,
    activation: WeightActivation,
    bases: usize,
    dx: &mut Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>)> {
    for i in 0..dw.rows() {
        activation.backward(pre.row(i), post.row(i), dw.row_mut(i), bases);
    }
    dx.add_assign(&dw.matmul(phi)?);
    Ok((dw.t_matmul(x)?, col_sums(&dw)))
}

/// Basis gradients from `dL/dZ` where `Z = X Θ_stackedᵀ`; adds the input
/// contribution to `dx`.
fn basis_backward<T: Real>(
    x: &Matrix<T>,
    theta: &[Matrix<T>],
    dz: &Matrix<T>,
    dx: &mut Matrix<T>,
) -> Result<Vec<Matrix<T>>> {
    dx.add_assign(&dz.matmul(&stack_rows(theta))?);
    let d = dz.cols() / theta.len();
    (0..theta.len())
        .map(|b| dz.col_block(b * d, d).t_matmul(x))
        .collect()
}

/// Gradient of the EGC layer; dispatches like [`egc_forward`](crate::layers::egc_forward).
pub fn egc_backward<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    p: &EgcParams<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    if p.config.is_single_symnorm() {
        egc_s_backward(g, x, p, dy, opts)
    } else {
        egc_m_backward(g, x, p, dy, opts)
    }
}

/// Single symmetric-normalized layer: the propagation is reversed with the
/// transposed SpMM.
pub fn egc_s_backward<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    p: &EgcParams<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    p.validate()?;
    if !p.config.is_single_symnorm() {
        return Err(EgcError::config("single-aggregator backward needs exactly [symnorm]"));
    }
    if g.coeff().is_none() {
        return Err(EgcError::MissingCoefficients);
    }
    let c = &p.config;
    check_input(g.num_nodes(), x, c.in_dim)?;
    check_upstream(dy, g.num_nodes(), c.out_dim)?;
    let z = x.matmul_t(&p.stacked_theta())?;
    let s = kernels::spmm_with(g, &z, opts)?.0;
    let (pre, w) = affine_weights(x, &p.phi, &p.bias, c.activation, c.bases)?;
    let (dw, ds) = combine_backward(&w, &[&s], dy, c.heads, c.bases);
    let dz = kernels::spmm_transpose(g, &ds[0], opts)?;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let d_theta = basis_backward(x, &p.theta, &dz, &mut dx)?;
    let (d_phi, d_bias) = weighting_backward(x, &p.phi, &pre, &w, dw, c.activation, c.bases, &mut dx)?;
    Ok(GradBundle {
        d_theta,
        d_phi: vec![d_phi],
        d_bias: vec![d_bias],
        d_x: dx,
    })
}

/// Multi-aggregator layer, any aggregator list.
pub fn egc_m_backward<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    p: &EgcParams<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    p.validate()?;
    let c = &p.config;
    check_input(g.num_nodes(), x, c.in_dim)?;
    check_upstream(dy, g.num_nodes(), c.out_dim)?;
    let z = x.matmul_t(&p.stacked_theta())?;
    let r = kernels::aggregate_all(g, &z, &c.aggs, opts)?;
    let (pre, w) = affine_weights(x, &p.phi, &p.bias, c.activation, c.bases)?;
    let refs: Vec<&Matrix<T>> = r.iter().collect();
    let (dw, dr) = combine_backward(&w, &refs, dy, c.heads, c.bases);
    let dz = kernels::scatter_rows(g, z.cols(), opts, |i, partial| {
        for (a, &agg) in c.aggs.iter().enumerate() {
            route_aggregate(g, &z, i, agg, dr[a].row(i), partial);
        }
    });
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let d_theta = basis_backward(x, &p.theta, &dz, &mut dx)?;
    let (d_phi, d_bias) = weighting_backward(x, &p.phi, &pre, &w, dw, c.activation, c.bases, &mut dx)?;
    Ok(GradBundle {
        d_theta,
        d_phi: vec![d_phi],
        d_bias: vec![d_bias],
        d_x: dx,
    })
}

/// Add `∂agg(z_N(i)) / ∂z_j · up` into `partial[j]` for every neighbor `j` of `i`.
fn route_aggregate<T: Real>(g: &CsrGraph, z: &Matrix<T>, i: usize, agg: Aggregator, up: &[T], partial: &mut Matrix<T>) {
    let range = g.row_range(i);
    let cols = &g.col_idx()[range.clone()];
    let n = cols.len();
    let inv = T::one() / T::of(n as f64);
    match agg {
        Aggregator::Sum => {
            for &j in cols {
                axpy(partial.row_mut(j as usize), T::one(), up);
            }
        }
        Aggregator::Mean => {
            for &j in cols {
                axpy(partial.row_mut(j as usize), inv, up);
            }
        }
        Aggregator::SymNorm => {
            for e in range {
                let j = g.col_idx()[e] as usize;
                axpy(partial.row_mut(j), T::of(g.edge_weight(e) as f64), up);
            }
        }
        Aggregator::Max | Aggregator::Min => {
            let better = |v: T, best: T| if agg == Aggregator::Max { v > best } else { v < best };
            for (t, &u) in up.iter().enumerate() {
                let mut arg = cols[0] as usize;
                let mut best = z.get(arg, t);
                for &j in &cols[1..] {
                    let v = z.get(j as usize, t);
                    if better(v, best) {
                        best = v;
                        arg = j as usize;
                    }
                }
                partial.row_mut(arg)[t] += u;
            }
        }
        Aggregator::Std | Aggregator::Var => {
            let width = z.cols();
            let mut sum = vec![T::zero(); width];
            let mut sq = vec![T::zero(); width];
            for &j in cols {
                for (t, &v) in z.row(j as usize).iter().enumerate() {
                    sum[t] += v;
                    sq[t] += v * v;
                }
            }
            // scale[t] multiplies (z_j − mean) in the neighbor gradient
            let two = T::of(2.0);
            let mut mean = vec![T::zero(); width];
            let mut scale = vec![T::zero(); width];
            for t in 0..width {
                mean[t] = sum[t] * inv;
                let raw = sq[t] * inv - mean[t] * mean[t];
                if raw > T::zero() {
                    scale[t] = if agg == Aggregator::Var {
                        up[t] * two * inv
                    } else {
                        up[t] * inv / (raw + T::of(kernels::STD_EPS)).sqrt()
                    };
                }
            }
            for &j in cols {
                let zr = z.row(j as usize);
                let o = partial.row_mut(j as usize);
                for t in 0..width {
                    o[t] += scale[t] * (zr[t] - mean[t]);
                }
            }
        }
    }
}

/// `y = spmm(g, x) Θᵀ`; the bundle holds `dΘ` as its only tensor.
pub fn gcn_backward<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    theta: &Matrix<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    if g.coeff().is_none() {
        return Err(EgcError::MissingCoefficients);
    }
    check_input(g.num_nodes(), x, theta.cols())?;
    check_upstream(dy, g.num_nodes(), theta.rows())?;
    let prop = kernels::spmm_with(g, x, opts)?.0;
    let d_prop = dy.matmul(theta)?;
    Ok(GradBundle {
        d_theta: vec![dy.t_matmul(&prop)?],
        d_phi: Vec::new(),
        d_bias: Vec::new(),
        d_x: kernels::spmm_transpose(g, &d_prop, opts)?,
    })
}

/// GIN with a linear `f`; the bundle holds the weight as its basis tensor
/// and the bias as its only bias, matching the [`Linear`] tensor order.
pub fn gin_backward<T: Real>(
    g: &CsrGraph,
    x: &Matrix<T>,
    eps: T,
    f: &Linear<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    f.validate()?;
    check_input(g.num_nodes(), x, f.in_dim())?;
    check_upstream(dy, g.num_nodes(), f.out_dim())?;
    let mut h = crate::layers::neighbor_sum(g, x);
    for i in 0..h.rows() {
        axpy(h.row_mut(i), T::one() + eps, x.row(i));
    }
    let dh = dy.matmul(&f.weight)?;
    let mut dx = kernels::scatter_rows(g, x.cols(), opts, |i, partial| {
        for &j in g.neighbors(i) {
            if j as usize != i {
                axpy(partial.row_mut(j as usize), T::one(), dh.row(i));
            }
        }
    });
    for i in 0..dx.rows() {
        axpy(dx.row_mut(i), T::one() + eps, dh.row(i));
    }
    Ok(GradBundle {
        d_theta: vec![dy.t_matmul(&h)?],
        d_phi: Vec::new(),
        d_bias: vec![col_sums(dy)],
        d_x: dx,
    })
}

/// Heterogeneous layer. `d_phi` and `d_bias` list the node-type maps first,
/// then the relation maps.
pub fn r_egc_backward<T: Real>(
    g: &NodeTypedGraph,
    x: &Matrix<T>,
    p: &ReggcParams<T>,
    dy: &Matrix<T>,
    opts: &ExecOptions,
) -> Result<GradBundle<T>> {
    check_typed(g, x, p)?;
    let c = &p.config;
    let n = g.num_nodes();
    check_upstream(dy, n, c.out_dim)?;
    let z = x.matmul_t(&stack_rows(&p.theta))?;
    let mut dx = Matrix::zeros(n, x.cols());

    let (pre_s, w_s) = type_weights(g, x, p)?;
    let (dws, dzs) = combine_backward(&w_s, &[&z], dy, c.heads, c.bases);
    let mut dz = dzs.into_iter().next().unwrap();
    let mut d_type_phi: Vec<Matrix<T>> = p.type_phi.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut d_type_bias = vec![vec![T::zero(); c.weight_cols()]; c.num_node_types];
    for i in 0..n {
        let t = g.node_type()[i] as usize;
        let mut dpre = dws.row(i).to_vec();
        c.activation.backward(pre_s.row(i), w_s.row(i), &mut dpre, c.bases);
        let xi = x.row(i);
        for (k, &gk) in dpre.iter().enumerate() {
            axpy(d_type_phi[t].row_mut(k), gk, xi);
            d_type_bias[t][k] += gk;
            axpy(dx.row_mut(i), gk, p.type_phi[t].row(k));
        }
    }

    let mut d_rel_phi = Vec::with_capacity(c.num_relations);
    let mut d_rel_bias = Vec::with_capacity(c.num_relations);
    for (r, rel) in g.relations().iter().enumerate() {
        let m = relation_mean(rel, &z);
        let (pre, w) = affine_weights(x, &p.rel_phi[r], &p.rel_bias[r], c.activation, c.bases)?;
        let (dw, dm) = combine_backward(&w, &[&m], dy, c.heads, c.bases);
        let dm = &dm[0];
        let routed = kernels::scatter_rows(rel, z.cols(), opts, |i, partial| {
            let nb = rel.neighbors(i);
            if nb.is_empty() {
                return;
            }
            let inv = T::one() / T::of(nb.len() as f64);
            for &j in nb {
                axpy(partial.row_mut(j as usize), inv, dm.row(i));
            }
        });
        dz.add_assign(&routed);
        let (dphi, dbias) = weighting_backward(x, &p.rel_phi[r], &pre, &w, dw, c.activation, c.bases, &mut dx)?;
        d_rel_phi.push(dphi);
        d_rel_bias.push(dbias);
    }

    let d_theta = basis_backward(x, &p.theta, &dz, &mut dx)?;
    d_type_phi.extend(d_rel_phi);
    d_type_bias.extend(d_rel_bias);
    Ok(GradBundle {
        d_theta,
        d_phi: d_type_phi,
        d_bias: d_type_bias,
        d_x: dx,
    })
}
