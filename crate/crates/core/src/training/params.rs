use crate::error::{EgcError, Result};
use crate::layers::{EgcModel, EgcParams, Linear, ReggcParams};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Flat view of a parameter set as an ordered list of tensors. Gradients
/// for the set use the same order.
pub trait Params<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl<T: Real> Params<T> for Vec<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

impl<T: Real> Params<T> for Matrix<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

/// Bases, then `Φ`, then the bias.
impl<T: Real> Params<T> for EgcParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.theta.iter().map(Matrix::as_slice).collect();
        v.push(self.phi.as_slice());
        v.push(&self.bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.theta.iter_mut().map(Matrix::as_mut_slice).collect();
        v.push(self.phi.as_mut_slice());
        v.push(&mut self.bias);
        v
    }
}

/// Weight, then bias.
impl<T: Real> Params<T> for Linear<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Bases, node-type maps, relation maps, node-type biases, relation biases.
impl<T: Real> Params<T> for ReggcParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.theta.iter().map(Matrix::as_slice).collect();
        v.extend(self.type_phi.iter().map(Matrix::as_slice));
        v.extend(self.rel_phi.iter().map(Matrix::as_slice));
        v.extend(self.type_bias.iter().map(Vec::as_slice));
        v.extend(self.rel_bias.iter().map(Vec::as_slice));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.theta.iter_mut().map(Matrix::as_mut_slice).collect();
        v.extend(self.type_phi.iter_mut().map(Matrix::as_mut_slice));
        v.extend(self.rel_phi.iter_mut().map(Matrix::as_mut_slice));
        v.extend(self.type_bias.iter_mut().map(Vec::as_mut_slice));
        v.extend(self.rel_bias.iter_mut().map(Vec::as_mut_slice));
        v
    }
}

/// Every layer in order, then the readout.
impl<T: Real> Params<T> for EgcModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        if let Some(r) = &self.readout {
            v.extend(r.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        if let Some(r) = &mut self.readout {
            v.extend(r.tensors_mut());
        }
        v
    }
}

/// Gradients of one layer application.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle<T = f32> {
    pub d_theta: Vec<Matrix<T>>,
    pub d_phi: Vec<Matrix<T>>,
    pub d_bias: Vec<Vec<T>>,
    pub d_x: Matrix<T>,
}

impl<T: Real> GradBundle<T> {
    /// Parameter gradients in the order of the matching [`Params`] impl.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.d_theta
            .iter()
            .map(Matrix::as_slice)
            .chain(self.d_phi.iter().map(Matrix::as_slice))
            .chain(self.d_bias.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn to_vecs(&self) -> Vec<Vec<T>> {
        self.tensors().into_iter().map(<[T]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) && self.d_x.is_finite()
    }
}

/// Central differences `(L(θ + h) − L(θ − h)) / 2h` for every scalar of
/// `params`, in [`Params::tensors`] order.
pub fn finite_diff_grad<P, F>(params: &P, h: f64, mut loss: F) -> Result<Vec<Vec<f64>>>
where
    P: Params<f64> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(EgcError::config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut eval = |p: &P| -> Result<f64> {
        let l = loss(p)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(EgcError::NonFinite("loss"))
        }
    };
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (t, &len) in shapes.iter().enumerate() {
        let mut grad = Vec::with_capacity(len);
        for k in 0..len {
            let orig = probe.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + h;
            let hi = eval(&probe)?;
            probe.tensors_mut()[t][k] = orig - h;
            let lo = eval(&probe)?;
            probe.tensors_mut()[t][k] = orig;
            grad.push((hi - lo) / (2.0 * h));
        }
        out.push(grad);
    }
    Ok(out)
}
