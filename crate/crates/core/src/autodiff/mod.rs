//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The [`Tape`] records primitive ops eagerly. Gradients come either from a
//! numeric reverse sweep ([`Tape::backward`]) or from a reverse sweep that is
//! itself recorded as tape nodes ([`Tape::grad_graph`]), which is how input
//! gradients stay differentiable for gradient penalties.

mod tape;
mod tensor;

pub use tape::{Gradients, LeafKind, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::softplus;

use crate::error::{Error, Result};

/// Default finite-difference step for a Hessian-vector product at `params`:
/// `sqrt(2⁻⁵²)·(1 + ‖ψ‖)`.
pub fn hvp_step(params: &[f64]) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + norm(params))
}

/// Hessian-vector product by central differences of the gradient:
/// `(∇L(ψ + ε v̂) − ∇L(ψ − ε v̂)) / (2ε) · ‖v‖` with `v̂ = v/‖v‖`.
pub fn hvp_findiff<F>(mut grad: F, params: &[f64], v: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if params.len() != v.len() {
        return Err(Error::shape("hvp_findiff", format!("{} params vs {} direction", params.len(), v.len())));
    }
    if !(eps > 0.0) {
        return Err(Error::usage(format!("hvp step must be positive, got {eps}")));
    }
    let vnorm = norm(v);
    if vnorm == 0.0 {
        return Err(Error::usage("hvp direction is the zero vector"));
    }
    let plus: Vec<f64> = params.iter().zip(v).map(|(p, d)| p + eps * d / vnorm).collect();
    let minus: Vec<f64> = params.iter().zip(v).map(|(p, d)| p - eps * d / vnorm).collect();
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    if gp.len() != params.len() || gm.len() != params.len() {
        return Err(Error::shape("hvp_findiff", "gradient length differs from parameter length"));
    }
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps) * vnorm).collect())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
