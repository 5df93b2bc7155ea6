//! Damped Newton iteration for stationary points of smooth payoffs.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix, Vector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub shrink: f64,
}

/// Finds `x` with `‖grad(x)‖∞ ≤ tol`, starting from `start`.
///
/// Steps solve `H·s = -g`; each step is backtracked until the gradient norm
/// decreases. When no backtracked step improves the residual the smallest one is
/// taken anyway so that the iteration can escape flat regions.
pub(crate) fn newton_root(
    start: &Vector,
    grad: &dyn Fn(&Vector) -> Vector,
    hess: &dyn Fn(&Vector) -> Matrix,
    opts: NewtonOptions,
) -> Result<Vector> {
    let mut x = start.clone();
    let mut g = grad(&x);
    if !all_finite(g.as_slice()) {
        return Err(Error::NonFinite("payoff gradient"));
    }
    for iteration in 0..opts.max_iter {
        let residual = g.amax();
        if residual <= opts.tol {
            return Ok(x);
        }
        let h = hess(&x);
        let step = h.lu().solve(&(-&g)).ok_or(Error::Singular("payoff Hessian"))?;
        if !all_finite(step.as_slice()) {
            return Err(Error::Singular("payoff Hessian"));
        }
        let norm0 = g.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-8 {
            let trial = &x + &step * alpha;
            let gt = grad(&trial);
            if all_finite(gt.as_slice()) && gt.norm() < (1.0 - 1e-4 * alpha) * norm0 {
                accepted = Some((trial, gt));
                break;
            }
            alpha *= opts.shrink;
        }
        let (next, gn) = match accepted {
            Some(pair) => pair,
            None => {
                let trial = &x + &step * alpha;
                let gt = grad(&trial);
                if !all_finite(gt.as_slice()) {
                    return Err(Error::NewtonFailure { iterations: iteration + 1, residual, last: x.as_slice().to_vec() });
                }
                (trial, gt)
            }
        };
        x = next;
        g = gn;
    }
    let residual = g.amax();
    if residual <= opts.tol {
        Ok(x)
    } else {
        Err(Error::NewtonFailure { iterations: opts.max_iter, residual, last: x.as_slice().to_vec() })
    }
}
