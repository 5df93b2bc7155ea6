//! Reference solutions used to check the iterative schemes.
//!
//! Test instances share one additive coupling term, so they are potential
//! games: the welfare maximizer is also a Nash point and the oracle welfare
//! is the value every converging play mode should reach.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::ActionBox;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vector};
use crate::mechanism::{social_welfare, SystemInstance};
use crate::solver::{newton_root, NewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedForm,
    Grid,
    NewtonMultistart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub u_star: Vector,
    pub welfare: f64,
    pub method: OracleMethod,
    /// Set when the closed form was not usable and a fallback ran instead.
    pub warning: Option<String>,
}

const GRID_DIVISIONS: usize = 200;
const MULTISTARTS: usize = 32;

fn polish_options() -> NewtonOptions {
    NewtonOptions { tol: 1e-11, max_iter: 100, shrink: 0.5 }
}

/// Welfare maximizer of `sys`.
///
/// Quadratic utilities with quadratic coupling are solved in closed form.
/// Otherwise a dense grid (pitch `width/200`) is scanned when the joint action
/// has at most three coordinates and the box is bounded, followed by a Newton
/// polish; larger problems use 32 Newton starts.
pub fn joint_welfare_opt(sys: &SystemInstance) -> Result<OracleResult> {
    let quadratic = sys.utilities().iter().all(|u| u.as_quadratic().is_some())
        && (sys.coupling().is_zero() || sys.coupling().as_quadratic().is_some());
    let mut warning = None;
    if quadratic {
        let zero = Vector::zeros(sys.joint_dim());
        let h = sys.welfare_hessian(&zero);
        let sym = (&h + h.transpose()) * 0.5;
        let max_eig = sym.symmetric_eigenvalues().max();
        if max_eig < 0.0 {
            let u_star = h.lu().solve(&(-sys.reward_gradient(&zero))).ok_or(Error::Singular("welfare Hessian"))?;
            let inside = sys.action_box().is_none_or(|b| b.contains(&u_star));
            if inside {
                let welfare = social_welfare(sys, &u_star)?;
                return Ok(OracleResult { u_star, welfare, method: OracleMethod::ClosedForm, warning: None });
            }
            warning = Some("closed-form optimum lies outside the action box".to_string());
        } else {
            warning = Some(format!("joint welfare Hessian is not negative definite (λ_max = {max_eig:.3e})"));
        }
    }
    let mut result = match sys.action_box() {
        Some(b) if b.is_bounded() && sys.joint_dim() <= 3 => grid_welfare_opt(sys, b, GRID_DIVISIONS)?,
        _ => multistart_welfare_opt(sys, MULTISTARTS, 0)?,
    };
    result.warning = warning;
    Ok(result)
}

/// Dense grid maximization of the welfare over `bounds`, polished by Newton
/// when the polished point stays feasible and is no worse.
pub fn grid_welfare_opt(sys: &SystemInstance, bounds: &ActionBox, divisions: usize) -> Result<OracleResult> {
    if !bounds.is_bounded() {
        return Err(Error::InvalidParameter("grid search needs a bounded box".into()));
    }
    let dim = bounds.dim();
    if dim != sys.joint_dim() {
        return Err(Error::dims("grid box", sys.joint_dim(), dim));
    }
    if divisions == 0 || (divisions as f64 + 1.0).powi(dim as i32) > 2e7 {
        return Err(Error::InvalidParameter("grid is empty or too large".into()));
    }
    let point = |index: &[usize]| {
        Vector::from_fn(dim, |i, _| {
            let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
            lo + (hi - lo) * index[i] as f64 / divisions as f64
        })
    };
    let mut index = vec![0usize; dim];
    let mut best = (f64::NEG_INFINITY, vec![0usize; dim]);
    'scan: loop {
        let w = social_welfare(sys, &point(&index))?;
        if w > best.0 {
            best = (w, index.clone());
        }
        for axis in 0..dim {
            index[axis] += 1;
            if index[axis] <= divisions {
                continue 'scan;
            }
            index[axis] = 0;
        }
        break;
    }
    let grid_point = point(&best.1);
    let mut out = OracleResult { u_star: grid_point.clone(), welfare: best.0, method: OracleMethod::Grid, warning: None };
    let grad = |u: &Vector| sys.reward_gradient(u);
    let hess = |u: &Vector| sys.welfare_hessian(u);
    if let Ok(polished) = newton_root(&grid_point, &grad, &hess, polish_options()) {
        if bounds.contains(&polished) {
            let w = social_welfare(sys, &polished)?;
            if w >= out.welfare {
                out.u_star = polished;
                out.welfare = w;
            }
        }
    }
    Ok(out)
}

/// Best of `starts` Newton solves of the welfare stationarity system.
///
/// Starts are drawn from the action box, or from `[-1, 1]` per coordinate
/// when none is configured.
pub fn multistart_welfare_opt(sys: &SystemInstance, starts: usize, seed: u64) -> Result<OracleResult> {
    let bounds = match sys.action_box() {
        Some(b) if b.is_bounded() => b.clone(),
        _ => ActionBox::uniform(sys.joint_dim(), -1.0, 1.0)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = |u: &Vector| sys.reward_gradient(u);
    let hess = |u: &Vector| sys.welfare_hessian(u);
    let mut best: Option<(f64, Vector)> = None;
    for _ in 0..starts.max(1) {
        let start = bounds.sample(&mut rng);
        let Ok(u) = newton_root(&start, &grad, &hess, polish_options()) else { continue };
        let h = sys.welfare_hessian(&u);
        let curvature = ((&h + h.transpose()) * 0.5).symmetric_eigenvalues().max();
        if curvature > 1e-9 {
            continue;
        }
        let w = social_welfare(sys, &u)?;
        if best.as_ref().is_none_or(|(bw, _)| w > *bw) {
            best = Some((w, u));
        }
    }
    let (welfare, u_star) =
        best.ok_or_else(|| Error::Degenerate("no Newton start reached a local welfare maximum".into()))?;
    Ok(OracleResult { u_star, welfare, method: OracleMethod::NewtonMultistart, warning: None })
}

/// Central-difference gradient with step `h` per coordinate.
pub fn fd_gradient(f: &dyn Fn(&Vector) -> f64, point: &Vector, h: f64) -> Result<Vector> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("difference step must be positive, got {h}")));
    }
    let mut probe = point.clone();
    let mut out = Vector::zeros(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        out[i] = (plus - minus) / (2.0 * h);
    }
    debug_assert!(all_finite(out.as_slice()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{CouplingFunction, LinearDynamics, QuadraticCoupling, QuadraticUtility, ZeroCoupling};

    fn pair(eps: f64) -> SystemInstance {
        let one = Matrix::from_element(1, 1, 1.0);
        let dynamics = LinearDynamics::deterministic(one.clone(), one.clone()).unwrap();
        let utilities = [1.0, -1.0]
            .iter()
            .map(|&a| QuadraticUtility::new(one.clone(), Matrix::zeros(1, 1), Vector::from_element(1, a)).unwrap().into())
            .collect();
        let coupling: Arc<dyn CouplingFunction> = if eps == 0.0 {
            Arc::new(ZeroCoupling)
        } else {
            Arc::new(QuadraticCoupling::pairwise_spring(2, 1, eps))
        };
        SystemInstance::new(vec![dynamics.clone(), dynamics], utilities, coupling, vec![Vector::zeros(1); 2]).unwrap()
    }

    #[test]
    fn decoupled_optimum_is_individual() {
        let r = joint_welfare_opt(&pair(0.0)).unwrap();
        assert_eq!(r.method, OracleMethod::ClosedForm);
        assert!((r.u_star[0] - 1.0).abs() < 1e-14 && (r.u_star[1] + 1.0).abs() < 1e-14);
        assert!(r.welfare.abs() < 1e-14);
    }

    #[test]
    fn weak_pair_closed_form_matches_hand_solution_and_grid() {
        // Stationarity: u₁ - 1 = -ε(u₁ - u₂), u₂ + 1 = ε(u₁ - u₂) gives u₁ = 1/(1 + 2ε).
        let sys = pair(0.1);
        let r = joint_welfare_opt(&sys).unwrap();
        assert!((r.u_star[0] - 1.0 / 1.2).abs() < 1e-14);
        assert!((r.u_star[1] + 1.0 / 1.2).abs() < 1e-14);
        let bounds = ActionBox::uniform(2, -2.0, 2.0).unwrap();
        let grid = grid_welfare_opt(&sys, &bounds, 200).unwrap();
        assert!((&grid.u_star - &r.u_star).amax() <= 2.0 * 4.0 / 200.0);
        assert!((social_welfare(&sys, &r.u_star).unwrap() - r.welfare).abs() < 1e-10);
    }

    #[test]
    fn fd_gradient_examples() {
        let sq = |u: &Vector| u.norm_squared();
        let g = fd_gradient(&sq, &Vector::from_vec(vec![1.0, 0.0]), 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && g[1].abs() < 1e-8);
        let c = fd_gradient(&|_: &Vector| 4.0, &Vector::zeros(3), 1e-5).unwrap();
        assert_eq!(c, Vector::zeros(3));
        assert!(fd_gradient(&|_: &Vector| f64::NAN, &Vector::zeros(1), 1e-5).is_err());
    }
}
