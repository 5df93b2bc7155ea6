#![allow(dead_code)]

use std::sync::Arc;

use mechlearn::model::CouplingFunction;
use mechlearn::{
    LinearDynamics, Matrix, QuadraticCoupling, QuadraticUtility, SystemInstance, Utility, Vector, ZeroCoupling,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform_vector<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(lo..=hi))
}

/// Symmetric positive definite with eigenvalues in `[lo, hi]`.
pub fn spd<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Matrix {
    let q = gaussian_matrix(rng, d, d).qr().q();
    let m = &q * Matrix::from_diagonal(&uniform_vector(rng, d, lo, hi)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Well-conditioned invertible matrix `I + 0.3·G`, redrawn until σ_min ≥ 0.3.
pub fn invertible<R: Rng>(rng: &mut R, d: usize) -> Matrix {
    loop {
        let m = Matrix::identity(d, d) + gaussian_matrix(rng, d, d) * 0.3;
        if m.clone().svd(false, false).singular_values.min() >= 0.3 {
            return m;
        }
    }
}

pub struct Agent {
    pub utility: QuadraticUtility,
    pub dynamics: LinearDynamics,
}

pub fn random_agent<R: Rng>(rng: &mut R, d: usize) -> Agent {
    let dynamics = LinearDynamics::deterministic(invertible(rng, d), invertible(rng, d)).unwrap();
    let utility = QuadraticUtility::new(spd(rng, d, 0.5, 2.0), spd(rng, d, 0.5, 2.0), uniform_vector(rng, d, -1.0, 1.0))
        .unwrap();
    Agent { utility, dynamics }
}

pub fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Scalar pair `U_n = -(u_n - a_n)²`, `a = (1, -1)`, `G = -ε(u₁ - u₂)²`.
pub fn canonical_pair(eps: f64) -> SystemInstance {
    let dynamics = LinearDynamics::deterministic(scalar(1.0), scalar(1.0)).unwrap();
    let utilities: Vec<Utility> = [1.0, -1.0]
        .iter()
        .map(|&a| QuadraticUtility::new(scalar(1.0), scalar(0.0), Vector::from_element(1, a)).unwrap().into())
        .collect();
    let coupling: Arc<dyn CouplingFunction> = if eps == 0.0 {
        Arc::new(ZeroCoupling)
    } else {
        Arc::new(QuadraticCoupling::pairwise_spring(2, 1, eps))
    };
    SystemInstance::new(vec![dynamics.clone(), dynamics], utilities, coupling, vec![Vector::zeros(1); 2]).unwrap()
}

/// `N` random quadratic agents with a pairwise spring coupling of strength `s`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, d: usize, s: f64) -> SystemInstance {
    let mut dynamics = Vec::new();
    let mut utilities: Vec<Utility> = Vec::new();
    let mut states = Vec::new();
    for _ in 0..n {
        let a = random_agent(rng, d);
        dynamics.push(a.dynamics);
        utilities.push(a.utility.into());
        states.push(uniform_vector(rng, d, -1.0, 1.0));
    }
    let coupling: Arc<dyn CouplingFunction> =
        if s == 0.0 { Arc::new(ZeroCoupling) } else { Arc::new(QuadraticCoupling::pairwise_spring(n, d, s)) };
    SystemInstance::new(dynamics, utilities, coupling, states).unwrap()
}

pub fn rel_err(estimate: &Matrix, truth: &Matrix) -> f64 {
    (estimate - truth).norm() / truth.norm().max(1e-300)
}
