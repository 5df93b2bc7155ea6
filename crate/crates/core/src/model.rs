//! Ground-truth world: subsystem dynamics, private utilities and the shared
//! coupling term.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, fd_jacobian, min_eigenvalue, slot, stack, symmetry_error, Matrix, Vector};

/// State `x_n(t)` of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemState(Vector);

impl SubsystemState {
    pub fn new(x: Vector) -> Result<Self> {
        if !all_finite(x.as_slice()) {
            return Err(Error::NonFinite("subsystem state"));
        }
        Ok(Self(x))
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }
}

/// Control action `u_n(t)`, optionally checked against a box bound `‖u‖∞ ≤ u_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction(Vector);

impl ControlAction {
    pub fn new(u: Vector) -> Result<Self> {
        if !all_finite(u.as_slice()) {
            return Err(Error::NonFinite("control action"));
        }
        Ok(Self(u))
    }

    pub fn bounded(u: Vector, u_max: f64) -> Result<Self> {
        let action = Self::new(u)?;
        if action.0.amax() > u_max {
            return Err(Error::InvalidParameter(format!(
                "action magnitude {} exceeds bound {u_max}",
                action.0.amax()
            )));
        }
        Ok(action)
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }
}

/// `x(t+1) = A·x(t) + B·u(t) + w(t)` with `w ~ N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    a: Matrix,
    b: Matrix,
    noise_cov: Matrix,
}

impl LinearDynamics {
    pub fn new(a: Matrix, b: Matrix, noise_cov: Matrix) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        for (name, m) in [("A", &a), ("B", &b), ("noise covariance", &noise_cov)] {
            if m.shape() != (d, d) {
                return Err(Error::InvalidParameter(format!("{name} must be {d}x{d}, got {:?}", m.shape())));
            }
            if !all_finite(m.as_slice()) {
                return Err(Error::NonFinite("dynamics matrix"));
            }
        }
        if symmetry_error(&noise_cov) > 1e-12 || min_eigenvalue(&noise_cov) < -1e-12 {
            return Err(Error::InvalidParameter("noise covariance must be symmetric PSD".into()));
        }
        Ok(Self { a, b, noise_cov })
    }

    /// Noise-free dynamics.
    pub fn deterministic(a: Matrix, b: Matrix) -> Result<Self> {
        let d = a.nrows();
        Self::new(a, b, Matrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    /// Condition number of `B` (infinite when singular).
    pub fn b_condition(&self) -> f64 {
        let sv = self.b.clone().svd(false, false).singular_values;
        let min = sv.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            sv.max() / min
        }
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        crate::linalg::spectral_radius(&self.a)
    }

    /// `A·x + B·u` without checks.
    pub fn predict(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let d = self.dim();
        let eig = self.noise_cov.clone().symmetric_eigen();
        let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scaled = Vector::from_fn(d, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
        &eig.eigenvectors * scaled
    }
}

/// One step of the linear dynamics, `A·x + B·u + w` (`w = 0` when absent).
pub fn step(
    dynamics: &LinearDynamics,
    x: &SubsystemState,
    u: &ControlAction,
    w: Option<&Vector>,
) -> Result<SubsystemState> {
    let d = dynamics.dim();
    if x.0.len() != d {
        return Err(Error::dims("step: state", d, x.0.len()));
    }
    if u.0.len() != d {
        return Err(Error::dims("step: action", d, u.0.len()));
    }
    let mut next = dynamics.predict(&x.0, &u.0);
    if let Some(w) = w {
        if w.len() != d {
            return Err(Error::dims("step: noise", d, w.len()));
        }
        if !all_finite(w.as_slice()) {
            return Err(Error::NonFinite("noise sample"));
        }
        next += w;
    }
    SubsystemState::new(next)
}

/// `U(x', u) = -(x' - x0)ᵀQ(x' - x0) - uᵀRu`.
///
/// `Q` must be symmetric positive definite. `R` must be symmetric positive
/// semidefinite; strict concavity in `u` then comes from `BᵀQB + R` with `B`
/// invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticUtility {
    q: Matrix,
    r: Matrix,
    x0: Vector,
}

impl QuadraticUtility {
    pub fn new(q: Matrix, r: Matrix, x0: Vector) -> Result<Self> {
        let d = x0.len();
        if q.shape() != (d, d) || r.shape() != (d, d) {
            return Err(Error::InvalidParameter(format!(
                "Q and R must be {d}x{d}, got {:?} and {:?}",
                q.shape(),
                r.shape()
            )));
        }
        if !all_finite(q.as_slice()) || !all_finite(r.as_slice()) || !all_finite(x0.as_slice()) {
            return Err(Error::NonFinite("quadratic utility"));
        }
        if symmetry_error(&q) > 1e-12 || symmetry_error(&r) > 1e-12 {
            return Err(Error::InvalidParameter("Q and R must be symmetric".into()));
        }
        if min_eigenvalue(&q) <= 0.0 {
            return Err(Error::InvalidParameter("Q must be positive definite".into()));
        }
        if min_eigenvalue(&r) < -1e-12 {
            return Err(Error::InvalidParameter("R must be positive semidefinite".into()));
        }
        Ok(Self { q, r, x0 })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn value(&self, x_next: &Vector, u: &Vector) -> f64 {
        let e = x_next - &self.x0;
        -(e.dot(&(&self.q * &e))) - u.dot(&(&self.r * u))
    }

    /// Partial gradients `(∂U/∂x', ∂U/∂u)`.
    pub fn partials(&self, x_next: &Vector, u: &Vector) -> (Vector, Vector) {
        (-2.0 * (&self.q * (x_next - &self.x0)), -2.0 * (&self.r * u))
    }

    /// Total derivative through the dynamics: `-2BᵀQ(Ax + Bu - x0) - 2Ru`.
    pub fn gradient_u(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Vector {
        let x_next = dynamics.predict(x, u);
        let (gx, gu) = self.partials(&x_next, u);
        dynamics.b().transpose() * gx + gu
    }

    /// `-2(BᵀQB + R)`, constant in `(x, u)`.
    pub fn hessian_u(&self, dynamics: &LinearDynamics) -> Matrix {
        let b = dynamics.b();
        -2.0 * (b.transpose() * &self.q * b + &self.r)
    }
}

/// Evaluates a quadratic utility with dimension checks.
pub fn eval_quadratic(utility: &QuadraticUtility, x_next: &Vector, u: &Vector) -> Result<f64> {
    let d = utility.dim();
    if x_next.len() != d {
        return Err(Error::dims("eval_quadratic: state", d, x_next.len()));
    }
    if u.len() != d {
        return Err(Error::dims("eval_quadratic: action", d, u.len()));
    }
    Ok(utility.value(x_next, u))
}

/// `∇_u U(Ax + Bu, u)` with dimension checks.
pub fn grad_u_quadratic(
    utility: &QuadraticUtility,
    dynamics: &LinearDynamics,
    x: &Vector,
    u: &Vector,
) -> Result<Vector> {
    let d = utility.dim();
    if dynamics.dim() != d {
        return Err(Error::dims("grad_u_quadratic: dynamics", d, dynamics.dim()));
    }
    if x.len() != d || u.len() != d {
        return Err(Error::dims("grad_u_quadratic: vectors", d, x.len().max(u.len())));
    }
    Ok(utility.gradient_u(dynamics, x, u))
}

type ValueFn = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;
type PartialsFn = Arc<dyn Fn(&Vector, &Vector) -> (Vector, Vector) + Send + Sync>;

/// `ln cosh(a)` without overflow for large `|a|`.
fn log_cosh(a: f64) -> f64 {
    let m = a.abs();
    m + (-2.0 * m).exp().ln_1p() - std::f64::consts::LN_2
}

/// A general twice-differentiable utility `U(x', u)`.
///
/// `partials` returns `(∂U/∂x', ∂U/∂u)`; the total action gradient is
/// `Bᵀ·∂U/∂x' + ∂U/∂u`. Without it, central differences are used.
#[derive(Clone)]
pub struct SmoothUtility {
    label: String,
    value: ValueFn,
    partials: Option<PartialsFn>,
}

impl fmt::Debug for SmoothUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothUtility")
            .field("label", &self.label)
            .field("analytic_gradient", &self.partials.is_some())
            .finish()
    }
}

impl SmoothUtility {
    pub fn new<V>(label: impl Into<String>, value: V) -> Self
    where
        V: Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), value: Arc::new(value), partials: None }
    }

    pub fn with_partials<V, P>(label: impl Into<String>, value: V, partials: P) -> Self
    where
        V: Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        P: Fn(&Vector, &Vector) -> (Vector, Vector) + Send + Sync + 'static,
    {
        Self { label: label.into(), value: Arc::new(value), partials: Some(Arc::new(partials)) }
    }

    /// Quadratic utility plus cubic cross terms `-½ Σ_i x'_i uᵀK_i u`.
    ///
    /// The `K_i` are symmetrized. With all `K_i = 0` the action gradient
    /// reduces to the quadratic one.
    pub fn cross_term(base: QuadraticUtility, k: Vec<Matrix>) -> Result<Self> {
        let d = base.dim();
        if k.len() != d || k.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::InvalidParameter(format!("cross-term utility needs {d} matrices of size {d}x{d}")));
        }
        let k: Arc<Vec<Matrix>> = Arc::new(k.iter().map(|m| (m + m.transpose()) * 0.5).collect());
        let (b1, k1) = (base.clone(), Arc::clone(&k));
        let value = move |x: &Vector, u: &Vector| {
            let cross: f64 = k1.iter().enumerate().map(|(i, ki)| x[i] * u.dot(&(ki * u))).sum();
            b1.value(x, u) - 0.5 * cross
        };
        let partials = move |x: &Vector, u: &Vector| {
            let (mut gx, mut gu) = base.partials(x, u);
            for (i, ki) in k.iter().enumerate() {
                let kiu = ki * u;
                gx[i] -= 0.5 * u.dot(&kiu);
                gu -= kiu * x[i];
            }
            (gx, gu)
        };
        Ok(Self::with_partials("cross_term", value, partials))
    }

    /// `U(x', u) = U^x(x') + U^u(u)` from the two parts and their gradients.
    pub fn decomposable<FX, GX, FU, GU>(ux: FX, grad_ux: GX, uu: FU, grad_uu: GU) -> Self
    where
        FX: Fn(&Vector) -> f64 + Send + Sync + 'static,
        GX: Fn(&Vector) -> Vector + Send + Sync + 'static,
        FU: Fn(&Vector) -> f64 + Send + Sync + 'static,
        GU: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::with_partials(
            "decomposable",
            move |x: &Vector, u: &Vector| ux(x) + uu(u),
            move |x: &Vector, u: &Vector| (grad_ux(x), grad_uu(u)),
        )
    }

    /// Decomposable smooth utility `-Σ_k w_k ln cosh(x'_k - x0_k) - uᵀRu`.
    pub fn log_cosh(weights: Vector, x0: Vector, r: Matrix) -> Result<Self> {
        let d = x0.len();
        if weights.len() != d || r.shape() != (d, d) {
            return Err(Error::InvalidParameter("log-cosh utility dimensions disagree".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) || min_eigenvalue(&r) <= 0.0 {
            return Err(Error::InvalidParameter("log-cosh utility needs positive weights and PD R".into()));
        }
        let (w1, c1, w2, c2, r1, r2) = (weights.clone(), x0.clone(), weights, x0, r.clone(), r);
        Ok(Self::decomposable(
            move |x| -(0..x.len()).map(|k| w1[k] * log_cosh(x[k] - c1[k])).sum::<f64>(),
            move |x| Vector::from_fn(x.len(), |k, _| -w2[k] * (x[k] - c2[k]).tanh()),
            move |u| -u.dot(&(&r1 * u)),
            move |u| -2.0 * (&r2 * u),
        ))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.partials.is_some()
    }

    pub fn value(&self, x_next: &Vector, u: &Vector) -> f64 {
        (self.value)(x_next, u)
    }

    pub fn gradient_u(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Vector {
        match &self.partials {
            Some(p) => {
                let (gx, gu) = p(&dynamics.predict(x, u), u);
                dynamics.b().transpose() * gx + gu
            }
            None => self.fd_gradient_u(dynamics, x, u),
        }
    }

    fn fd_gradient_u(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Vector {
        let f = |v: &Vector| self.value(&dynamics.predict(x, v), v);
        let h = 1e-5;
        let mut probe = u.clone();
        Vector::from_fn(u.len(), |j, _| {
            let step = h * u[j].abs().max(1.0);
            probe[j] = u[j] + step;
            let plus = f(&probe);
            probe[j] = u[j] - step;
            let minus = f(&probe);
            probe[j] = u[j];
            (plus - minus) / (2.0 * step)
        })
    }

    /// Relative error of the analytic action gradient against central
    /// differences at one point (zero when no analytic gradient exists).
    pub fn gradient_error(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> f64 {
        if self.partials.is_none() {
            return 0.0;
        }
        let analytic = self.gradient_u(dynamics, x, u);
        let numeric = self.fd_gradient_u(dynamics, x, u);
        (&analytic - &numeric).norm() / analytic.norm().max(numeric.norm()).max(1e-12)
    }
}

/// A subsystem's private utility.
#[derive(Debug, Clone)]
pub enum Utility {
    Quadratic(QuadraticUtility),
    Smooth(SmoothUtility),
}

impl From<QuadraticUtility> for Utility {
    fn from(u: QuadraticUtility) -> Self {
        Utility::Quadratic(u)
    }
}

impl From<SmoothUtility> for Utility {
    fn from(u: SmoothUtility) -> Self {
        Utility::Smooth(u)
    }
}

impl Utility {
    pub fn value(&self, x_next: &Vector, u: &Vector) -> f64 {
        match self {
            Utility::Quadratic(q) => q.value(x_next, u),
            Utility::Smooth(s) => s.value(x_next, u),
        }
    }

    pub fn gradient_u(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Vector {
        match self {
            Utility::Quadratic(q) => q.gradient_u(dynamics, x, u),
            Utility::Smooth(s) => s.gradient_u(dynamics, x, u),
        }
    }

    pub fn hessian_u(&self, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Matrix {
        match self {
            Utility::Quadratic(q) => q.hessian_u(dynamics),
            Utility::Smooth(s) => {
                let g = |v: &Vector| s.gradient_u(dynamics, x, v);
                crate::linalg::symmetrize(&fd_jacobian(&g, u, 1e-5))
            }
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticUtility> {
        match self {
            Utility::Quadratic(q) => Some(q),
            Utility::Smooth(_) => None,
        }
    }
}

/// The shared regulation term `G` over the stacked next state (length `N·d`).
///
/// `G` is added to welfare and to every subsystem's fictitious-play reward.
pub trait CouplingFunction: fmt::Debug + Send + Sync {
    fn value(&self, joint: &Vector) -> f64;

    /// `∇_{x_n} G`, a vector of length `d`.
    fn gradient_n(&self, joint: &Vector, n: usize, d: usize) -> Vector;

    fn gradient(&self, joint: &Vector, d: usize) -> Vector {
        let parts: Vec<Vector> = (0..joint.len() / d).map(|n| self.gradient_n(joint, n, d)).collect();
        stack(&parts)
    }

    /// `∂²G / ∂x_n ∂x_m` (a `d×d` block). Defaults to differences of `gradient_n`.
    fn hessian_block(&self, joint: &Vector, n: usize, m: usize, d: usize) -> Matrix {
        let g = |v: &Vector| {
            let mut probe = joint.clone();
            probe.rows_mut(m * d, d).copy_from(v);
            self.gradient_n(&probe, n, d)
        };
        fd_jacobian(&g, &slot(joint, m, d), 1e-5)
    }

    fn hessian(&self, joint: &Vector, d: usize) -> Matrix {
        let total = joint.len();
        let agents = total / d;
        let mut h = Matrix::zeros(total, total);
        for n in 0..agents {
            for m in 0..agents {
                let block = self.hessian_block(joint, n, m, d);
                h.view_mut((n * d, m * d), (d, d)).copy_from(&block);
            }
        }
        crate::linalg::symmetrize(&h)
    }

    fn as_quadratic(&self) -> Option<&QuadraticCoupling> {
        None
    }

    fn is_zero(&self) -> bool {
        false
    }
}

/// `G ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCoupling;

impl CouplingFunction for ZeroCoupling {
    fn value(&self, _joint: &Vector) -> f64 {
        0.0
    }

    fn gradient_n(&self, _joint: &Vector, _n: usize, d: usize) -> Vector {
        Vector::zeros(d)
    }

    fn hessian_block(&self, _joint: &Vector, _n: usize, _m: usize, d: usize) -> Matrix {
        Matrix::zeros(d, d)
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `G(x) = ½ xᵀHx + gᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCoupling {
    h: Matrix,
    g: Vector,
}

impl QuadraticCoupling {
    pub fn new(h: Matrix, g: Vector) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != g.len() {
            return Err(Error::InvalidParameter("quadratic coupling dimensions disagree".into()));
        }
        if symmetry_error(&h) > 1e-12 {
            return Err(Error::InvalidParameter("quadratic coupling Hessian must be symmetric".into()));
        }
        Ok(Self { h, g })
    }

    /// `-s Σ_{n<m} ‖x_n - x_m‖²`: pulls subsystems toward each other.
    pub fn pairwise_spring(agents: usize, d: usize, strength: f64) -> Self {
        let laplacian = Matrix::from_fn(agents, agents, |i, j| if i == j { agents as f64 - 1.0 } else { -1.0 });
        let h = crate::linalg::kron(&laplacian, &Matrix::identity(d, d)) * (-2.0 * strength);
        Self { h, g: Vector::zeros(agents * d) }
    }

    /// `-s ‖Σ_n x_n‖²`: penalizes the aggregate state.
    pub fn aggregate(agents: usize, d: usize, strength: f64) -> Self {
        let ones = Matrix::from_element(agents, agents, 1.0);
        let h = crate::linalg::kron(&ones, &Matrix::identity(d, d)) * (-2.0 * strength);
        Self { h, g: Vector::zeros(agents * d) }
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn g(&self) -> &Vector {
        &self.g
    }

    /// Multiplies the coupling by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { h: &self.h * s, g: &self.g * s }
    }
}

impl CouplingFunction for QuadraticCoupling {
    fn value(&self, joint: &Vector) -> f64 {
        0.5 * joint.dot(&(&self.h * joint)) + self.g.dot(joint)
    }

    fn gradient_n(&self, joint: &Vector, n: usize, d: usize) -> Vector {
        self.h.rows(n * d, d) * joint + self.g.rows(n * d, d)
    }

    fn gradient(&self, joint: &Vector, _d: usize) -> Vector {
        &self.h * joint + &self.g
    }

    fn hessian_block(&self, _joint: &Vector, n: usize, m: usize, d: usize) -> Matrix {
        self.h.view((n * d, m * d), (d, d)).into_owned()
    }

    fn hessian(&self, _joint: &Vector, _d: usize) -> Matrix {
        self.h.clone()
    }

    fn as_quadratic(&self) -> Option<&QuadraticCoupling> {
        Some(self)
    }

    fn is_zero(&self) -> bool {
        self.h.iter().all(|&v| v == 0.0) && self.g.iter().all(|&v| v == 0.0)
    }
}

/// Soft collision barrier `G(x) = -β Σ_{n<m} softplus(r² - ‖x_n - x_m‖²)²`.
///
/// Positions are the full `d`-dimensional subsystem states. Twice
/// differentiable everywhere and negligible once pairs are separated by more
/// than the safety radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftplusBarrier {
    strength: f64,
    radius: f64,
    dim: usize,
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl SoftplusBarrier {
    pub fn new(strength: f64, radius: f64, dim: usize) -> Result<Self> {
        if !(strength >= 0.0) || !(radius > 0.0) || dim == 0 {
            return Err(Error::InvalidParameter("barrier needs strength ≥ 0, radius > 0 and d ≥ 1".into()));
        }
        Ok(Self { strength, radius, dim })
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl CouplingFunction for SoftplusBarrier {
    fn value(&self, joint: &Vector) -> f64 {
        let d = self.dim;
        let agents = joint.len() / d;
        let r2 = self.radius * self.radius;
        let mut total = 0.0;
        for n in 0..agents {
            for m in n + 1..agents {
                let s = r2 - (slot(joint, n, d) - slot(joint, m, d)).norm_squared();
                total += softplus(s).powi(2);
            }
        }
        -self.strength * total
    }

    fn gradient_n(&self, joint: &Vector, n: usize, d: usize) -> Vector {
        debug_assert_eq!(d, self.dim);
        let agents = joint.len() / d;
        let r2 = self.radius * self.radius;
        let xn = slot(joint, n, d);
        let mut g = Vector::zeros(d);
        for m in (0..agents).filter(|&m| m != n) {
            let diff = &xn - slot(joint, m, d);
            let s = r2 - diff.norm_squared();
            g += diff * (4.0 * self.strength * softplus(s) * sigmoid(s));
        }
        g
    }

    fn is_zero(&self) -> bool {
        self.strength == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn eye() -> Matrix {
        Matrix::identity(2, 2)
    }

    #[test]
    fn step_examples() {
        let id = LinearDynamics::deterministic(eye(), eye()).unwrap();
        let x = SubsystemState::new(v(&[1.0, 0.0])).unwrap();
        let u = ControlAction::new(v(&[0.0, 1.0])).unwrap();
        assert_eq!(step(&id, &x, &u, None).unwrap().into_vector(), v(&[1.0, 1.0]));

        let memoryless = LinearDynamics::deterministic(Matrix::zeros(2, 2), eye()).unwrap();
        let x = SubsystemState::new(v(&[5.0, 5.0])).unwrap();
        let u = ControlAction::new(v(&[2.0, 3.0])).unwrap();
        assert_eq!(step(&memoryless, &x, &u, None).unwrap().into_vector(), v(&[2.0, 3.0]));

        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.9]);
        let drift = LinearDynamics::deterministic(a, eye()).unwrap();
        let x = SubsystemState::new(v(&[1.0, 1.0])).unwrap();
        let next = step(&drift, &x, &ControlAction::new(v(&[0.0, 0.0])).unwrap(), None).unwrap();
        assert!((next.as_vector() - v(&[1.0, 0.9])).amax() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let id = LinearDynamics::deterministic(eye(), eye()).unwrap();
        let x = SubsystemState::new(v(&[1.0, 0.0])).unwrap();
        let short = ControlAction::new(v(&[0.0])).unwrap();
        assert!(step(&id, &x, &short, None).is_err());
        assert!(SubsystemState::new(v(&[f64::NAN, 0.0])).is_err());
        let u = ControlAction::new(v(&[0.0, 0.0])).unwrap();
        assert!(step(&id, &x, &u, Some(&v(&[f64::INFINITY, 0.0]))).is_err());
        assert!(ControlAction::bounded(v(&[2.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn dynamics_validation() {
        assert!(LinearDynamics::deterministic(eye(), Matrix::identity(3, 3)).is_err());
        let indefinite = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LinearDynamics::new(eye(), eye(), indefinite).is_err());
        assert!(LinearDynamics::new(eye(), eye(), eye() * 0.01).is_ok());
    }

    #[test]
    fn quadratic_value_examples() {
        let u = QuadraticUtility::new(eye(), eye(), Vector::zeros(2)).unwrap();
        assert_eq!(eval_quadratic(&u, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), -1.0);
        assert_eq!(eval_quadratic(&u, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        let q = Matrix::from_diagonal(&v(&[2.0, 1.0]));
        let u = QuadraticUtility::new(q, eye(), Vector::zeros(2)).unwrap();
        assert_eq!(eval_quadratic(&u, &v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap(), -4.0);
        assert!(eval_quadratic(&u, &v(&[1.0]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn quadratic_gradient_examples() {
        let u = QuadraticUtility::new(eye(), eye(), Vector::zeros(2)).unwrap();
        let id = LinearDynamics::deterministic(eye(), eye()).unwrap();
        assert_eq!(grad_u_quadratic(&u, &id, &Vector::zeros(2), &v(&[1.0, 0.0])).unwrap(), v(&[-4.0, 0.0]));
        let at_rest = QuadraticUtility::new(eye(), eye(), v(&[0.3, -0.2])).unwrap();
        let g = grad_u_quadratic(&at_rest, &id, &v(&[0.3, -0.2]), &Vector::zeros(2)).unwrap();
        assert_eq!(g, Vector::zeros(2));
    }

    #[test]
    fn quadratic_validation() {
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticUtility::new(asym, eye(), Vector::zeros(2)).is_err());
        assert!(QuadraticUtility::new(-eye(), eye(), Vector::zeros(2)).is_err());
        assert!(QuadraticUtility::new(eye(), -eye(), Vector::zeros(2)).is_err());
        assert!(QuadraticUtility::new(eye(), Matrix::zeros(2, 2), Vector::zeros(2)).is_ok());
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(1e4) - (1e4 - std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn spring_coupling_value() {
        let g = QuadraticCoupling::pairwise_spring(3, 1, 0.5);
        // -0.5·((1-2)² + (1-4)² + (2-4)²) = -7
        assert!((g.value(&v(&[1.0, 2.0, 4.0])) + 7.0).abs() < 1e-12);
        let agg = QuadraticCoupling::aggregate(2, 1, 2.0);
        assert!((agg.value(&v(&[1.0, 2.0])) + 18.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_vanishes_when_separated() {
        let g = SoftplusBarrier::new(1.0, 1.0, 2).unwrap();
        let far = v(&[0.0, 0.0, 30.0, 0.0]);
        assert!(g.value(&far).abs() < 1e-300);
        assert!(g.gradient_n(&far, 0, 2).amax() < 1e-300);
        let near = v(&[0.0, 0.0, 0.2, 0.0]);
        assert!(g.value(&near) < -0.5);
        assert!(SoftplusBarrier::new(1.0, 0.0, 2).is_err());
    }
}
