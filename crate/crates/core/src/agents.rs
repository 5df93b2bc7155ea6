//! Selfish subsystems: each one maximizes the payoff of the game the
//! coordinator poses to it.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vector, Matrix};
use crate::model::{CouplingFunction, LinearDynamics, Utility};
use crate::solver::{newton_root, NewtonOptions};

/// The coupling term seen by one agent with the other agents' next states frozen.
#[derive(Debug, Clone)]
pub struct FrozenCoupling<'a> {
    pub function: &'a dyn CouplingFunction,
    /// Stacked next states; the agent's own slot is overwritten on evaluation.
    pub joint_next: Vector,
    pub agent: usize,
}

impl FrozenCoupling<'_> {
    fn joint_with(&self, own_next: &Vector) -> Vector {
        let d = own_next.len();
        let mut joint = self.joint_next.clone();
        joint.rows_mut(self.agent * d, d).copy_from(own_next);
        joint
    }
}

/// Proximal penalty `-λ‖u - anchor‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub weight: f64,
    pub anchor: Vector,
}

/// Payoff posed to one agent: the sum of whichever terms are present.
///
/// | term           | payoff contribution            |
/// |----------------|--------------------------------|
/// | `utility`      | `U(Ax + Bu, u)`                |
/// | `price`        | `-pᵀu`                         |
/// | `coupling`     | `G(x'_n(u), x'_{-n} frozen)`   |
/// | `proximal`     | `-λ‖u - anchor‖²`              |
/// | `linear_probe` | `+wᵀu`                         |
#[derive(Debug, Clone, Default)]
pub struct GameSpec<'a> {
    pub utility: Option<&'a Utility>,
    pub price: Option<Vector>,
    pub coupling: Option<FrozenCoupling<'a>>,
    pub proximal: Option<Proximal>,
    pub linear_probe: Option<Vector>,
}

impl<'a> GameSpec<'a> {
    pub fn utility_only(utility: &'a Utility) -> Self {
        Self { utility: Some(utility), ..Self::default() }
    }

    pub fn with_price(mut self, price: Vector) -> Self {
        self.price = Some(price);
        self
    }

    pub fn with_coupling(mut self, coupling: FrozenCoupling<'a>) -> Self {
        self.coupling = Some(coupling);
        self
    }

    pub fn with_proximal(mut self, weight: f64, anchor: Vector) -> Self {
        self.proximal = Some(Proximal { weight, anchor });
        self
    }

    pub fn with_linear_probe(mut self, weight: Vector) -> Self {
        self.linear_probe = Some(weight);
        self
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.utility.is_none()
            && self.price.is_none()
            && self.coupling.is_none()
            && self.proximal.is_none()
            && self.linear_probe.is_none()
        {
            return Err(Error::InvalidParameter("game has no payoff terms".into()));
        }
        if let Some(p) = &self.price {
            if p.len() != d {
                return Err(Error::dims("game price", d, p.len()));
            }
        }
        if let Some(prox) = &self.proximal {
            if !(prox.weight > 0.0) {
                return Err(Error::InvalidParameter(format!("proximal weight must be positive, got {}", prox.weight)));
            }
            if prox.anchor.len() != d {
                return Err(Error::dims("proximal anchor", d, prox.anchor.len()));
            }
        }
        if let Some(w) = &self.linear_probe {
            if w.len() != d {
                return Err(Error::dims("linear probe", d, w.len()));
            }
        }
        if let Some(c) = &self.coupling {
            if c.joint_next.len() < (c.agent + 1) * d {
                return Err(Error::dims("frozen coupling state", (c.agent + 1) * d, c.joint_next.len()));
            }
        }
        Ok(())
    }

    fn value(&self, x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> f64 {
        let x_next = dynamics.predict(x, u);
        let mut total = 0.0;
        if let Some(utility) = self.utility {
            total += utility.value(&x_next, u);
        }
        if let Some(p) = &self.price {
            total -= p.dot(u);
        }
        if let Some(c) = &self.coupling {
            total += c.function.value(&c.joint_with(&x_next));
        }
        if let Some(prox) = &self.proximal {
            total -= prox.weight * (u - &prox.anchor).norm_squared();
        }
        if let Some(w) = &self.linear_probe {
            total += w.dot(u);
        }
        total
    }

    pub(crate) fn gradient(&self, x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> Vector {
        let d = u.len();
        let mut g = Vector::zeros(d);
        if let Some(utility) = self.utility {
            g += utility.gradient_u(dynamics, x, u);
        }
        if let Some(p) = &self.price {
            g -= p;
        }
        if let Some(c) = &self.coupling {
            let joint = c.joint_with(&dynamics.predict(x, u));
            g += dynamics.b().transpose() * c.function.gradient_n(&joint, c.agent, d);
        }
        if let Some(prox) = &self.proximal {
            g -= (u - &prox.anchor) * (2.0 * prox.weight);
        }
        if let Some(w) = &self.linear_probe {
            g += w;
        }
        g
    }

    fn hessian(&self, x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> Matrix {
        let d = u.len();
        let mut h = Matrix::zeros(d, d);
        if let Some(utility) = self.utility {
            h += utility.hessian_u(dynamics, x, u);
        }
        if let Some(c) = &self.coupling {
            let joint = c.joint_with(&dynamics.predict(x, u));
            let block = c.function.hessian_block(&joint, c.agent, c.agent, d);
            h += dynamics.b().transpose() * block * dynamics.b();
        }
        if let Some(prox) = &self.proximal {
            h -= Matrix::identity(d, d) * (2.0 * prox.weight);
        }
        h
    }
}

/// Stopping rule for the agent's Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponseConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub line_search_shrink: f64,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, line_search_shrink: 0.5 }
    }
}

impl BestResponseConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0)
        {
            return Err(Error::InvalidParameter(format!("invalid best-response config {self:?}")));
        }
        Ok(())
    }
}

fn check_dims(x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> Result<()> {
    let d = dynamics.dim();
    if x.len() != d {
        return Err(Error::dims("agent state", d, x.len()));
    }
    if u.len() != d {
        return Err(Error::dims("agent action", d, u.len()));
    }
    Ok(())
}

/// Sum of the enabled payoff terms at action `u`.
pub fn payoff_value(game: &GameSpec<'_>, x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> Result<f64> {
    check_dims(x, dynamics, u)?;
    game.validate(dynamics.dim())?;
    Ok(game.value(x, dynamics, u))
}

pub fn payoff_gradient(game: &GameSpec<'_>, x: &Vector, dynamics: &LinearDynamics, u: &Vector) -> Result<Vector> {
    check_dims(x, dynamics, u)?;
    game.validate(dynamics.dim())?;
    Ok(game.gradient(x, dynamics, u))
}

/// The agent's reply: a stationary point of its payoff found by damped Newton
/// started at `u_start`.
///
/// Warm-starting at the previous action selects the root closest to it when
/// the payoff has several.
pub fn best_response(
    game: &GameSpec<'_>,
    x: &Vector,
    dynamics: &LinearDynamics,
    u_start: &Vector,
    cfg: &BestResponseConfig,
) -> Result<Vector> {
    check_dims(x, dynamics, u_start)?;
    game.validate(dynamics.dim())?;
    cfg.validate()?;
    if !all_finite(u_start.as_slice()) {
        return Err(Error::NonFinite("best-response start"));
    }
    let grad = |u: &Vector| game.gradient(x, dynamics, u);
    let hess = |u: &Vector| game.hessian(x, dynamics, u);
    let opts = NewtonOptions { tol: cfg.tol, max_iter: cfg.max_iter, shrink: cfg.line_search_shrink };
    newton_root(u_start, &grad, &hess, opts)
}
