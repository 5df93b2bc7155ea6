//! Identification of quadratic utilities from observed `(x, u, p)` triples
//! and welfare-optimal pricing with the identified models.
//!
//! A rational quadratic agent that receives price `p` satisfies
//! `p = ∇_u U = -C(x - A⁻¹x₀) - D·u` with `C = 2BᵀQA`, `D = 2(BᵀQB + R)`.
//! Stacking `M` such rows gives the vectorized system
//! `(I ⊗ Z)·vec(Eᵀ) = vec(-P)` in the `2d²` unknowns of `E = [C D]`.
//!
//! The recovery `Q = ½(Bᵀ)⁻¹·C·A⁻¹`, `R = ½D - BᵀQB` inverts those
//! definitions directly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    all_finite, lstsq, min_eigenvalue, serde_matrix, serde_vector, set_slot, slot, symmetrize, Matrix, Vector,
};
use crate::mechanism::SystemInstance;
use crate::model::{LinearDynamics, QuadraticUtility, Utility};
use crate::solver::{newton_root, NewtonOptions};

/// One agent's reply to a posted price.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub agent: usize,
    pub x: Vector,
    pub u: Vector,
    pub p: Vector,
}

/// Append-only record of observations with a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    dim: usize,
    rows: Vec<Observation>,
}

impl ObservationLog {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Observation) -> Result<()> {
        for (name, v) in [("observed state", &row.x), ("observed action", &row.u), ("observed price", &row.p)] {
            if v.len() != self.dim {
                return Err(Error::dims(name, self.dim, v.len()));
            }
        }
        if !all_finite(row.x.as_slice()) || !all_finite(row.u.as_slice()) || !all_finite(row.p.as_slice()) {
            return Err(Error::NonFinite("observation"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn for_agent(&self, agent: usize) -> impl Iterator<Item = &Observation> {
        self.rows.iter().filter(move |r| r.agent == agent)
    }

    /// Distinct agent ids in first-seen order.
    pub fn agents(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.agent) {
                ids.push(r.agent);
            }
        }
        ids
    }

    /// First `m` observations of every agent.
    pub fn truncated(&self, m: usize) -> Self {
        let mut counts = std::collections::HashMap::new();
        let rows = self
            .rows
            .iter()
            .filter(|r| {
                let c = counts.entry(r.agent).or_insert(0usize);
                *c += 1;
                *c <= m
            })
            .cloned()
            .collect();
        Self { dim: self.dim, rows }
    }

    fn header(dim: usize) -> Vec<String> {
        let mut h = vec!["t".to_string(), "n".to_string()];
        for prefix in ["x", "u", "p"] {
            h.extend((0..dim).map(|i| format!("{prefix}_{i}")));
        }
        h
    }

    /// CSV with columns `t,n,x_0..,u_0..,p_0..` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(self.dim))?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string(), r.agent.to_string()];
            for v in [&r.x, &r.u, &r.p] {
                rec.extend(v.iter().map(|f| format_float(*f)));
            }
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Self::write_csv`]; malformed rows are reported by their
    /// 1-based data row number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let headers = rd.headers()?.clone();
        if headers.len() < 5 || (headers.len() - 2) % 3 != 0 {
            return Err(Error::Malformed { row: 0, message: format!("header has {} columns", headers.len()) });
        }
        let dim = (headers.len() - 2) / 3;
        let expected = Self::header(dim);
        if headers.iter().zip(expected.iter()).any(|(a, b)| a.trim() != b) {
            return Err(Error::Malformed { row: 0, message: format!("expected header {}", expected.join(",")) });
        }
        let mut log = Self::new(dim);
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Malformed { row, message: e.to_string() })?;
            if rec.len() != headers.len() {
                return Err(Error::Malformed {
                    row,
                    message: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            let int = |k: usize| {
                rec[k].trim().parse::<usize>().map_err(|_| Error::Malformed {
                    row,
                    message: format!("column {} is not a non-negative integer: `{}`", expected[k], &rec[k]),
                })
            };
            let (t, agent) = (int(0)?, int(1)?);
            let mut fields = Vec::with_capacity(3 * dim);
            for k in 2..rec.len() {
                let v: f64 = rec[k].trim().parse().map_err(|_| Error::Malformed {
                    row,
                    message: format!("column {} is not a number: `{}`", expected[k], &rec[k]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Malformed { row, message: format!("column {} is not finite", expected[k]) });
                }
                fields.push(v);
            }
            let part = |k: usize| Vector::from_column_slice(&fields[k * dim..(k + 1) * dim]);
            log.push(Observation { t, agent, x: part(0), u: part(1), p: part(2) })?;
        }
        Ok(log)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Identified quadratic utility of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedQuadraticModel {
    pub agent: usize,
    #[serde(with = "serde_matrix")]
    pub c: Matrix,
    #[serde(with = "serde_matrix")]
    pub d: Matrix,
    #[serde(with = "serde_matrix")]
    pub q_hat: Matrix,
    #[serde(with = "serde_matrix")]
    pub r_hat: Matrix,
    #[serde(with = "serde_vector")]
    pub x0: Vector,
    /// Frobenius norm of the stacked fit residual.
    pub residual: f64,
    pub rank: usize,
    pub samples: usize,
    /// Mismatch between a free intercept fit and the intercept implied by
    /// `Q̂` and `x₀`; needs at least `2d + 1` samples.
    pub x0_consistency: Option<f64>,
}

impl EstimatedQuadraticModel {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn to_utility(&self) -> Result<QuadraticUtility> {
        QuadraticUtility::new(self.q_hat.clone(), self.r_hat.clone(), self.x0.clone())
    }

    /// `‖[C D] - [C' D']‖_F` against another model.
    pub fn coefficient_distance(&self, c: &Matrix, d: &Matrix) -> f64 {
        ((&self.c - c).norm_squared() + (&self.d - d).norm_squared()).sqrt()
    }
}

/// True `(C, D)` of a quadratic utility.
pub fn true_coefficients(utility: &QuadraticUtility, dynamics: &LinearDynamics) -> (Matrix, Matrix) {
    let bt_q = dynamics.b().transpose() * utility.q();
    let c = &bt_q * dynamics.a() * 2.0;
    let d = (&bt_q * dynamics.b() + utility.r()) * 2.0;
    (c, d)
}

/// Fits agent `agent`'s quadratic utility from its logged replies.
pub fn identify(
    log: &ObservationLog,
    agent: usize,
    dynamics: &LinearDynamics,
    x0: &Vector,
) -> Result<EstimatedQuadraticModel> {
    let d = dynamics.dim();
    if log.dim() != d {
        return Err(Error::dims("log dimension", d, log.dim()));
    }
    if x0.len() != d {
        return Err(Error::dims("reference state", d, x0.len()));
    }
    let rows: Vec<&Observation> = log.for_agent(agent).collect();
    let m = rows.len();
    let unknowns = 2 * d * d;
    let a_lu = dynamics.a().clone().lu();
    let a_inv = a_lu.try_inverse().ok_or(Error::Singular("dynamics A"))?;
    let bt_inv = dynamics.b().transpose().try_inverse().ok_or(Error::Singular("dynamics B"))?;
    if m == 0 {
        return Err(Error::RankDeficient { context: format!("agent {agent}"), rank: 0, required: unknowns, unknowns });
    }

    let shift = &a_inv * x0;
    let mut z = Matrix::zeros(m, 2 * d);
    let mut target = Matrix::zeros(m, d);
    for (i, r) in rows.iter().enumerate() {
        z.view_mut((i, 0), (1, d)).copy_from(&(&r.x - &shift).transpose());
        z.view_mut((i, d), (1, d)).copy_from(&r.u.transpose());
        target.row_mut(i).copy_from(&(-&r.p).transpose());
    }
    // The stacked system (I ⊗ Z)·vec(Eᵀ) = vec(target) splits into one solve
    // per output column, so its rank is d·rank(Z).
    let (e_t, z_rank) = lstsq(&z, &target);
    let rank = d * z_rank;
    if rank < unknowns {
        return Err(Error::RankDeficient { context: format!("agent {agent}"), rank, required: unknowns, unknowns });
    }
    let e = e_t.transpose();
    let c = e.columns(0, d).into_owned();
    let dm = e.columns(d, d).into_owned();
    let residual = (&z * &e_t - &target).norm();

    let q_hat = symmetrize(&(&bt_inv * &c * &a_inv * 0.5));
    let r_hat = symmetrize(&(&dm * 0.5 - dynamics.b().transpose() * &q_hat * dynamics.b()));

    let x0_consistency = (m > 2 * d).then(|| intercept_mismatch(&rows, dynamics, &q_hat, x0)).flatten();

    Ok(EstimatedQuadraticModel {
        agent,
        c,
        d: dm,
        q_hat,
        r_hat,
        x0: x0.clone(),
        residual,
        rank,
        samples: m,
        x0_consistency,
    })
}

/// Refits with raw `(x, u)` and a free intercept `b`, then compares `b` with
/// `-2BᵀQ̂x₀`.
fn intercept_mismatch(rows: &[&Observation], dynamics: &LinearDynamics, q_hat: &Matrix, x0: &Vector) -> Option<f64> {
    let d = dynamics.dim();
    let m = rows.len();
    let mut z = Matrix::zeros(m, 2 * d + 1);
    let mut target = Matrix::zeros(m, d);
    for (i, r) in rows.iter().enumerate() {
        z.view_mut((i, 0), (1, d)).copy_from(&r.x.transpose());
        z.view_mut((i, d), (1, d)).copy_from(&r.u.transpose());
        z[(i, 2 * d)] = 1.0;
        target.row_mut(i).copy_from(&(-&r.p).transpose());
    }
    let (e_t, rank) = lstsq(&z, &target);
    if rank < 2 * d + 1 {
        return None;
    }
    let intercept = e_t.row(2 * d).transpose();
    let implied = dynamics.b().transpose() * q_hat * x0 * -2.0;
    Some((intercept - &implied).norm() / implied.norm().max(1.0))
}

/// Affine price-to-action map `u(p) = gain·p + offset` of an identified agent
/// in state `x`.
pub fn price_to_action_map(
    model: &EstimatedQuadraticModel,
    x: &Vector,
    dynamics: &LinearDynamics,
) -> Result<(Matrix, Vector)> {
    let d = model.dim();
    if x.len() != d || dynamics.dim() != d {
        return Err(Error::dims("price map state", d, x.len()));
    }
    let d_inv = model.d.clone().try_inverse().ok_or(Error::Singular("identified D"))?;
    let bias = dynamics.b().transpose() * &model.q_hat * &model.x0 * 2.0 - &model.c * x;
    Ok((-&d_inv, d_inv * bias))
}

/// Welfare-optimal actions under the identified models and the prices that
/// implement them.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPrices {
    pub actions: Vector,
    pub prices: Vec<Vector>,
}

/// Solves `∇_{u_n}[Σ Û_n + G] = 0` for all agents with the identified
/// utilities, then prices each agent at `p_n = ∇Û_n(u_n*)`.
pub fn optimal_price(models: &[EstimatedQuadraticModel], sys: &SystemInstance) -> Result<OptimalPrices> {
    if models.len() != sys.n_agents() {
        return Err(Error::dims("identified models", sys.n_agents(), models.len()));
    }
    let mut utilities = Vec::with_capacity(models.len());
    for model in models {
        if min_eigenvalue(&model.d) <= 0.0 {
            return Err(Error::Singular("identified D is not positive definite"));
        }
        utilities.push(Utility::from(model.to_utility()?));
    }
    let estimated =
        SystemInstance::new(sys.dynamics().to_vec(), utilities, sys.coupling_arc(), sys.states().to_vec())?;
    let grad = |u: &Vector| estimated.reward_gradient(u);
    let hess = |u: &Vector| estimated.welfare_hessian(u);
    let opts = NewtonOptions { tol: 1e-11, max_iter: 200, shrink: 0.5 };
    let actions = newton_root(&Vector::zeros(sys.joint_dim()), &grad, &hess, opts)?;
    let d = sys.dim();
    let own = estimated.utility_gradients(&actions);
    let prices = (0..sys.n_agents()).map(|n| slot(&own, n, d)).collect();
    Ok(OptimalPrices { actions, prices })
}

/// Stacks per-agent prices into one joint vector.
pub fn stack_prices(prices: &[Vector]) -> Vector {
    let d = prices.first().map_or(0, |p| p.len());
    let mut out = Vector::zeros(d * prices.len());
    for (n, p) in prices.iter().enumerate() {
        set_slot(&mut out, n, d, p);
    }
    out
}
