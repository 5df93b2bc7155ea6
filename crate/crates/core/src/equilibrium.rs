//! Fictitious-play iterations and the projection solver for the variational
//! inequality `(y - u*)ᵀF(u*) ≥ 0` whose solutions are Nash points.
//!
//! Fields use the *ascent* orientation: `F` stacks the reward gradients
//! `∇_{u_n}(U_n + G)`, the projection step is `Π_K(u + τF(u))`, and
//! co-coercivity is measured for `-F`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{best_response, BestResponseConfig, GameSpec};
use crate::error::{Error, NonConvergence, Result};
use crate::linalg::{all_finite, set_slot, slot, Vector};
use crate::mechanism::SystemInstance;

/// Per-coordinate bounds `K = Π [lower_i, upper_i]`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBox {
    lower: Vector,
    upper: Vector,
}

impl ActionBox {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dims("box bounds", lower.len(), upper.len()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter("box needs lower ≤ upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(Vector::from_element(dim, lower), Vector::from_element(dim, upper))
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: Vector::from_element(dim, f64::NEG_INFINITY), upper: Vector::from_element(dim, f64::INFINITY) }
    }

    /// Repeats a per-agent box `n` times for the stacked joint action.
    pub fn tiled(&self, n: usize) -> Self {
        let d = self.dim();
        let mut lower = Vector::zeros(n * d);
        let mut upper = Vector::zeros(n * d);
        for k in 0..n {
            set_slot(&mut lower, k, d, &self.lower);
            set_slot(&mut upper, k, d, &self.upper);
        }
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    pub fn project(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn contains(&self, u: &Vector) -> bool {
        u.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_fn(self.dim(), |i, _| rng.random_range(self.lower[i]..=self.upper[i]))
    }
}

/// A vector field on the feasible box.
pub struct OperatorField<'a> {
    eval: Box<dyn Fn(&Vector) -> Vector + 'a>,
    bounds: ActionBox,
}

impl<'a> OperatorField<'a> {
    pub fn new(bounds: ActionBox, eval: impl Fn(&Vector) -> Vector + 'a) -> Self {
        Self { eval: Box::new(eval), bounds }
    }

    pub fn eval(&self, u: &Vector) -> Vector {
        (self.eval)(u)
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    /// `‖u - Π_K(u + F(u))‖∞`, which is `‖F(u)‖∞` in the interior.
    pub fn projected_residual(&self, u: &Vector) -> f64 {
        (u - self.bounds.project(&(u + self.eval(u)))).amax()
    }
}

/// A positive step sequence; a list repeats its last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sequence {
    Constant(f64),
    Values(Vec<f64>),
}

impl Sequence {
    /// Value for round `k ≥ 1`.
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Sequence::Constant(v) => *v,
            Sequence::Values(vs) => vs[(k.max(1) - 1).min(vs.len() - 1)],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Sequence::Constant(v) => *v > 0.0 && v.is_finite(),
            Sequence::Values(vs) => !vs.is_empty() && vs.iter().all(|v| *v > 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("step sequence {name} must be non-empty and positive")))
        }
    }

    pub fn supremum(&self) -> f64 {
        match self {
            Sequence::Constant(v) => *v,
            Sequence::Values(vs) => vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Projection step `τ_k`, proximal weight `λ_k` and incremental step `γ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub tau: Sequence,
    pub lambda: Sequence,
    pub gamma: Sequence,
}

impl StepSchedule {
    pub fn constant(tau: f64, lambda: f64, gamma: f64) -> Self {
        Self { tau: Sequence::Constant(tau), lambda: Sequence::Constant(lambda), gamma: Sequence::Constant(gamma) }
    }

    /// `τ = min(0.9·2ĉ, 1)`, `λ = 100`, `γ = τ`.
    pub fn from_cocoercivity(c_hat: f64) -> Self {
        let tau = (0.9 * 2.0 * c_hat).min(1.0);
        Self::constant(tau, 100.0, tau)
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate("tau")?;
        self.lambda.validate("lambda")?;
        self.gamma.validate("gamma")
    }
}

/// Partially specified schedule; missing entries are filled from the
/// estimated co-coercivity constant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Sequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Sequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Sequence>,
}

impl ScheduleSpec {
    pub fn needs_cocoercivity(&self) -> bool {
        self.tau.is_none() || self.gamma.is_none()
    }

    pub fn resolve(&self, c_hat: Option<f64>) -> Result<StepSchedule> {
        let auto = c_hat.map(StepSchedule::from_cocoercivity);
        let pick = |given: &Option<Sequence>, fallback: Option<Sequence>| {
            given.clone().or(fallback).ok_or_else(|| Error::InvalidParameter("schedule needs ĉ".into()))
        };
        let schedule = StepSchedule {
            tau: pick(&self.tau, auto.as_ref().map(|s| s.tau.clone()))?,
            lambda: self.lambda.clone().unwrap_or(Sequence::Constant(100.0)),
            gamma: pick(&self.gamma, auto.as_ref().map(|s| s.gamma.clone()))?,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoCoercivityEstimate {
    pub c_hat: f64,
    /// Non-degenerate pairs that entered the minimum.
    pub samples: usize,
    pub co_coercive: bool,
}

/// Sampled co-coercivity constant of `-F`:
/// `ĉ = min ⟨F(y) - F(x), x - y⟩ / ‖F(x) - F(y)‖²` over random pairs in the box.
///
/// Pairs with `‖F(x) - F(y)‖ < 1e-12` are skipped. A non-positive minimum flags
/// the field as not co-coercive.
pub fn estimate_cocoercivity(
    field: &dyn Fn(&Vector) -> Vector,
    bounds: &ActionBox,
    n_pairs: usize,
    seed: u64,
) -> Result<CoCoercivityEstimate> {
    if n_pairs < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 pairs, got {n_pairs}")));
    }
    if !bounds.is_bounded() {
        return Err(Error::InvalidParameter("co-coercivity sampling needs a bounded box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_hat = f64::INFINITY;
    let mut samples = 0;
    for _ in 0..n_pairs {
        let x = bounds.sample(&mut rng);
        let y = bounds.sample(&mut rng);
        let df = field(&x) - field(&y);
        let denom = df.norm_squared();
        if denom.sqrt() < 1e-12 {
            continue;
        }
        samples += 1;
        c_hat = c_hat.min(-df.dot(&(&x - &y)) / denom);
    }
    if samples == 0 {
        return Err(Error::Degenerate("every sampled pair had F(x) = F(y)".into()));
    }
    Ok(CoCoercivityEstimate { c_hat, samples, co_coercive: c_hat > 1e-12 })
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub actions: Vector,
    pub welfare: Option<f64>,
    /// `‖u^k - u^{k-1}‖∞`.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollingTrace {
    pub rows: Vec<TraceRow>,
}

impl PollingTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn welfare_series(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.welfare).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Projection iteration `u^k = Π_K(u^{k-1} + τ_k F(u^{k-1}))`.
///
/// Stops at the first iterate whose projected residual is at most `tol`.
pub fn vi_project_iterate(
    field: &OperatorField<'_>,
    u0: &Vector,
    schedule: &StepSchedule,
    tol: f64,
    max_iter: usize,
) -> Result<(Vector, PollingTrace)> {
    schedule.validate()?;
    if u0.len() != field.bounds.dim() {
        return Err(Error::dims("VI start", field.bounds.dim(), u0.len()));
    }
    let mut u = field.bounds.project(u0);
    let mut trace = PollingTrace::default();
    trace.push(TraceRow { round: 0, actions: u.clone(), welfare: None, residual: field.projected_residual(&u) });
    for k in 1..=max_iter {
        if field.projected_residual(&u) <= tol {
            return Ok((u, trace));
        }
        let next = field.bounds.project(&(&u + field.eval(&u) * schedule.tau.at(k)));
        if !all_finite(next.as_slice()) || next.amax() > 1e12 {
            return Err(Error::NotConverged { kind: NonConvergence::Divergence, rounds: k, trace: Box::new(trace) });
        }
        let residual = field.projected_residual(&next);
        trace.push(TraceRow { round: k, actions: next.clone(), welfare: None, residual });
        u = next;
    }
    if field.projected_residual(&u) <= tol {
        return Ok((u, trace));
    }
    Err(Error::NotConverged { kind: NonConvergence::RoundLimit, rounds: max_iter, trace: Box::new(trace) })
}

/// Tracks the period-2 signature `‖u^k - u^{k-2}‖∞ < 1e-10` with
/// `‖u^k - u^{k-1}‖∞ > tol` over consecutive rounds.
#[derive(Debug, Clone)]
pub(crate) struct OscillationDetector {
    tol: f64,
    history: Vec<Vector>,
    streak: usize,
}

impl OscillationDetector {
    pub const WINDOW: usize = 10;

    pub fn new(tol: f64) -> Self {
        Self { tol, history: Vec::new(), streak: 0 }
    }

    /// Records `u^k`; returns `true` once the signature has held for
    /// [`Self::WINDOW`] consecutive rounds.
    pub fn observe(&mut self, u: &Vector) -> bool {
        let len = self.history.len();
        if len >= 2 {
            let back2 = (u - &self.history[len - 2]).amax();
            let back1 = (u - &self.history[len - 1]).amax();
            if back2 < 1e-10 && back1 > self.tol {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.history.push(u.clone());
        if self.history.len() > 2 {
            self.history.remove(0);
        }
        self.streak >= Self::WINDOW
    }
}

/// Result of one agent's reply together with what the coordinator can infer
/// from it: stationarity of the posed payoff gives `∇U_n(u_n) = -∇(known terms)`.
pub(crate) struct Reply {
    pub action: Vector,
    pub utility_gradient: Vector,
}

pub(crate) fn reply(
    sys: &SystemInstance,
    n: usize,
    game: GameSpec<'_>,
    start: &Vector,
    cfg: &BestResponseConfig,
) -> Result<Reply> {
    let x = &sys.states()[n];
    let dynamics = &sys.dynamics()[n];
    let action = best_response(&game, x, dynamics, start, cfg)?;
    let known = GameSpec { utility: None, ..game };
    let utility_gradient = if known.price.is_none()
        && known.coupling.is_none()
        && known.proximal.is_none()
        && known.linear_probe.is_none()
    {
        Vector::zeros(action.len())
    } else {
        -known.gradient(x, dynamics, &action)
    };
    Ok(Reply { action, utility_gradient })
}

/// Coordinator-side reward field at `u`, assembled from inferred utility
/// gradients and the known coupling: `F_n = ∇U_n + B_nᵀ∇_{x_n}G(x'(u))`.
pub(crate) fn assemble_field(sys: &SystemInstance, u: &Vector, utility_gradients: &Vector) -> Vector {
    utility_gradients + sys.coupling_gradient_u(u)
}

/// Full-step simultaneous fictitious play: every agent best-responds to
/// `U_n + G(·, u_{-n}^{prev})`.
pub fn play_simultaneous(sys: &SystemInstance, u_prev: &Vector, cfg: &BestResponseConfig) -> Result<Vector> {
    Ok(simultaneous_step(sys, u_prev, cfg)?.0)
}

pub(crate) fn simultaneous_step(
    sys: &SystemInstance,
    u_prev: &Vector,
    cfg: &BestResponseConfig,
) -> Result<(Vector, Vector)> {
    sys.check_joint(u_prev)?;
    let d = sys.dim();
    let mut next = u_prev.clone();
    let mut grads = Vector::zeros(u_prev.len());
    for n in 0..sys.n_agents() {
        let start = slot(u_prev, n, d);
        let r = reply(sys, n, sys.frozen_game(n, u_prev), &start, cfg)?;
        set_slot(&mut next, n, d, &r.action);
        set_slot(&mut grads, n, d, &r.utility_gradient);
    }
    Ok((next, grads))
}

/// Sequential (Gauss–Seidel) play: only agent `t mod N` updates.
pub fn play_sequential(sys: &SystemInstance, u_prev: &Vector, t: usize, cfg: &BestResponseConfig) -> Result<Vector> {
    Ok(sequential_step(sys, u_prev, t, cfg)?.0)
}

pub(crate) fn sequential_step(
    sys: &SystemInstance,
    u_prev: &Vector,
    t: usize,
    cfg: &BestResponseConfig,
) -> Result<(Vector, usize, Vector)> {
    sys.check_joint(u_prev)?;
    let d = sys.dim();
    let n = t % sys.n_agents();
    let r = reply(sys, n, sys.frozen_game(n, u_prev), &slot(u_prev, n, d), cfg)?;
    let mut next = u_prev.clone();
    set_slot(&mut next, n, d, &r.action);
    Ok((next, n, r.utility_gradient))
}

/// Output of one two-stage round.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageStep {
    /// `u^k`.
    pub actions: Vector,
    /// Stage-one responses `û^k`.
    pub stage_one: Vector,
    /// Coordinator's field estimate `F(û^k)`.
    pub field_at_stage_one: Vector,
}

/// Two-stage incremental play.
///
/// Stage one poses `U_n + G(·, u_{-n}^{k-1}) - λ_k‖u_n - u_n^{k-1}‖²` and
/// observes `û`. Stationarity reveals `∇U_n(û_n)`, so the coordinator forms
/// `F(û)` and moves agents to `u^k = Π_K(u^{k-1} + γ_k F(û))`; the second-stage
/// game that implements this move is [`stage_two_game`].
pub fn play_two_stage(
    sys: &SystemInstance,
    u_prev: &Vector,
    k: usize,
    schedule: &StepSchedule,
    cfg: &BestResponseConfig,
) -> Result<TwoStageStep> {
    sys.check_joint(u_prev)?;
    let d = sys.dim();
    let lambda = schedule.lambda.at(k);
    let gamma = schedule.gamma.at(k);
    let mut u_hat = u_prev.clone();
    let mut grads = Vector::zeros(u_prev.len());
    for n in 0..sys.n_agents() {
        let anchor = slot(u_prev, n, d);
        let game = sys.frozen_game(n, u_prev).with_proximal(lambda, anchor.clone());
        let r = reply(sys, n, game, &anchor, cfg)?;
        set_slot(&mut u_hat, n, d, &r.action);
        set_slot(&mut grads, n, d, &r.utility_gradient);
    }
    let field = assemble_field(sys, &u_hat, &grads);
    let actions = sys.project(&(u_prev + &field * gamma));
    Ok(TwoStageStep { actions, stage_one: u_hat, field_at_stage_one: field })
}

/// Second-stage probe `-‖u‖² + 2·targetᵀu`, whose unique maximizer is `target`.
pub fn stage_two_game<'a>(target: &Vector) -> GameSpec<'a> {
    GameSpec::default().with_proximal(1.0, Vector::zeros(target.len())).with_linear_probe(target * 2.0)
}

/// Single-stage incremental play.
///
/// Agents answer the probe `U_n + G(·, ũ_{-n}^{k-1}) - λ_k‖u_n - ũ_n^{k-1}‖²`;
/// their replies `u^k` are the round's actions. The coordinator infers
/// `∇U_n(u_n^k)` from the probe identity and advances the virtual iterate
/// `ũ^k = Π_K(ũ^{k-1} + γ_k F(u^k))`. Returns `(u^k, ũ^k)`.
pub fn play_single_stage(
    sys: &SystemInstance,
    u_prev: &Vector,
    u_tilde_prev: &Vector,
    k: usize,
    schedule: &StepSchedule,
    cfg: &BestResponseConfig,
) -> Result<(Vector, Vector)> {
    let (u, u_tilde, _) = single_stage_step(sys, u_prev, u_tilde_prev, k, schedule, cfg)?;
    Ok((u, u_tilde))
}

pub(crate) fn single_stage_step(
    sys: &SystemInstance,
    u_prev: &Vector,
    u_tilde_prev: &Vector,
    k: usize,
    schedule: &StepSchedule,
    cfg: &BestResponseConfig,
) -> Result<(Vector, Vector, Vector)> {
    sys.check_joint(u_prev)?;
    sys.check_joint(u_tilde_prev)?;
    let d = sys.dim();
    let lambda = schedule.lambda.at(k);
    let gamma = schedule.gamma.at(k);
    let mut u = u_prev.clone();
    let mut grads = Vector::zeros(u_prev.len());
    for n in 0..sys.n_agents() {
        let anchor = slot(u_tilde_prev, n, d);
        let game = sys.frozen_game(n, u_tilde_prev).with_proximal(lambda, anchor);
        let r = reply(sys, n, game, &slot(u_prev, n, d), cfg)?;
        set_slot(&mut u, n, d, &r.action);
        set_slot(&mut grads, n, d, &r.utility_gradient);
    }
    let field = assemble_field(sys, &u, &grads);
    let u_tilde = sys.project(&(u_tilde_prev + &field * gamma));
    Ok((u, u_tilde, grads))
}

/// Tikhonov-regularized play: each agent maximizes
/// `U_n + G(·, u_{-n}^{k-1}) - λ_k‖u_n - u_n^{k-1}‖²`, a perturbed projection
/// step with effective step `1/(2λ_k)`.
pub fn play_tikhonov(
    sys: &SystemInstance,
    u_prev: &Vector,
    k: usize,
    schedule: &StepSchedule,
    cfg: &BestResponseConfig,
) -> Result<Vector> {
    Ok(tikhonov_step(sys, u_prev, k, schedule, cfg)?.0)
}

pub(crate) fn tikhonov_step(
    sys: &SystemInstance,
    u_prev: &Vector,
    k: usize,
    schedule: &StepSchedule,
    cfg: &BestResponseConfig,
) -> Result<(Vector, Vector)> {
    sys.check_joint(u_prev)?;
    let d = sys.dim();
    let lambda = schedule.lambda.at(k);
    let mut next = u_prev.clone();
    let mut grads = Vector::zeros(u_prev.len());
    for n in 0..sys.n_agents() {
        let anchor = slot(u_prev, n, d);
        let game = sys.frozen_game(n, u_prev).with_proximal(lambda, anchor.clone());
        let r = reply(sys, n, game, &anchor, cfg)?;
        set_slot(&mut next, n, d, &r.action);
        set_slot(&mut grads, n, d, &r.utility_gradient);
    }
    Ok((next, grads))
}

/// Upper bound on `max_n sup_{u∈K} ‖∇_{u_n}(U_n + G)(u)‖` by dense grid
/// search over the joint box (`divisions` cells per coordinate).
pub fn estimate_gradient_bound(sys: &SystemInstance, bounds: &ActionBox, divisions: usize) -> Result<f64> {
    if !bounds.is_bounded() {
        return Err(Error::InvalidParameter("gradient bound needs a bounded box".into()));
    }
    let dim = bounds.dim();
    sys.check_joint(&Vector::zeros(dim))?;
    let per_axis = divisions + 1;
    let total = (per_axis as f64).powi(dim as i32);
    if total > 5e6 {
        return Err(Error::InvalidParameter(format!("grid of {total:.0} points is too large")));
    }
    let d = sys.dim();
    let mut index = vec![0usize; dim];
    let mut best: f64 = 0.0;
    loop {
        let u = Vector::from_fn(dim, |i, _| {
            let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
            lo + (hi - lo) * index[i] as f64 / divisions as f64
        });
        let f = sys.reward_gradient(&u);
        for n in 0..sys.n_agents() {
            best = best.max(slot(&f, n, d).norm());
        }
        let mut axis = 0;
        loop {
            if axis == dim {
                return Ok(best);
            }
            index[axis] += 1;
            if index[axis] < per_axis {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

/// Tracking bound for incremental play under slowly varying state:
///
/// `min_n [ h·λ_B·n·u_m/(1-λ_B) - h·λ_B(1-λ_Bⁿ)u_m/(1-λ_B)² + 2·E_n·u_m ]`
///
/// where `decay[n-1] = E_n` is the fixed-state convergence factor after `n`
/// rounds.
pub fn tracking_error_bound(lambda_b: f64, u_max: f64, h_field: f64, decay: &[f64]) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda_b) {
        return Err(Error::InvalidParameter(format!("λ_B must lie in [0, 1), got {lambda_b}")));
    }
    if decay.is_empty() {
        return Err(Error::InvalidParameter("decay sequence is empty".into()));
    }
    if decay.windows(2).any(|w| w[1] > w[0] + 1e-15) {
        return Err(Error::InvalidParameter("decay factors must be non-increasing".into()));
    }
    let lb = lambda_b;
    let bound = decay
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let n = (i + 1) as f64;
            h_field * lb * n * u_max / (1.0 - lb) - h_field * lb * (1.0 - lb.powi(i as i32 + 1)) * u_max / (1.0 - lb).powi(2)
                + 2.0 * e * u_max
        })
        .fold(f64::INFINITY, f64::min);
    Ok(bound)
}

/// Play variant used by the polling protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayMode {
    #[default]
    Simultaneous,
    Sequential,
    TwoStage,
    SingleStage,
    Tikhonov,
}

impl PlayMode {
    pub const ALL: [PlayMode; 5] =
        [PlayMode::Simultaneous, PlayMode::Sequential, PlayMode::TwoStage, PlayMode::SingleStage, PlayMode::Tikhonov];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlayMode::Simultaneous => "simultaneous",
            PlayMode::Sequential => "sequential",
            PlayMode::TwoStage => "two_stage",
            PlayMode::SingleStage => "single_stage",
            PlayMode::Tikhonov => "tikhonov",
        }
    }

    pub(crate) fn uses_schedule_steps(&self) -> bool {
        matches!(self, PlayMode::TwoStage | PlayMode::SingleStage)
    }
}

impl std::fmt::Display for PlayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlayMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown play mode `{s}`")))
    }
}
