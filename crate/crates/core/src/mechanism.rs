//! The coordinator: poses games, evaluates welfare, maps target actions to
//! prices and runs the polling protocol until the virtual actions settle.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{BestResponseConfig, FrozenCoupling, GameSpec};
use crate::equilibrium::{
    self, ActionBox, CoCoercivityEstimate, OscillationDetector, PlayMode, PollingTrace, ScheduleSpec, StepSchedule,
    TraceRow,
};
use crate::error::{Error, NonConvergence, Result};
use crate::linalg::{all_finite, min_eigenvalue, set_slot, slot, spectral_norm, stack, Matrix, Vector};
use crate::model::{step, ControlAction, CouplingFunction, LinearDynamics, SubsystemState, Utility};

/// `N` subsystems sharing one coupling term, frozen at their current states.
#[derive(Debug, Clone)]
pub struct SystemInstance {
    dynamics: Vec<LinearDynamics>,
    utilities: Vec<Utility>,
    coupling: Arc<dyn CouplingFunction>,
    states: Vec<Vector>,
    action_box: Option<ActionBox>,
}

impl SystemInstance {
    pub fn new(
        dynamics: Vec<LinearDynamics>,
        utilities: Vec<Utility>,
        coupling: Arc<dyn CouplingFunction>,
        states: Vec<Vector>,
    ) -> Result<Self> {
        let n = dynamics.len();
        if n == 0 {
            return Err(Error::InvalidParameter("system needs at least one agent".into()));
        }
        if utilities.len() != n {
            return Err(Error::dims("utilities per agent", n, utilities.len()));
        }
        if states.len() != n {
            return Err(Error::dims("states per agent", n, states.len()));
        }
        let d = dynamics[0].dim();
        for (k, dyn_k) in dynamics.iter().enumerate() {
            if dyn_k.dim() != d {
                return Err(Error::dims("agent dynamics dimension", d, dyn_k.dim()));
            }
            if states[k].len() != d {
                return Err(Error::dims("agent state", d, states[k].len()));
            }
            if !all_finite(states[k].as_slice()) {
                return Err(Error::NonFinite("agent state"));
            }
            if let Some(q) = utilities[k].as_quadratic() {
                if q.dim() != d {
                    return Err(Error::dims("utility dimension", d, q.dim()));
                }
            }
        }
        Ok(Self { dynamics, utilities, coupling, states, action_box: None })
    }

    /// Restricts every agent's action to `per_agent`.
    pub fn with_action_box(mut self, per_agent: ActionBox) -> Result<Self> {
        if per_agent.dim() != self.dim() {
            return Err(Error::dims("per-agent action box", self.dim(), per_agent.dim()));
        }
        self.action_box = Some(per_agent.tiled(self.n_agents()));
        Ok(self)
    }

    pub fn n_agents(&self) -> usize {
        self.dynamics.len()
    }

    pub fn dim(&self) -> usize {
        self.dynamics[0].dim()
    }

    pub fn joint_dim(&self) -> usize {
        self.n_agents() * self.dim()
    }

    pub fn dynamics(&self) -> &[LinearDynamics] {
        &self.dynamics
    }

    pub fn utilities(&self) -> &[Utility] {
        &self.utilities
    }

    pub fn coupling(&self) -> &dyn CouplingFunction {
        self.coupling.as_ref()
    }

    pub fn coupling_arc(&self) -> Arc<dyn CouplingFunction> {
        Arc::clone(&self.coupling)
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn joint_state(&self) -> Vector {
        stack(&self.states)
    }

    /// Joint feasible box, when one is configured.
    pub fn action_box(&self) -> Option<&ActionBox> {
        self.action_box.as_ref()
    }

    pub fn with_states(&self, states: Vec<Vector>) -> Result<Self> {
        let mut next = Self::new(self.dynamics.clone(), self.utilities.clone(), self.coupling_arc(), states)?;
        next.action_box = self.action_box.clone();
        Ok(next)
    }

    pub(crate) fn check_joint(&self, u: &Vector) -> Result<()> {
        if u.len() != self.joint_dim() {
            return Err(Error::dims("joint action", self.joint_dim(), u.len()));
        }
        if !all_finite(u.as_slice()) {
            return Err(Error::NonFinite("joint action"));
        }
        Ok(())
    }

    pub(crate) fn project(&self, u: &Vector) -> Vector {
        match &self.action_box {
            Some(b) => b.project(u),
            None => u.clone(),
        }
    }

    /// Stacked noise-free next states.
    pub fn next_joint_state(&self, u: &Vector) -> Vector {
        let d = self.dim();
        let mut out = Vector::zeros(self.joint_dim());
        for n in 0..self.n_agents() {
            set_slot(&mut out, n, d, &self.dynamics[n].predict(&self.states[n], &slot(u, n, d)));
        }
        out
    }

    /// Commits `u` and advances every subsystem one step.
    pub fn advance(&self, u: &Vector, noise: Option<&[Vector]>) -> Result<Self> {
        self.check_joint(u)?;
        let d = self.dim();
        if let Some(w) = noise {
            if w.len() != self.n_agents() {
                return Err(Error::dims("noise per agent", self.n_agents(), w.len()));
            }
        }
        let mut states = Vec::with_capacity(self.n_agents());
        for n in 0..self.n_agents() {
            let x = SubsystemState::new(self.states[n].clone())?;
            let action = ControlAction::new(slot(u, n, d))?;
            let next = step(&self.dynamics[n], &x, &action, noise.map(|w| &w[n]))?;
            states.push(next.into_vector());
        }
        self.with_states(states)
    }

    /// Game posed to agent `n` when the others hold `joint_u`: own utility plus
    /// the coupling with the opponents' next states frozen.
    pub fn frozen_game(&self, n: usize, joint_u: &Vector) -> GameSpec<'_> {
        let mut game = GameSpec::utility_only(&self.utilities[n]);
        if !self.coupling.is_zero() {
            game = game.with_coupling(FrozenCoupling {
                function: self.coupling.as_ref(),
                joint_next: self.next_joint_state(joint_u),
                agent: n,
            });
        }
        game
    }

    /// `∇U_n(u_n)` for every agent, stacked.
    pub fn utility_gradients(&self, u: &Vector) -> Vector {
        let d = self.dim();
        let mut out = Vector::zeros(self.joint_dim());
        for n in 0..self.n_agents() {
            let g = self.utilities[n].gradient_u(&self.dynamics[n], &self.states[n], &slot(u, n, d));
            set_slot(&mut out, n, d, &g);
        }
        out
    }

    /// `B_nᵀ∇_{x_n}G(x'(u))` for every agent, stacked.
    pub fn coupling_gradient_u(&self, u: &Vector) -> Vector {
        let d = self.dim();
        let mut out = Vector::zeros(self.joint_dim());
        if self.coupling.is_zero() {
            return out;
        }
        let grad_x = self.coupling.gradient(&self.next_joint_state(u), d);
        for n in 0..self.n_agents() {
            set_slot(&mut out, n, d, &(self.dynamics[n].b().transpose() * slot(&grad_x, n, d)));
        }
        out
    }

    /// Stacked reward gradients `F_n(u) = ∇_{u_n}(U_n + G)`.
    pub fn reward_gradient(&self, u: &Vector) -> Vector {
        self.utility_gradients(u) + self.coupling_gradient_u(u)
    }

    /// Hessian of the social welfare in the joint action.
    pub fn welfare_hessian(&self, u: &Vector) -> Matrix {
        let (d, nd) = (self.dim(), self.joint_dim());
        let mut h = Matrix::zeros(nd, nd);
        for n in 0..self.n_agents() {
            let block = self.utilities[n].hessian_u(&self.dynamics[n], &self.states[n], &slot(u, n, d));
            h.view_mut((n * d, n * d), (d, d)).copy_from(&block);
        }
        if !self.coupling.is_zero() {
            let hg = self.coupling.hessian(&self.next_joint_state(u), d);
            let mut b = Matrix::zeros(nd, nd);
            for n in 0..self.n_agents() {
                b.view_mut((n * d, n * d), (d, d)).copy_from(self.dynamics[n].b());
            }
            h += b.transpose() * hg * b;
        }
        h
    }
}

/// `Σ_n U_n(x'_n, u_n) + G(x')` with noise-free next states.
pub fn social_welfare(sys: &SystemInstance, u: &Vector) -> Result<f64> {
    sys.check_joint(u)?;
    let d = sys.dim();
    let x_next = sys.next_joint_state(u);
    let mut total = sys.coupling.value(&x_next);
    for n in 0..sys.n_agents() {
        total += sys.utilities[n].value(&slot(&x_next, n, d), &slot(u, n, d));
    }
    Ok(total)
}

/// Price that makes `u_target` the agent's best response: `p = ∇_u U` there.
pub fn price_from_target(utility: &Utility, dynamics: &LinearDynamics, x: &Vector, u_target: &Vector) -> Result<Vector> {
    let d = dynamics.dim();
    if x.len() != d {
        return Err(Error::dims("agent state", d, x.len()));
    }
    if u_target.len() != d {
        return Err(Error::dims("target action", d, u_target.len()));
    }
    if !all_finite(u_target.as_slice()) {
        return Err(Error::NonFinite("target action"));
    }
    Ok(utility.gradient_u(dynamics, x, u_target))
}

/// Minimum message-space dimension for `agents` quadratic subsystems of size `d`.
pub fn message_space_dimension(agents: usize, d: usize) -> usize {
    2 * agents * d * d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakCouplingDiagnostic {
    /// Largest spectral norm of a cross-agent coupling block.
    pub max_cross_norm: f64,
    /// Smallest curvature `λ_min(-H_nn)` over within-agent payoff blocks.
    pub min_own_curvature: f64,
    pub passes: bool,
}

/// Cross-agent Hessian blocks `B_nᵀ∂²G/∂x_n∂x_m B_m` against the curvature of
/// each agent's own payoff, at the joint action `u`.
pub fn weak_coupling_diagnostic(sys: &SystemInstance, u: &Vector, ratio: f64) -> Result<WeakCouplingDiagnostic> {
    sys.check_joint(u)?;
    let d = sys.dim();
    let x_next = sys.next_joint_state(u);
    let mut max_cross: f64 = 0.0;
    let mut min_curv = f64::INFINITY;
    let zero = sys.coupling.is_zero();
    for n in 0..sys.n_agents() {
        let bn = sys.dynamics[n].b();
        let mut own = sys.utilities[n].hessian_u(&sys.dynamics[n], &sys.states[n], &slot(u, n, d));
        if !zero {
            own += bn.transpose() * sys.coupling.hessian_block(&x_next, n, n, d) * bn;
            for m in 0..sys.n_agents() {
                if m != n {
                    let cross = bn.transpose() * sys.coupling.hessian_block(&x_next, n, m, d) * sys.dynamics[m].b();
                    max_cross = max_cross.max(spectral_norm(&cross));
                }
            }
        }
        min_curv = min_curv.min(min_eigenvalue(&(-own)));
    }
    Ok(WeakCouplingDiagnostic {
        max_cross_norm: max_cross,
        min_own_curvature: min_curv,
        passes: min_curv > 0.0 && max_cross <= ratio * min_curv,
    })
}

/// Polling protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollingConfig {
    #[serde(default)]
    pub mode: PlayMode,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Missing step entries are derived from the sampled co-coercivity constant.
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Ratio for [`weak_coupling_diagnostic`]; `None` skips the check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_coupling_ratio: Option<f64>,
    /// Seed for co-coercivity sampling.
    #[serde(default)]
    pub sampling_seed: u64,
    #[serde(skip)]
    pub initial: Option<Vector>,
    #[serde(skip)]
    pub best_response: BestResponseConfig,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_rounds() -> usize {
    1000
}

impl Default for PollingConfig {
    fn default() -> Self {
        Self {
            mode: PlayMode::Simultaneous,
            tol: default_tol(),
            max_rounds: default_max_rounds(),
            schedule: ScheduleSpec::default(),
            weak_coupling_ratio: None,
            sampling_seed: 0,
            initial: None,
            best_response: BestResponseConfig::default(),
        }
    }
}

impl PollingConfig {
    pub fn new(mode: PlayMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Converged stage: the virtual actions ready to commit.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub actions: Vector,
    pub trace: PollingTrace,
    pub rounds: usize,
    /// `‖F̂‖∞` at the stopping point, from the coordinator's inferred gradients.
    pub field_residual: f64,
    pub schedule: Option<StepSchedule>,
    pub cocoercivity: Option<CoCoercivityEstimate>,
    /// Whether the weak-coupling diagnostic held at every iterate, when checked.
    pub weak_coupling_held: Option<bool>,
}

impl StageOutcome {
    pub fn final_welfare(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.welfare)
    }
}

const PROBE_PAIRS: usize = 200;

/// Samples the co-coercivity of the reward field through stage-one probes:
/// each probe reveals `F` at the agents' reply, so no private gradient is used.
fn probe_cocoercivity(
    sys: &SystemInstance,
    center: &Vector,
    lambda: f64,
    cfg: &PollingConfig,
) -> Result<CoCoercivityEstimate> {
    let bounds = match sys.action_box() {
        Some(b) if b.is_bounded() => b.clone(),
        _ => {
            let half = center.amax().max(1.0);
            ActionBox::new(center.map(|c| c - half), center.map(|c| c + half))?
        }
    };
    let schedule = StepSchedule::constant(1.0, lambda, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling_seed);
    let probe = |rng: &mut ChaCha8Rng| -> Result<(Vector, Vector)> {
        let anchor = bounds.sample(rng);
        let out = equilibrium::play_two_stage(sys, &anchor, 1, &schedule, &cfg.best_response)?;
        Ok((out.stage_one, out.field_at_stage_one))
    };
    let mut c_hat = f64::INFINITY;
    let mut samples = 0;
    for _ in 0..PROBE_PAIRS {
        let (x, fx) = probe(&mut rng)?;
        let (y, fy) = probe(&mut rng)?;
        let df = fx - fy;
        let denom = df.norm_squared();
        if denom.sqrt() < 1e-12 {
            continue;
        }
        samples += 1;
        c_hat = c_hat.min(-df.dot(&(x - y)) / denom);
    }
    if samples == 0 {
        return Err(Error::Degenerate("reward field looked constant on every probe pair".into()));
    }
    Ok(CoCoercivityEstimate { c_hat, samples, co_coercive: c_hat > 1e-12 })
}

/// Runs fictitious play in `cfg.mode` until the coordinator's field estimate
/// satisfies `‖F̂‖∞ ≤ tol`.
///
/// The trace records the actions of every round (for single-stage play, the
/// agents' replies), the welfare at those actions and `‖u^k - u^{k-1}‖∞`.
/// Period-2 cycles, divergence and the round limit end the stage with
/// [`Error::NotConverged`] carrying the trace.
pub fn run_stage(sys: &SystemInstance, cfg: &PollingConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let (n_agents, d) = (sys.n_agents(), sys.dim());
    let mut u = match &cfg.initial {
        Some(u0) => {
            sys.check_joint(u0)?;
            sys.project(u0)
        }
        None => sys.project(&Vector::zeros(sys.joint_dim())),
    };

    let mut cocoercivity = None;
    let schedule = match cfg.mode {
        PlayMode::Simultaneous | PlayMode::Sequential => None,
        PlayMode::Tikhonov => Some(cfg.schedule.resolve(Some(1.0))?),
        PlayMode::TwoStage | PlayMode::SingleStage => {
            if cfg.schedule.needs_cocoercivity() {
                let lambda = cfg.schedule.lambda.as_ref().map_or(100.0, |l| l.at(1));
                let est = probe_cocoercivity(sys, &u, lambda, cfg)?;
                if !est.co_coercive {
                    return Err(Error::Degenerate(format!(
                        "reward field is not co-coercive (ĉ = {:.3e}); give explicit steps",
                        est.c_hat
                    )));
                }
                cocoercivity = Some(est);
                Some(cfg.schedule.resolve(Some(est.c_hat))?)
            } else {
                Some(cfg.schedule.resolve(None)?)
            }
        }
    };
    debug_assert!(!cfg.mode.uses_schedule_steps() || schedule.is_some());

    let mut trace = PollingTrace::default();
    trace.push(TraceRow { round: 0, actions: u.clone(), welfare: Some(social_welfare(sys, &u)?), residual: 0.0 });
    let mut weak = cfg.weak_coupling_ratio.map(|r| weak_coupling_diagnostic(sys, &u, r).map(|w| w.passes)).transpose()?;
    let mut detector = OscillationDetector::new(cfg.tol);
    detector.observe(&u);

    // Sequential play learns one agent's gradient per round.
    let mut known_grads = Vector::zeros(sys.joint_dim());
    let mut seen = vec![false; n_agents];
    let mut u_tilde = u.clone();

    for k in 1..=cfg.max_rounds {
        let (next, field) = match cfg.mode {
            PlayMode::Simultaneous => {
                let (next, grads) = equilibrium::simultaneous_step(sys, &u, &cfg.best_response)?;
                let field = equilibrium::assemble_field(sys, &next, &grads);
                (next, Some(field))
            }
            PlayMode::Sequential => {
                let (next, n, grad) = equilibrium::sequential_step(sys, &u, k - 1, &cfg.best_response)?;
                // Cached gradients of agents that did not move stay valid.
                set_slot(&mut known_grads, n, d, &grad);
                seen[n] = true;
                let field = seen.iter().all(|&s| s).then(|| equilibrium::assemble_field(sys, &next, &known_grads));
                (next, field)
            }
            PlayMode::TwoStage => {
                let sched = schedule.as_ref().expect("resolved");
                let out = equilibrium::play_two_stage(sys, &u, k, sched, &cfg.best_response)?;
                let field = projected(sys, &out.stage_one, &out.field_at_stage_one);
                (out.actions, Some(field))
            }
            PlayMode::SingleStage => {
                let sched = schedule.as_ref().expect("resolved");
                let (reply, tilde, grads) =
                    equilibrium::single_stage_step(sys, &u, &u_tilde, k, sched, &cfg.best_response)?;
                u_tilde = tilde;
                let field = equilibrium::assemble_field(sys, &reply, &grads);
                (reply.clone(), Some(projected(sys, &reply, &field)))
            }
            PlayMode::Tikhonov => {
                let sched = schedule.as_ref().expect("resolved");
                let (next, grads) = equilibrium::tikhonov_step(sys, &u, k, sched, &cfg.best_response)?;
                let field = equilibrium::assemble_field(sys, &next, &grads);
                (next.clone(), Some(projected(sys, &next, &field)))
            }
        };

        if !all_finite(next.as_slice()) || next.amax() > 1e12 {
            return Err(Error::NotConverged { kind: NonConvergence::Divergence, rounds: k, trace: Box::new(trace) });
        }
        let residual = (&next - &u).amax();
        trace.push(TraceRow { round: k, actions: next.clone(), welfare: Some(social_welfare(sys, &next)?), residual });
        if let (Some(held), Some(ratio)) = (weak.as_mut(), cfg.weak_coupling_ratio) {
            *held &= weak_coupling_diagnostic(sys, &next, ratio)?.passes;
        }
        u = next;

        if let Some(field) = field {
            let field_residual = field.amax();
            if field_residual <= cfg.tol {
                return Ok(StageOutcome {
                    actions: u,
                    trace,
                    rounds: k,
                    field_residual,
                    schedule,
                    cocoercivity,
                    weak_coupling_held: weak,
                });
            }
        }
        if detector.observe(&u) {
            return Err(Error::NotConverged { kind: NonConvergence::Oscillation, rounds: k, trace: Box::new(trace) });
        }
    }
    Err(Error::NotConverged { kind: NonConvergence::RoundLimit, rounds: cfg.max_rounds, trace: Box::new(trace) })
}

/// Projected residual `u - Π_K(u + F)`, which reduces to `F` without a box.
fn projected(sys: &SystemInstance, u: &Vector, field: &Vector) -> Vector {
    match sys.action_box() {
        Some(_) => u - sys.project(&(u + field)),
        None => field.clone(),
    }
}
