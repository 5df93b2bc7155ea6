//! Synthetic instances, configuration files and the simulation driver.
//!
//! The `uam` layout places `N` vehicles on a circle of radius 10 m, each
//! tracking the diametrically opposite waypoint, with a soft separation
//! barrier as the shared coupling. Two scalar layouts reproduce the
//! textbook fictitious-play examples:
//!
//! * `canonical_pair`: `U_n = -(u_n - a_n)²` with `a = (1, -1)` and
//!   `G = -β(u₁ - u₂)²`;
//! * `aggregate`: `U_n = -(u_n - (n + 1))²` and `G = -β(Σu_n)²`, whose
//!   simultaneous play at `β = 1, N = 3` cycles with period two.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agents::{best_response, GameSpec};
use crate::equilibrium::{ActionBox, PlayMode, TraceRow};
use crate::error::{Error, NonConvergence, Result};
use crate::linalg::{serde_matrix, serde_vector, slot, Matrix, Vector};
use crate::mechanism::{run_stage, PollingConfig, SystemInstance};
use crate::model::{
    CouplingFunction, LinearDynamics, QuadraticCoupling, QuadraticUtility, SmoothUtility, SoftplusBarrier, Utility,
    ZeroCoupling,
};
use crate::oracle::joint_welfare_opt;
use crate::parametric::{format_float, Observation, ObservationLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilitySpec {
    #[default]
    QuadraticRandom,
    QuadraticFixed,
    CrossTerm,
    DecomposableSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Uam,
    CanonicalPair,
    Aggregate,
}

/// Per-coordinate action bounds shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn default_d() -> usize {
    2
}

fn default_horizon() -> usize {
    1
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub n_agents: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub coupling_strength: f64,
    #[serde(default = "default_radius")]
    pub safety_radius: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub action_box: Option<BoxConfig>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub utility_spec: UtilitySpec,
    #[serde(default)]
    pub layout: Layout,
    /// Standard deviation of the excitation added to logged prices.
    #[serde(default)]
    pub probe_price_std: f64,
    #[serde(default)]
    pub polling: PollingConfig,
}

impl ScenarioConfig {
    pub fn new(n_agents: usize, d: usize, seed: u64) -> Self {
        Self {
            n_agents,
            d,
            seed,
            horizon: 1,
            coupling_strength: 0.0,
            safety_radius: 1.0,
            action_box: None,
            noise_std: 0.0,
            utility_spec: UtilitySpec::default(),
            layout: Layout::default(),
            probe_price_std: 0.0,
            polling: PollingConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_agents == 0 {
            return bad("N must be at least 1".into());
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.safety_radius > 0.0) {
            return bad(format!("safety_radius must be positive, got {}", self.safety_radius));
        }
        if !(self.coupling_strength >= 0.0) || !(self.noise_std >= 0.0) || !(self.probe_price_std >= 0.0) {
            return bad("coupling_strength, noise_std and probe_price_std must be non-negative".into());
        }
        match self.layout {
            Layout::Uam => {}
            Layout::CanonicalPair if self.n_agents != 2 || self.d != 1 => {
                return bad("canonical_pair layout needs N = 2 and d = 1".into());
            }
            Layout::Aggregate if self.d != 1 => return bad("aggregate layout needs d = 1".into()),
            _ => {}
        }
        if let Some(b) = &self.action_box {
            if b.lower.len() != self.d || b.upper.len() != self.d {
                return bad(format!("box bounds need {} entries", self.d));
            }
        }
        self.polling.validate()
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let file = File::open(path)?;
    let config: ScenarioConfig = serde_json::from_reader(BufReader::new(file))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

pub fn save_config(config: &ScenarioConfig, path: &Path) -> Result<()> {
    write_json(config, path)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn save_log(log: &ObservationLog, path: &Path) -> Result<()> {
    log.write_csv(BufWriter::new(File::create(path)?))
}

pub fn load_log(path: &Path) -> Result<ObservationLog> {
    ObservationLog::read_csv(BufReader::new(File::open(path)?))
}

fn random_spd<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let eig = Matrix::from_diagonal(&Vector::from_fn(d, |_, _| rng.random_range(lo..=hi)));
    let m = &q * eig * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Ground truth of one generated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b: Matrix,
    #[serde(with = "serde_matrix")]
    pub noise_cov: Matrix,
    /// Reference state the utility tracks.
    #[serde(with = "serde_vector")]
    pub x0: Vector,
    #[serde(with = "serde_vector")]
    pub initial_state: Vector,
    /// Quadratic weights, when the utility is quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

impl AgentRecord {
    pub fn dynamics(&self) -> Result<LinearDynamics> {
        LinearDynamics::new(self.a.clone(), self.b.clone(), self.noise_cov.clone())
    }
}

/// What the coordinator knows about an agent: its dynamics and reference state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsRecord {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b: Matrix,
    #[serde(with = "serde_matrix")]
    pub noise_cov: Matrix,
    #[serde(with = "serde_vector")]
    pub x0: Vector,
}

impl DynamicsRecord {
    pub fn dynamics(&self) -> Result<LinearDynamics> {
        LinearDynamics::new(self.a.clone(), self.b.clone(), self.noise_cov.clone())
    }
}

impl From<&AgentRecord> for DynamicsRecord {
    fn from(r: &AgentRecord) -> Self {
        Self { a: r.a.clone(), b: r.b.clone(), noise_cov: r.noise_cov.clone(), x0: r.x0.clone() }
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Generated instance together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub instance: SystemInstance,
    pub agents: Vec<AgentRecord>,
}

fn reference_state(utility: &Utility, fallback: &Vector) -> Vector {
    utility.as_quadratic().map_or_else(|| fallback.clone(), |q| q.x0().clone())
}

/// Builds the instance described by `config`; identical configs give
/// bitwise-identical instances.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let (n, d) = (config.n_agents, config.d);
    let mut dynamics = Vec::with_capacity(n);
    let mut utilities: Vec<Utility> = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut waypoints = Vec::with_capacity(n);
    let noise = Matrix::identity(d, d) * config.noise_std.powi(2);
    let coupling: Arc<dyn CouplingFunction> = match config.layout {
        Layout::Uam => {
            for k in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(k as u64 + 1);
                let skew = {
                    let s = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..=1.0));
                    (&s - s.transpose()) * 0.5
                };
                let a = Matrix::identity(d, d) * 0.995 + skew * 0.005;
                let b = Matrix::identity(d, d) * 0.1;
                dynamics.push(LinearDynamics::new(a, b, noise.clone())?);
                let angle = std::f64::consts::TAU * k as f64 / n as f64;
                let mut waypoint = Vector::zeros(d);
                waypoint[0] = 10.0 * angle.cos();
                if d > 1 {
                    waypoint[1] = 10.0 * angle.sin();
                }
                let start = Vector::from_fn(d, |i, _| -waypoint[i] + rng.random_range(-0.5..=0.5));
                let utility: Utility = match config.utility_spec {
                    UtilitySpec::QuadraticRandom => {
                        QuadraticUtility::new(random_spd(&mut rng, d, 0.5, 2.0), random_spd(&mut rng, d, 0.5, 2.0), waypoint.clone())?
                            .into()
                    }
                    UtilitySpec::QuadraticFixed => {
                        QuadraticUtility::new(Matrix::identity(d, d), Matrix::identity(d, d), waypoint.clone())?.into()
                    }
                    UtilitySpec::CrossTerm => {
                        let base = QuadraticUtility::new(
                            random_spd(&mut rng, d, 0.5, 2.0),
                            random_spd(&mut rng, d, 0.5, 2.0),
                            waypoint.clone(),
                        )?;
                        let ks = (0..d)
                            .map(|_| Matrix::from_fn(d, d, |_, _| 0.01 * rng.random_range(-1.0..=1.0)))
                            .collect();
                        SmoothUtility::cross_term(base, ks)?.into()
                    }
                    UtilitySpec::DecomposableSmooth => {
                        let weights = Vector::from_fn(d, |_, _| rng.random_range(0.5..=2.0));
                        SmoothUtility::log_cosh(weights, waypoint.clone(), random_spd(&mut rng, d, 0.5, 2.0))?.into()
                    }
                };
                utilities.push(utility);
                states.push(start);
                waypoints.push(waypoint);
            }
            if config.coupling_strength == 0.0 || n == 1 {
                Arc::new(ZeroCoupling)
            } else {
                Arc::new(SoftplusBarrier::new(config.coupling_strength, config.safety_radius, d)?)
            }
        }
        Layout::CanonicalPair | Layout::Aggregate => {
            let one = Matrix::identity(1, 1);
            for k in 0..n {
                let target = match config.layout {
                    Layout::CanonicalPair => [1.0, -1.0][k],
                    _ => 1.0 + k as f64,
                };
                dynamics.push(LinearDynamics::new(one.clone(), one.clone(), noise.clone())?);
                let waypoint = Vector::from_element(1, target);
                utilities.push(QuadraticUtility::new(one.clone(), Matrix::zeros(1, 1), waypoint.clone())?.into());
                states.push(Vector::zeros(1));
                waypoints.push(waypoint);
            }
            match (config.layout, config.coupling_strength) {
                (_, s) if s == 0.0 => Arc::new(ZeroCoupling),
                (Layout::CanonicalPair, s) => Arc::new(QuadraticCoupling::pairwise_spring(2, 1, s)),
                (_, s) => Arc::new(QuadraticCoupling::aggregate(n, 1, s)),
            }
        }
    };

    let agents = (0..n)
        .map(|k| {
            let quad = utilities[k].as_quadratic();
            AgentRecord {
                a: dynamics[k].a().clone(),
                b: dynamics[k].b().clone(),
                noise_cov: dynamics[k].noise_cov().clone(),
                x0: reference_state(&utilities[k], &waypoints[k]),
                initial_state: states[k].clone(),
                q: quad.map(|q| rows_of(q.q())),
                r: quad.map(|q| rows_of(q.r())),
            }
        })
        .collect();
    let mut instance = SystemInstance::new(dynamics, utilities, coupling, states)?;
    if let Some(b) = &config.action_box {
        let bounds = ActionBox::new(Vector::from_vec(b.lower.clone()), Vector::from_vec(b.upper.clone()))?;
        instance = instance.with_action_box(bounds)?;
    }
    Ok(Scenario { instance, agents })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Oscillation,
    Divergence,
    RoundLimit,
}

impl From<NonConvergence> for RunStatus {
    fn from(kind: NonConvergence) -> Self {
        match kind {
            NonConvergence::Oscillation => RunStatus::Oscillation,
            NonConvergence::Divergence => RunStatus::Divergence,
            NonConvergence::RoundLimit => RunStatus::RoundLimit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub t: usize,
    pub rounds: usize,
    pub converged: bool,
    pub welfare_series: Vec<f64>,
    pub final_welfare: f64,
    pub oracle_welfare: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub status: RunStatus,
    pub converged: bool,
    pub stages: Vec<StageReport>,
    pub final_welfare: f64,
    pub oracle_welfare: Option<f64>,
    /// Oracle minus final welfare of the last stage.
    pub gap: Option<f64>,
    pub iterations: usize,
    pub wall_time_ms: f64,
}

/// Everything a simulation produced.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub report: RunReport,
    /// Trace rows tagged with their stage index.
    pub trace: Vec<(usize, TraceRow)>,
    pub log: ObservationLog,
    pub scenario: Scenario,
}

/// Runs `horizon` polling stages, committing each converged action and
/// advancing the dynamics once per stage.
///
/// After each stage every agent is posted `p_n = ∇U_n(u_n*) + η` (with
/// `η ~ N(0, probe_price_std²)`) and its reply is logged together with the
/// price. A stage that fails to converge ends the run with the matching
/// status; the partial trace is kept.
pub fn simulate(config: &ScenarioConfig) -> Result<SimulationRun> {
    let started = Instant::now();
    let scenario = generate(config)?;
    let (n, d) = (config.n_agents, config.d);
    let mut sys = scenario.instance.clone();
    let mut trace = Vec::new();
    let mut stages = Vec::new();
    let mut log = ObservationLog::new(d);
    let mut status = RunStatus::Converged;
    let mut iterations = 0;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(n as u64 + 1);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(n as u64 + 2);
    let mut polling = config.polling.clone();

    for t in 0..config.horizon {
        let outcome = match run_stage(&sys, &polling) {
            Ok(out) => out,
            Err(Error::NotConverged { kind, rounds, trace: partial }) => {
                iterations += rounds;
                let welfare_series = partial.welfare_series();
                stages.push(StageReport {
                    t,
                    rounds,
                    converged: false,
                    final_welfare: welfare_series.last().copied().unwrap_or(f64::NAN),
                    welfare_series,
                    oracle_welfare: None,
                    gap: None,
                });
                trace.extend(partial.rows.into_iter().map(|r| (t, r)));
                status = kind.into();
                break;
            }
            Err(e) => return Err(e),
        };
        iterations += outcome.rounds;
        let final_welfare = outcome.final_welfare().unwrap_or(f64::NAN);
        let oracle = joint_welfare_opt(&sys)?;
        stages.push(StageReport {
            t,
            rounds: outcome.rounds,
            converged: true,
            welfare_series: outcome.trace.welfare_series(),
            final_welfare,
            oracle_welfare: Some(oracle.welfare),
            gap: Some(oracle.welfare - final_welfare),
        });
        trace.extend(outcome.trace.rows.iter().cloned().map(|r| (t, r)));

        for k in 0..n {
            let (x, dyn_k, utility) = (&sys.states()[k], &sys.dynamics()[k], &sys.utilities()[k]);
            let committed = slot(&outcome.actions, k, d);
            let mut price = utility.gradient_u(dyn_k, x, &committed);
            if config.probe_price_std > 0.0 {
                price += Vector::from_fn(d, |_, _| config.probe_price_std * probe_rng.sample::<f64, _>(StandardNormal));
            }
            let game = GameSpec::utility_only(utility).with_price(price.clone());
            let reply = best_response(&game, x, dyn_k, &committed, &polling.best_response)?;
            log.push(Observation { t, agent: k, x: x.clone(), u: reply, p: price })?;
        }

        let noise: Option<Vec<Vector>> = (config.noise_std > 0.0)
            .then(|| sys.dynamics().iter().map(|dy| dy.sample_noise(&mut noise_rng)).collect());
        sys = sys.advance(&outcome.actions, noise.as_deref())?;
        polling.initial = Some(outcome.actions);
    }

    let last = stages.last();
    let report = RunReport {
        config: config.clone(),
        status,
        converged: status == RunStatus::Converged,
        final_welfare: last.map_or(f64::NAN, |s| s.final_welfare),
        oracle_welfare: last.and_then(|s| s.oracle_welfare),
        gap: last.and_then(|s| s.gap),
        stages,
        iterations,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(SimulationRun { report, trace, log, scenario })
}

/// Trace CSV: `t,round,agent,u_0..,welfare,residual`, one row per agent and round.
pub fn write_trace_csv<W: Write>(trace: &[(usize, TraceRow)], d: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "round".to_string(), "agent".to_string()];
    header.extend((0..d).map(|i| format!("u_{i}")));
    header.push("welfare".into());
    header.push("residual".into());
    w.write_record(&header)?;
    for (t, row) in trace {
        let agents = row.actions.len() / d.max(1);
        for n in 0..agents {
            let mut rec = vec![t.to_string(), row.round.to_string(), n.to_string()];
            rec.extend(slot(&row.actions, n, d).iter().map(|v| format_float(*v)));
            rec.push(row.welfare.map_or_else(String::new, format_float));
            rec.push(format_float(row.residual));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub mode: PlayMode,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_welfare: f64,
    pub gap: f64,
    pub actions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub oracle_welfare: f64,
    pub modes: Vec<ModeComparison>,
    /// Largest pairwise `‖·‖∞` distance among converged limits.
    pub max_limit_spread: f64,
}

/// Runs all play modes plus the oracle on the first stage of `config`.
pub fn compare(config: &ScenarioConfig) -> Result<CompareReport> {
    let scenario = generate(config)?;
    let sys = &scenario.instance;
    let oracle = joint_welfare_opt(sys)?;
    let mut modes = Vec::new();
    for mode in PlayMode::ALL {
        let cfg = PollingConfig { mode, ..config.polling.clone() };
        let (status, iterations, actions) = match run_stage(sys, &cfg) {
            Ok(out) => (RunStatus::Converged, out.rounds, out.actions),
            Err(Error::NotConverged { kind, rounds, trace }) => {
                let last = trace.last().map_or_else(|| Vector::zeros(sys.joint_dim()), |r| r.actions.clone());
                (kind.into(), rounds, last)
            }
            Err(e) => return Err(e),
        };
        let final_welfare = crate::mechanism::social_welfare(sys, &actions)?;
        modes.push(ModeComparison {
            mode,
            status,
            iterations,
            final_welfare,
            gap: oracle.welfare - final_welfare,
            actions: actions.as_slice().to_vec(),
        });
    }
    let converged: Vec<&ModeComparison> = modes.iter().filter(|m| m.status == RunStatus::Converged).collect();
    let mut spread: f64 = 0.0;
    for i in 0..converged.len() {
        for j in i + 1..converged.len() {
            let dist = converged[i]
                .actions
                .iter()
                .zip(&converged[j].actions)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            spread = spread.max(dist);
        }
    }
    Ok(CompareReport { oracle_welfare: oracle.welfare, modes, max_limit_spread: spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_agent_count_is_named() {
        let err = parse_config(r#"{"d": 2}"#).unwrap_err();
        assert!(err.to_string().contains("`N`"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(parse_config(r#"{"N": 2, "colour": 1}"#).is_err());
    }

    #[test]
    fn uncoupled_cases_have_zero_coupling() {
        let mut cfg = ScenarioConfig::new(3, 2, 5);
        assert!(generate(&cfg).unwrap().instance.coupling().is_zero());
        cfg.coupling_strength = 2.0;
        assert!(!generate(&cfg).unwrap().instance.coupling().is_zero());
        cfg.n_agents = 1;
        assert!(generate(&cfg).unwrap().instance.coupling().is_zero());
    }

    #[test]
    fn generation_is_deterministic() {
        let mut cfg = ScenarioConfig::new(4, 3, 99);
        cfg.coupling_strength = 0.5;
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.agents, b.agents);
        cfg.seed = 100;
        assert_ne!(generate(&cfg).unwrap().agents, a.agents);
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ScenarioConfig::new(2, 1, 7);
        cfg.layout = Layout::CanonicalPair;
        cfg.action_box = Some(BoxConfig { lower: vec![-2.0], upper: vec![2.0] });
        cfg.polling.mode = PlayMode::Tikhonov;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn excited_log_identifies_every_vehicle() {
        // Slowly moving states make the regressors nearly collinear in time.
        let mut cfg = ScenarioConfig::new(2, 2, 11);
        cfg.horizon = 8;
        cfg.coupling_strength = 0.5;
        cfg.probe_price_std = 0.5;
        let run = simulate(&cfg).unwrap();
        for (n, record) in run.scenario.agents.iter().enumerate() {
            let model = crate::parametric::identify(&run.log, n, &record.dynamics().unwrap(), &record.x0).unwrap();
            let truth = run.scenario.instance.utilities()[n].as_quadratic().unwrap();
            assert!((&model.q_hat - truth.q()).amax() < 1e-10, "agent {n}");
            assert!((&model.r_hat - truth.r()).amax() < 1e-10, "agent {n}");
            assert!(model.residual < 1e-10);
        }
    }
}
