//! Seeded fixtures shared by the solver benchmarks.

use mechlearn::geometry::TrajectorySample;
use mechlearn::scenario::{self, Layout, Scenario};
use mechlearn::{ObservationLog, ScenarioConfig, Vector};

/// UAM instance with `agents` vehicles in the plane and an active barrier.
pub fn uam(agents: usize, seed: u64) -> Scenario {
    let mut config = ScenarioConfig::new(agents, 2, seed);
    config.coupling_strength = 1.0;
    config.safety_radius = 2.0;
    scenario::generate(&config).expect("valid fixture config")
}

/// Scalar two-agent instance with spring coupling `strength`.
pub fn pair(strength: f64) -> Scenario {
    let mut config = ScenarioConfig::new(2, 1, 0);
    config.layout = Layout::CanonicalPair;
    config.coupling_strength = strength;
    scenario::generate(&config).expect("valid fixture config")
}

/// Excited observation log of `horizon` stages and the scenario behind it.
pub fn excited_log(agents: usize, horizon: usize, seed: u64) -> (ObservationLog, Scenario) {
    let mut config = ScenarioConfig::new(agents, 2, seed);
    config.horizon = horizon;
    config.probe_price_std = 0.5;
    let run = scenario::simulate(&config).expect("fixture run converges");
    (run.log, run.scenario)
}

/// Price-field trajectory of vehicle 0 under a deterministic excitation.
pub fn trajectory(steps: usize) -> Vec<TrajectorySample> {
    let scenario = uam(1, 3);
    let dynamics = &scenario.instance.dynamics()[0];
    let utility = &scenario.instance.utilities()[0];
    let mut x = scenario.instance.states()[0].clone();
    (0..steps)
        .map(|k| {
            let t = k as f64;
            let u = Vector::from_vec(vec![(0.7 * t).sin(), (1.3 * t + 0.4).cos()]);
            let xi = utility.gradient_u(dynamics, &x, &u);
            let sample = TrajectorySample::new(&x, &u, xi).expect("matching dimensions");
            x = dynamics.predict(&x, &u);
            sample
        })
        .collect()
}
