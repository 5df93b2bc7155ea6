mod common;

use common::*;
use mechlearn::equilibrium::{estimate_cocoercivity, vi_project_iterate};
use mechlearn::geometry::{fit_decomposable, kernel_fit_residual, transport, ConnectionModel};
use mechlearn::model::{step, ControlAction, SubsystemState};
use mechlearn::oracle::{fd_gradient, joint_welfare_opt};
use mechlearn::scenario::{self, ScenarioConfig};
use mechlearn::{
    best_response, payoff_value, run_stage, social_welfare, ActionBox, BestResponseConfig, CouplingFunction,
    GameSpec, LinearDynamics, Matrix, Observation, ObservationLog, OperatorField, PlayMode, PollingConfig,
    Sequence, SoftplusBarrier, StepSchedule, Utility, Vector,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_response_is_a_local_maximum(seed in any::<u64>(), d in 1usize..=3) {
        let mut r = rng(seed);
        let agent = random_agent(&mut r, d);
        let utility = Utility::from(agent.utility);
        let x = uniform_vector(&mut r, d, -1.0, 1.0);
        let game = GameSpec::utility_only(&utility).with_price(uniform_vector(&mut r, d, -2.0, 2.0));
        let u = best_response(&game, &x, &agent.dynamics, &Vector::zeros(d), &BestResponseConfig::default()).unwrap();
        let best = payoff_value(&game, &x, &agent.dynamics, &u).unwrap();
        for _ in 0..20 {
            let probe = &u + uniform_vector(&mut r, d, -1e-2, 1e-2);
            prop_assert!(payoff_value(&game, &x, &agent.dynamics, &probe).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn price_to_action_is_affine(seed in any::<u64>(), d in 1usize..=3, weight in 0.0f64..1.0) {
        let mut r = rng(seed);
        let agent = random_agent(&mut r, d);
        let utility = Utility::from(agent.utility);
        let x = uniform_vector(&mut r, d, -1.0, 1.0);
        let cfg = BestResponseConfig::default();
        let reply = |p: Vector| {
            let game = GameSpec::utility_only(&utility).with_price(p);
            best_response(&game, &x, &agent.dynamics, &Vector::zeros(d), &cfg).unwrap()
        };
        let (p1, p2) = (uniform_vector(&mut r, d, -2.0, 2.0), uniform_vector(&mut r, d, -2.0, 2.0));
        let mixed = reply(&p1 * weight + &p2 * (1.0 - weight));
        let expected = reply(p1) * weight + reply(p2) * (1.0 - weight);
        prop_assert!((mixed - expected).amax() < 1e-9);
    }

    #[test]
    fn best_response_matches_closed_form(seed in any::<u64>(), d in 1usize..=3) {
        let mut r = rng(seed);
        let agent = random_agent(&mut r, d);
        let (a, b) = (agent.dynamics.a(), agent.dynamics.b());
        let (q, rr, x0) = (agent.utility.q().clone(), agent.utility.r().clone(), agent.utility.x0().clone());
        let x = uniform_vector(&mut r, d, -1.0, 1.0);
        let p = uniform_vector(&mut r, d, -2.0, 2.0);
        // (2BᵀQB + 2R)u = -p - 2BᵀQ(Ax - x0)
        let lhs = (b.transpose() * &q * b + &rr) * 2.0;
        let rhs = -&p - b.transpose() * &q * (a * &x - &x0) * 2.0;
        let closed = lhs.lu().solve(&rhs).unwrap();
        let utility = Utility::from(agent.utility);
        let game = GameSpec::utility_only(&utility).with_price(p);
        let u = best_response(&game, &x, &agent.dynamics, &Vector::zeros(d), &BestResponseConfig::default()).unwrap();
        prop_assert!((u - closed).amax() < 1e-9);
    }

    #[test]
    fn quadratic_utility_is_strictly_concave_in_action(seed in any::<u64>(), d in 1usize..=3) {
        let mut r = rng(seed);
        let agent = random_agent(&mut r, d);
        let h = agent.utility.hessian_u(&agent.dynamics);
        prop_assert!(h.symmetric_eigenvalues().max() < 0.0);
    }

    #[test]
    fn step_is_affine_in_action(seed in any::<u64>(), d in 1usize..=3, weight in -1.0f64..2.0) {
        let mut r = rng(seed);
        let dynamics = LinearDynamics::deterministic(invertible(&mut r, d), invertible(&mut r, d)).unwrap();
        let x = SubsystemState::new(uniform_vector(&mut r, d, -1.0, 1.0)).unwrap();
        let (u1, u2) = (uniform_vector(&mut r, d, -1.0, 1.0), uniform_vector(&mut r, d, -1.0, 1.0));
        let next = |u: Vector| step(&dynamics, &x, &ControlAction::new(u).unwrap(), None).unwrap().into_vector();
        let mixed = next(&u1 * weight + &u2 * (1.0 - weight));
        let expected = next(u1) * weight + next(u2) * (1.0 - weight);
        prop_assert!((mixed - expected).amax() < 1e-12);
    }

    #[test]
    fn transport_is_linear_in_displacement(seed in any::<u64>(), d in 1usize..=3) {
        let mut r = rng(seed);
        let model = ConnectionModel {
            linear: (0..d).map(|_| uniform_vector(&mut r, 2 * d, -1.0, 1.0)).collect(),
            christoffel: (0..d).map(|_| gaussian_matrix(&mut r, 2 * d, d)).collect(),
            residual: 0.0,
            rank: 2 * d + 2 * d * d,
            rows: 0,
        };
        let z = uniform_vector(&mut r, 2 * d, -1.0, 1.0);
        let xi = uniform_vector(&mut r, d, -1.0, 1.0);
        let (dz1, dz2) = (uniform_vector(&mut r, 2 * d, -1.0, 1.0), uniform_vector(&mut r, 2 * d, -1.0, 1.0));
        let delta = |dz: &Vector| transport(&model, &z, &xi, dz).unwrap() - &xi;
        let sum = delta(&(&dz1 + &dz2));
        prop_assert!((sum - delta(&dz1) - delta(&dz2)).amax() < 1e-12);
        prop_assert!(delta(&Vector::zeros(2 * d)).amax() == 0.0);
    }

    #[test]
    fn kernel_training_residual_grows_with_ridge(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = 2;
        let dynamics = LinearDynamics::deterministic(invertible(&mut r, d), invertible(&mut r, d)).unwrap();
        let samples: Vec<Observation> = (0..25)
            .map(|t| Observation {
                t,
                agent: 0,
                x: uniform_vector(&mut r, d, -1.0, 1.0),
                u: uniform_vector(&mut r, d, -1.0, 1.0),
                p: uniform_vector(&mut r, d, -1.0, 1.0),
            })
            .collect();
        let mut last = 0.0;
        for ridge in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let model = fit_decomposable(&samples, &dynamics, Some(1.0), Some(ridge)).unwrap();
            let res = kernel_fit_residual(&model, &dynamics, &samples);
            prop_assert!(res >= last - 1e-12);
            last = res;
        }
    }

    #[test]
    fn welfare_is_sum_of_utilities_plus_coupling(seed in any::<u64>(), agents in 1usize..=4, d in 1usize..=3) {
        let mut r = rng(seed);
        let sys = random_instance(&mut r, agents, d, 0.3);
        let u = uniform_vector(&mut r, agents * d, -1.0, 1.0);
        let next = sys.next_joint_state(&u);
        let mut expected = sys.coupling().value(&next);
        for n in 0..agents {
            let un = u.rows(n * d, d).into_owned();
            expected += sys.utilities()[n].value(&next.rows(n * d, d).into_owned(), &un);
        }
        prop_assert!((social_welfare(&sys, &u).unwrap() - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn barrier_gradient_matches_differences(seed in any::<u64>(), agents in 2usize..=4, d in 2usize..=3) {
        let mut r = rng(seed);
        let barrier = SoftplusBarrier::new(r.random_range(0.1..3.0), r.random_range(0.5..2.0), d).unwrap();
        let joint = uniform_vector(&mut r, agents * d, -1.0, 1.0);
        let f = |v: &Vector| barrier.value(v);
        let fd = fd_gradient(&f, &joint, 1e-5).unwrap();
        let analytic = barrier.gradient(&joint, d);
        let scale = analytic.norm().max(fd.norm()).max(1e-8);
        prop_assert!((analytic - fd).norm() / scale < 1e-5);
    }

    #[test]
    fn step_rule_below_twice_cocoercivity_converges(seed in any::<u64>(), d in 1usize..=3, fraction in 0.05f64..0.95) {
        let mut r = rng(seed);
        let m = spd(&mut r, d, 0.5, 2.0);
        let b = uniform_vector(&mut r, d, -1.0, 1.0);
        let eval = |u: &Vector| &b - &m * u;
        let est = estimate_cocoercivity(&eval, &ActionBox::uniform(d, -1.0, 1.0).unwrap(), 200, seed).unwrap();
        let tau = 2.0 * est.c_hat * fraction;
        let field = OperatorField::new(ActionBox::unbounded(d), eval);
        let (u, _) = vi_project_iterate(&field, &Vector::zeros(d), &StepSchedule::constant(tau, 1.0, tau), 1e-10, 100_000)
            .unwrap();
        prop_assert!((&m * u - &b).amax() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_utilities_are_positive_definite(seed in any::<u64>(), agents in 1usize..=5, d in 2usize..=3) {
        let mut config = ScenarioConfig::new(agents, d, seed);
        config.coupling_strength = 0.5;
        let scenario = scenario::generate(&config).unwrap();
        for utility in scenario.instance.utilities() {
            let q = utility.as_quadratic().unwrap();
            for m in [q.q(), q.r()] {
                let eig = m.symmetric_eigenvalues();
                prop_assert!(eig.min() >= 0.5 - 1e-9 && eig.max() <= 2.0 + 1e-9);
                prop_assert!((m - m.transpose()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn log_has_one_row_per_agent_per_stage(seed in any::<u64>(), agents in 1usize..=3, horizon in 1usize..=4) {
        let mut config = ScenarioConfig::new(agents, 2, seed);
        config.horizon = horizon;
        config.coupling_strength = 0.2;
        let run = scenario::simulate(&config).unwrap();
        prop_assert_eq!(run.log.len(), horizon * agents);
        let mut bytes = Vec::new();
        run.log.write_csv(&mut bytes).unwrap();
        let lines = String::from_utf8(bytes.clone()).unwrap().lines().count();
        prop_assert_eq!(lines, horizon * agents + 1);
        let back = ObservationLog::read_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, run.log);
    }

    #[test]
    fn all_modes_agree_on_weakly_coupled_pairs(eps in 0.0f64..0.2) {
        let sys = canonical_pair(eps);
        let oracle = joint_welfare_opt(&sys).unwrap();
        for mode in PlayMode::ALL {
            let mut cfg = PollingConfig { tol: 1e-10, max_rounds: 5000, ..PollingConfig::new(mode) };
            if matches!(mode, PlayMode::TwoStage | PlayMode::SingleStage) {
                cfg.schedule.lambda = Some(Sequence::Constant(100.0));
                cfg.schedule.tau = Some(Sequence::Constant(0.1));
                cfg.schedule.gamma = Some(Sequence::Constant(0.1));
            }
            let out = run_stage(&sys, &cfg).unwrap();
            prop_assert!((&out.actions - &oracle.u_star).amax() <= 1e-6, "{mode} disagrees");
            prop_assert!(oracle.welfare >= social_welfare(&sys, &out.actions).unwrap() - 1e-6);
            prop_assert!(sys.reward_gradient(&out.actions).amax() <= 10.0 * cfg.tol, "{mode} not stationary");
        }
    }
}

#[test]
fn decoupled_quadratic_welfare_vanishes_at_reference() {
    let d = 2;
    let dynamics = LinearDynamics::deterministic(Matrix::identity(d, d), Matrix::identity(d, d)).unwrap();
    let mut r = rng(5);
    let agents: Vec<_> = (0..3).map(|_| random_agent(&mut r, d)).collect();
    let utilities: Vec<Utility> = agents.iter().map(|a| Utility::from(a.utility.clone())).collect();
    let states: Vec<Vector> = agents.iter().map(|a| a.utility.x0().clone()).collect();
    let sys = mechlearn::SystemInstance::new(
        vec![dynamics; 3],
        utilities,
        std::sync::Arc::new(mechlearn::ZeroCoupling),
        states,
    )
    .unwrap();
    let oracle = joint_welfare_opt(&sys).unwrap();
    assert!(oracle.u_star.amax() < 1e-12);
    assert!(oracle.welfare.abs() < 1e-12);
}
