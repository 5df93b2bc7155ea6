//! Price-based mechanism learning for coordinating selfish subsystems.
//!
//! A coordinator observes the states and actions of `N` autonomous subsystems
//! whose utilities are private. It poses games to them (linear prices, shared
//! coupling rewards, proximal penalties) so that each subsystem maximizing its
//! own reward ends up at the social-welfare optimum.
//!
//! - [`model`]: linear dynamics, private utilities, coupling functions.
//! - [`agents`]: the selfish best response to a posed game.
//! - [`mechanism`]: welfare, incentive prices, the polling protocol.
//! - [`equilibrium`]: fictitious-play variants and the projection VI solver.
//! - [`parametric`]: least-squares identification of quadratic utilities.
//! - [`geometry`]: connection and kernel learning of utility-gradient fields.
//! - [`oracle`]: independent reference solutions used for validation.
//! - [`scenario`]: synthetic UAM instances, configuration and data files.
//!
//! Sign convention: the coupling function `G` is *added* everywhere. Welfare
//! is `Σ U_n + G`, the reward a subsystem sees in fictitious play is
//! `U_n + G`, and a collision penalty is supplied as `G = -penalty`.

pub mod agents;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod mechanism;
pub mod model;
pub mod oracle;
pub mod parametric;
pub mod scenario;

mod linalg;
mod solver;

pub use error::{Error, NonConvergence, Result};
pub use linalg::{Matrix, Vector};

pub use agents::{best_response, payoff_value, BestResponseConfig, FrozenCoupling, GameSpec, Proximal};
pub use equilibrium::{
    ActionBox, CoCoercivityEstimate, OperatorField, PlayMode, Sequence, StepSchedule, TraceRow, PollingTrace,
};
pub use mechanism::{message_space_dimension, price_from_target, run_stage, social_welfare, PollingConfig, SystemInstance};
pub use model::{
    CouplingFunction, LinearDynamics, QuadraticCoupling, QuadraticUtility, SmoothUtility, SoftplusBarrier, Utility,
    ZeroCoupling,
};
pub use parametric::{EstimatedQuadraticModel, Observation, ObservationLog};
pub use scenario::ScenarioConfig;
