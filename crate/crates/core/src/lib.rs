//! Model-free online control for linear Gauss-Markov plants.
//!
//! The centerpiece is [`Alice`], an online controller that never sees the
//! state transition matrix and never estimates it. She knows only the
//! state-action alignment matrix `B`, observes every state exactly, and at
//! each step replays her history with a hypothetical gain: each observed
//! transition can be re-simulated for any candidate gain `K` because
//! `x_i - B u_{i-1}` captures everything the unknown dynamics and noise
//! contributed. Minimizing the accumulated replay ("fantasy") losses is
//! follow-the-leader; a per-step contraction constraint on the replayed
//! state norm keeps the closed loop pointed at the origin.
//!
//! Module map:
//!
//! - [`env`] — the simulated plant, behind an information barrier.
//! - [`fantasy`] — replay states, gain parameterization, and the running
//!   sufficient statistics that represent the whole objective in O(n²).
//! - [`solver`] — the per-step constrained minimization.
//! - [`controller`] — the Alice policy loop (warm-up, coast band, update).
//! - [`lqr`] — the regret comparator `K*` (discrete Riccati fixed point)
//!   and trivial baselines. Harness-side only: it needs the true `A`.
//! - [`metrics`] — losses, regret curves, and contraction diagnostics.
//! - [`rng`] — deterministic splittable random streams.

pub mod controller;
pub mod env;
pub mod fantasy;
pub mod linalg;
pub mod lqr;
pub mod metrics;
pub mod rng;
pub mod solver;

pub use controller::{Alice, AliceParams, Mode, ParamError, StepOutcome};
pub use env::{ASchedule, EnvError, EnvState, PlantConfig};
pub use fantasy::{fantasy_state, FantasyHistory, GainMatrix, Transition};
pub use lqr::{solve_dare, Baseline, DareError, LqrSolution};
pub use metrics::{
    contraction_counts, contraction_frequency, regret_curve, step_loss, zeta_bound,
    LengthMismatch, RolloutRecord, ZetaInputs,
};
pub use solver::{
    dual_estimate, project_ball_subspace, solve_step, solve_unconstrained, BallConstraint,
    SolveReport, SolverConfig, StepProblem,
};
