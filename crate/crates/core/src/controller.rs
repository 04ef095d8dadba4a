//! The Alice policy loop.
//!
//! Alice is constructed from the alignment matrix `B`, the noise scale
//! `||sigma||`, and her hyper-parameters — never the transition matrix. Each
//! step she is handed the exact current state and nothing else:
//!
//! - for the first `t_w` steps she plays random exploration actions;
//! - inside the coast band `||x|| <= 3 gamma ||sigma||` she plays zero (the
//!   noise floor is the limit of achievable regulation, so she waits until
//!   noise pushes the state back out);
//! - otherwise she re-solves the follow-the-leader problem over her replay
//!   history, subject to the contraction constraint on the newest
//!   transition, and plays `u = K x`.
//!
//! The caller owns the environment loop and feeds every realized transition
//! back through [`Alice::record`].

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::fantasy::{FantasyHistory, GainMatrix};
use crate::linalg::{column_space_projector, minimal_norm_recovery};
use crate::rng::{standard_normal, STREAM_WARMUP};
use crate::solver::{solve_step, BallConstraint, SolverConfig, StepProblem};

/// Hyper-parameters of the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AliceParams {
    /// State weight in the quadratic loss.
    pub eta: f64,
    /// Control weight in the quadratic loss.
    pub beta: f64,
    /// Per-step contraction target, in `(1/gamma, 1)`.
    pub alpha: f64,
    /// Weight of the gain-proximity penalty.
    pub lambda: f64,
    /// Steady-band factor (> 1); the coast band is `3 gamma ||sigma||`.
    pub gamma: f64,
    /// Number of initial random-action steps.
    pub t_w: usize,
    /// First step at which the contraction constraint is enforced.
    pub t_c: usize,
    /// Rollout horizon (bookkeeping only; the policy never plans ahead).
    pub horizon: usize,
}

impl AliceParams {
    /// The uniform benchmark settings: `gamma = 1.2`, `alpha = 0.9`,
    /// `lambda = 1e-3`, `t_w = 1`, `t_c = 1`.
    pub fn standard(eta: f64, beta: f64, horizon: usize) -> Self {
        Self {
            eta,
            beta,
            alpha: 0.9,
            lambda: 1e-3,
            gamma: 1.2,
            t_w: 1,
            t_c: 1,
            horizon,
        }
    }

    /// Checks the admissible ranges.
    ///
    /// `t_c` may exceed the horizon, which simply disables the constraint
    /// for the whole rollout.
    pub fn validate(&self) -> Result<(), ParamError> {
        let check = |ok: bool, name: &'static str, value: f64, constraint: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(ParamError {
                    name,
                    value,
                    constraint,
                })
            }
        };
        check(self.eta > 0.0 && self.eta.is_finite(), "eta", self.eta, "> 0")?;
        check(self.beta > 0.0 && self.beta.is_finite(), "beta", self.beta, "> 0")?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            self.lambda,
            ">= 0",
        )?;
        check(
            self.gamma > 1.0 && self.gamma.is_finite(),
            "gamma",
            self.gamma,
            "> 1",
        )?;
        check(
            self.alpha > 1.0 / self.gamma && self.alpha < 1.0,
            "alpha",
            self.alpha,
            "in (1/gamma, 1)",
        )?;
        check(self.t_w >= 1, "t_w", self.t_w as f64, ">= 1")?;
        check(self.t_c >= 1, "t_c", self.t_c as f64, ">= 1")?;
        check(self.horizon >= 1, "T", self.horizon as f64, ">= 1")?;
        Ok(())
    }
}

/// A hyper-parameter fell outside its admissible range.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parameter {} = {} violates {}",
            self.name, self.value, self.constraint
        )
    }
}

impl std::error::Error for ParamError {}

/// What kind of step the controller took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Warmup,
    Active,
    Coast,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Warmup => write!(f, "warmup"),
            Mode::Active => write!(f, "active"),
            Mode::Coast => write!(f, "coast"),
        }
    }
}

/// Per-step decision record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub u: DVector<f64>,
    pub mode: Mode,
    /// The contraction constraint held with equality at the solution.
    pub constraint_active: bool,
    /// The constraint was skipped (degenerate anchor) or dropped (infeasible).
    pub constraint_dropped: bool,
    /// Solver converged (active steps; trivially true otherwise).
    pub converged: bool,
    /// Estimated constraint multiplier of this step's solve.
    pub nu: f64,
    /// Frobenius distance between consecutive gains `||G_{t+1} - G_t||_F`.
    pub gain_drift: f64,
    /// The solve produced a non-finite result and the previous gain was reused.
    pub fallback: bool,
}

/// The online controller.
pub struct Alice {
    params: AliceParams,
    b: DMatrix<f64>,
    recovery: DMatrix<f64>,
    projector: DMatrix<f64>,
    sigma_norm: f64,
    history: FantasyHistory,
    gain: GainMatrix,
    t: usize,
    seed: u64,
    solver: SolverConfig,
}

impl Alice {
    /// Builds the controller from everything it is allowed to know.
    pub fn new(
        params: AliceParams,
        b: DMatrix<f64>,
        sigma_norm: f64,
        seed: u64,
    ) -> Result<Self, ParamError> {
        params.validate()?;
        let n = b.nrows();
        let m = b.ncols();
        let recovery = minimal_norm_recovery(&b);
        let projector = column_space_projector(&b);
        Ok(Self {
            params,
            b,
            recovery,
            projector,
            sigma_norm,
            history: FantasyHistory::new(n),
            gain: GainMatrix::zero(n, m),
            t: 0,
            seed,
            solver: SolverConfig::default(),
        })
    }

    /// The coast band edge `3 gamma ||sigma||`.
    pub fn coast_threshold(&self) -> f64 {
        3.0 * self.params.gamma * self.sigma_norm
    }

    /// Current gain.
    pub fn gain(&self) -> &GainMatrix {
        &self.gain
    }

    /// Accumulated replay statistics.
    pub fn history(&self) -> &FantasyHistory {
        &self.history
    }

    /// Steps recorded so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn params(&self) -> &AliceParams {
        &self.params
    }

    /// Chooses the action for the observed state `x_t`.
    ///
    /// The caller must afterwards advance the environment with the returned
    /// action and feed the realized transition to [`Alice::record`].
    pub fn act(&mut self, x: &DVector<f64>) -> StepOutcome {
        if self.t < self.params.t_w {
            let u = standard_normal(self.seed, STREAM_WARMUP, self.t as u64, self.b.ncols());
            return StepOutcome {
                u,
                mode: Mode::Warmup,
                constraint_active: false,
                constraint_dropped: false,
                converged: true,
                nu: 0.0,
                gain_drift: 0.0,
                fallback: false,
            };
        }
        if x.norm() <= self.coast_threshold() {
            return StepOutcome {
                u: DVector::zeros(self.b.ncols()),
                mode: Mode::Coast,
                constraint_active: false,
                constraint_dropped: false,
                converged: true,
                nu: 0.0,
                gain_drift: 0.0,
                fallback: false,
            };
        }

        let mut degenerate_anchor = false;
        let constraint = if self.t >= self.params.t_c {
            match self.history.last() {
                Some(last) if last.x_prev.norm_squared() > 0.0 => Some(BallConstraint {
                    offset: last.c.clone(),
                    anchor: last.x_prev.clone(),
                    radius: self.params.alpha * last.x_prev.norm(),
                }),
                Some(_) => {
                    // A zero anchor makes the constraint read ||c|| <= 0;
                    // unattainable under noise, so skip it this step.
                    degenerate_anchor = true;
                    None
                }
                None => None,
            }
        } else {
            None
        };

        let problem = StepProblem {
            gram: self.history.gram().clone(),
            cross: self.history.cross().clone(),
            offset_sq: self.history.offset_sq(),
            g_prev: self.gain.g().clone(),
            constraint,
            eta: self.params.eta,
            beta: self.params.beta,
            lambda: self.params.lambda,
            projector: self.projector.clone(),
        };
        let report = solve_step(&problem, self.solver.tol, self.solver.max_iters);

        let finite = report.g_opt.iter().all(|v| v.is_finite());
        if !finite {
            // Never emit a NaN action: reuse the previous gain and flag.
            return StepOutcome {
                u: self.gain.k() * x,
                mode: Mode::Active,
                constraint_active: false,
                constraint_dropped: report.constraint_dropped || degenerate_anchor,
                converged: false,
                nu: 0.0,
                gain_drift: 0.0,
                fallback: true,
            };
        }

        let gain_drift = (&report.g_opt - self.gain.g()).norm();
        self.gain = GainMatrix::recover(&report.g_opt, &self.b, &self.recovery);
        StepOutcome {
            u: self.gain.k() * x,
            mode: Mode::Active,
            constraint_active: report.constraint_active,
            constraint_dropped: report.constraint_dropped || degenerate_anchor,
            converged: report.converged,
            nu: report.nu_estimate,
            gain_drift,
            fallback: false,
        }
    }

    /// Feeds back the realized transition `(x_t, u_t, x_{t+1})`.
    pub fn record(&mut self, x_prev: &DVector<f64>, u: &DVector<f64>, x_new: &DVector<f64>) {
        self.history.accumulate(x_prev, u, x_new, &self.b);
        self.t += 1;
        debug_assert_eq!(self.t, self.history.len());
    }
}
