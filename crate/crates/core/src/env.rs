//! Linear Gauss-Markov plant simulation.
//!
//! The environment evolves as
//!
//! ```text
//! x_{t+1} = A_t x_t + B u_t + w_{t+1},    w_{t+1} ~ N(0, diag(sigma^2))
//! ```
//!
//! with exact state observation. `A_t` may change over time: the schedule
//! supports piecewise-constant switches and a per-entry linear ramp, which
//! covers fixed, adversarially switched, and continuously drifting plants
//! with one mechanism.
//!
//! The transition matrix is deliberately kept away from controllers: the
//! controller-facing surface is `observe()` (the exact state) plus whatever
//! the harness hands over at construction time (`B`, the noise scale). Only
//! harness-side code such as the LQR oracle reads `A` out of [`PlantConfig`].

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::linalg::psd_factor;
use crate::rng::{standard_normal, STREAM_NOISE, STREAM_X0};

/// Rollouts abort once the state leaves this box; unstable plants must fail
/// loudly rather than silently overflow to infinities.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Simulation errors.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    /// Invalid plant description (dimension mismatch, non-PSD covariance, ...).
    Config(String),
    /// The action fed to `step` was non-finite or mis-sized.
    InvalidAction { step: usize },
    /// The state became non-finite or left the divergence box at `step`.
    Diverged { step: usize },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::Config(msg) => write!(f, "invalid plant configuration: {msg}"),
            EnvError::InvalidAction { step } => {
                write!(f, "invalid action at step {step}")
            }
            EnvError::Diverged { step } => {
                write!(f, "state diverged at step {step}")
            }
        }
    }
}

impl std::error::Error for EnvError {}

/// Time schedule for the transition matrix.
///
/// `matrix_at(t)` returns the active piecewise segment plus `t * ramp`.
#[derive(Debug, Clone, PartialEq)]
pub struct ASchedule {
    pieces: Vec<(usize, DMatrix<f64>)>,
    ramp: Option<DMatrix<f64>>,
}

impl ASchedule {
    /// A fixed transition matrix.
    pub fn constant(a: DMatrix<f64>) -> Self {
        Self {
            pieces: vec![(0, a)],
            ramp: None,
        }
    }

    /// Piecewise-constant schedule from `(start_step, matrix)` pairs.
    ///
    /// Pairs are sorted by start step; the earliest must start at 0.
    pub fn piecewise(mut pieces: Vec<(usize, DMatrix<f64>)>) -> Self {
        pieces.sort_by_key(|&(start, _)| start);
        Self {
            pieces,
            ramp: None,
        }
    }

    /// Adds a linear ramp: `matrix_at(t)` gains an extra `t * ramp` term.
    pub fn with_ramp(mut self, ramp: DMatrix<f64>) -> Self {
        self.ramp = Some(ramp);
        self
    }

    /// The transition matrix in effect at step `t`.
    pub fn matrix_at(&self, t: usize) -> DMatrix<f64> {
        let base = self
            .pieces
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .map(|(_, a)| a)
            .unwrap_or(&self.pieces[0].1);
        match &self.ramp {
            None => base.clone(),
            Some(r) => base + r * (t as f64),
        }
    }

    fn validate(&self, n: usize) -> Result<(), EnvError> {
        if self.pieces.is_empty() {
            return Err(EnvError::Config("A-schedule has no pieces".into()));
        }
        if self.pieces[0].0 != 0 {
            return Err(EnvError::Config(
                "A-schedule must have a piece starting at step 0".into(),
            ));
        }
        for (start, a) in &self.pieces {
            if a.nrows() != n || a.ncols() != n {
                return Err(EnvError::Config(format!(
                    "A at step {start} is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        if let Some(r) = &self.ramp {
            if r.nrows() != n || r.ncols() != n {
                return Err(EnvError::Config("ramp matrix has wrong shape".into()));
            }
        }
        Ok(())
    }
}

/// Full description of the plant, including the parts hidden from controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// State dimension.
    pub n: usize,
    /// Action dimension.
    pub m: usize,
    /// Transition-matrix schedule (the secret `A_t`).
    pub a_schedule: ASchedule,
    /// State-action alignment matrix, the one piece of dynamics controllers see.
    pub b: DMatrix<f64>,
    /// Per-coordinate noise standard deviations.
    pub sigma: DVector<f64>,
    /// Mean of the initial state.
    pub x0_mean: DVector<f64>,
    /// Covariance of the initial state (all-zero for a deterministic start).
    pub x0_cov: DMatrix<f64>,
}

impl PlantConfig {
    /// Plant with a deterministic initial state (`x0_cov = 0`).
    pub fn new(
        a_schedule: ASchedule,
        b: DMatrix<f64>,
        sigma: DVector<f64>,
        x0_mean: DVector<f64>,
    ) -> Self {
        let n = b.nrows();
        let m = b.ncols();
        let x0_cov = DMatrix::zeros(n, n);
        Self {
            n,
            m,
            a_schedule,
            b,
            sigma,
            x0_mean,
            x0_cov,
        }
    }

    /// Replaces the initial-state covariance.
    pub fn with_x0_cov(mut self, cov: DMatrix<f64>) -> Self {
        self.x0_cov = cov;
        self
    }

    /// Checks all dimension and sign invariants.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n == 0 || self.m == 0 {
            return Err(EnvError::Config("dimensions must be positive".into()));
        }
        if self.b.nrows() != self.n || self.b.ncols() != self.m {
            return Err(EnvError::Config(format!(
                "B is {}x{}, expected {}x{}",
                self.b.nrows(),
                self.b.ncols(),
                self.n,
                self.m
            )));
        }
        self.a_schedule.validate(self.n)?;
        if self.sigma.len() != self.n {
            return Err(EnvError::Config("sigma has wrong length".into()));
        }
        if self.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(EnvError::Config(
                "sigma entries must be finite and nonnegative".into(),
            ));
        }
        if self.x0_mean.len() != self.n {
            return Err(EnvError::Config("x0_mean has wrong length".into()));
        }
        if self.x0_cov.nrows() != self.n || self.x0_cov.ncols() != self.n {
            return Err(EnvError::Config("x0_cov has wrong shape".into()));
        }
        let asym = (&self.x0_cov - self.x0_cov.transpose()).norm();
        if asym > 1e-9 * self.x0_cov.norm().max(1.0) {
            return Err(EnvError::Config("x0_cov is not symmetric".into()));
        }
        Ok(())
    }

    fn x0_factor(&self) -> Result<Option<DMatrix<f64>>, EnvError> {
        if self.x0_cov.iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        let tol = 1e-12 * self.x0_cov.amax().max(1.0);
        psd_factor(&self.x0_cov, tol)
            .map(Some)
            .map_err(|e| EnvError::Config(format!("x0_cov is not PSD: {e}")))
    }
}

/// The running plant: current step, current state, and its noise source.
///
/// One `EnvState` serves exactly one rollout. Process noise is drawn from
/// the `(seed, STREAM_NOISE, t)` cell, so two environments built with the
/// same seed see the identical noise realization no matter which actions
/// they receive — the coupling that makes regret comparisons fair.
#[derive(Debug, Clone)]
pub struct EnvState {
    config: PlantConfig,
    seed: u64,
    t: usize,
    x: DVector<f64>,
    noise_hash: u64,
}

impl EnvState {
    /// Validates the configuration and draws the initial state.
    pub fn new(config: PlantConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let x = match config.x0_factor()? {
            None => config.x0_mean.clone(),
            Some(l) => {
                let z = standard_normal(seed, STREAM_X0, 0, config.n);
                &config.x0_mean + l * z
            }
        };
        Ok(Self {
            config,
            seed,
            t: 0,
            x,
            noise_hash: FNV_OFFSET,
        })
    }

    /// The exact current state. Never exposes `A` or the noise.
    pub fn observe(&self) -> &DVector<f64> {
        &self.x
    }

    /// Current step index.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Full plant description (harness side; holds the secret `A`).
    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// Running FNV-1a hash of every noise draw so far, for coupling checks.
    pub fn noise_hash(&self) -> u64 {
        self.noise_hash
    }

    /// Advances one step: `x_{t+1} = A_t x_t + B u + w_{t+1}`.
    ///
    /// On divergence the state is left at its last finite value and the
    /// failing step index is reported; the caller is expected to abort the
    /// rollout.
    pub fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>, EnvError> {
        if u.len() != self.config.m || u.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidAction { step: self.t });
        }
        let a = self.config.a_schedule.matrix_at(self.t);
        let z = standard_normal(self.seed, STREAM_NOISE, (self.t + 1) as u64, self.config.n);
        let w = self.config.sigma.component_mul(&z);
        for v in w.iter() {
            for byte in v.to_le_bytes() {
                self.noise_hash ^= u64::from(byte);
                self.noise_hash = self.noise_hash.wrapping_mul(FNV_PRIME);
            }
        }
        let x_next = a * &self.x + &self.config.b * u + w;
        if x_next.iter().any(|v| !v.is_finite()) || x_next.amax() > DIVERGENCE_LIMIT {
            return Err(EnvError::Diverged { step: self.t + 1 });
        }
        self.x = x_next;
        self.t += 1;
        Ok(self.x.clone())
    }
}
