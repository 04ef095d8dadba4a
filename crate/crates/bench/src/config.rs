//! JSON experiment configuration and its validated, resolved form.
//!
//! The on-disk schema is a single JSON document; matrices are row-major
//! nested arrays and the transition schedule is a tagged union:
//!
//! ```json
//! {
//!   "plant": {
//!     "a_schedule": { "type": "constant", "matrix": [[1.01, 0.0], [0.0, 1.0]] },
//!     "b": [[1.0, 0.0], [0.0, 1.0]],
//!     "sigma": [1.0, 1.0],
//!     "x0_mean": [0.0, 0.0],
//!     "x0_cov": [[0.0, 0.0], [0.0, 0.0]]
//!   },
//!   "alice": { "eta": 10.0, "beta": 1.0, "alpha": 0.9, "lambda": 0.001,
//!              "gamma": 1.2, "t_w": 1, "t_c": 1 },
//!   "controllers": ["alice", "lqr_oracle", "zero", "random"],
//!   "horizon": 500,
//!   "seeds": 100,
//!   "base_seed": 7,
//!   "out_dir": "runs/exp1",
//!   "emit_svg": false
//! }
//! ```
//!
//! `"seeds"` is either a count (rollout seeds are derived from `base_seed`)
//! or an explicit list of seeds. Schedule variants: `constant {matrix}`,
//! `piecewise {pieces: [{start, matrix}]}`, `ramp {base, slope}` where the
//! matrix at step `t` is `base + t * slope`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use alice_core::{ASchedule, AliceParams, PlantConfig};
use alice_core::rng::split_seed;

/// A configuration could not be parsed or validated.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Which controllers a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Alice,
    LqrOracle,
    Zero,
    Random,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Alice,
        ControllerKind::LqrOracle,
        ControllerKind::Zero,
        ControllerKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Alice => "alice",
            ControllerKind::LqrOracle => "lqr_oracle",
            ControllerKind::Zero => "zero",
            ControllerKind::Random => "random",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Transition-matrix schedule, JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AScheduleDto {
    Constant { matrix: Vec<Vec<f64>> },
    Piecewise { pieces: Vec<PieceDto> },
    Ramp { base: Vec<Vec<f64>>, slope: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PieceDto {
    pub start: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// Plant description, JSON form. Dimensions are inferred from `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantDto {
    pub a_schedule: AScheduleDto,
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub x0_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_cov: Option<Vec<Vec<f64>>>,
}

/// Controller hyper-parameters, JSON form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AliceDto {
    pub eta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub t_w: usize,
    pub t_c: usize,
}

/// Seed specification: a count or an explicit list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(usize),
    List(Vec<u64>),
}

/// The whole experiment, JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plant: PlantDto,
    pub alice: AliceDto,
    pub controllers: Vec<ControllerKind>,
    pub horizon: usize,
    pub seeds: SeedSpec,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))
    }

    /// Validates the document and converts it into solver-ready types.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let b = matrix_from(&self.b_rows(), "b")?;
        let n = b.nrows();
        let a_schedule = match &self.plant.a_schedule {
            AScheduleDto::Constant { matrix } => {
                ASchedule::constant(matrix_from(matrix, "a_schedule.matrix")?)
            }
            AScheduleDto::Piecewise { pieces } => {
                let mut out = Vec::new();
                for p in pieces {
                    out.push((p.start, matrix_from(&p.matrix, "a_schedule.pieces")?));
                }
                ASchedule::piecewise(out)
            }
            AScheduleDto::Ramp { base, slope } => {
                ASchedule::constant(matrix_from(base, "a_schedule.base")?)
                    .with_ramp(matrix_from(slope, "a_schedule.slope")?)
            }
        };
        let sigma = DVector::from_row_slice(&self.plant.sigma);
        let x0_mean = DVector::from_row_slice(&self.plant.x0_mean);
        let mut plant = PlantConfig::new(a_schedule, b, sigma, x0_mean);
        if let Some(cov) = &self.plant.x0_cov {
            plant = plant.with_x0_cov(matrix_from(cov, "x0_cov")?);
        }
        plant.validate().map_err(|e| ConfigError(e.to_string()))?;
        if n == 0 {
            return Err(ConfigError("empty plant".into()));
        }

        let alice = AliceParams {
            eta: self.alice.eta,
            beta: self.alice.beta,
            alpha: self.alice.alpha,
            lambda: self.alice.lambda,
            gamma: self.alice.gamma,
            t_w: self.alice.t_w,
            t_c: self.alice.t_c,
            horizon: self.horizon,
        };
        alice.validate().map_err(|e| ConfigError(e.to_string()))?;

        if self.horizon == 0 {
            return Err(ConfigError("horizon must be at least 1".into()));
        }
        if self.controllers.is_empty() {
            return Err(ConfigError("at least one controller is required".into()));
        }
        let seeds = match &self.seeds {
            SeedSpec::Count(0) => return Err(ConfigError("at least one seed is required".into())),
            SeedSpec::Count(k) => (0..*k as u64).map(|i| split_seed(self.base_seed, i)).collect(),
            SeedSpec::List(list) if list.is_empty() => {
                return Err(ConfigError("at least one seed is required".into()))
            }
            SeedSpec::List(list) => list.clone(),
        };

        let sigma_norm = plant.sigma.norm();
        Ok(ResolvedConfig {
            plant,
            alice,
            sigma_norm,
            controllers: self.controllers.clone(),
            horizon: self.horizon,
            seeds,
            base_seed: self.base_seed,
            out_dir: self.out_dir.clone(),
            emit_svg: self.emit_svg,
            dto: self.clone(),
        })
    }

    fn b_rows(&self) -> Vec<Vec<f64>> {
        self.plant.b.clone()
    }
}

fn matrix_from(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(ConfigError(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError(format!("{what}: ragged or empty rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError(format!("{what}: non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub plant: PlantConfig,
    pub alice: AliceParams,
    /// `||sigma||`, the one noise statistic the controller is told.
    pub sigma_norm: f64,
    pub controllers: Vec<ControllerKind>,
    pub horizon: usize,
    /// Fully resolved rollout seeds, one per Monte-Carlo repetition.
    pub seeds: Vec<u64>,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub emit_svg: bool,
    /// The original document, echoed into the run manifest.
    pub dto: ExperimentConfig,
}
