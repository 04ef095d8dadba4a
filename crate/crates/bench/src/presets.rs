//! Built-in experiment presets.
//!
//! All three benchmark plants share the weakly coupled, marginally unstable
//! 3-node chain with `B = I`, `eta = 10`, `beta = 1` and the uniform
//! controller settings `gamma = 1.2`, `alpha = 0.9`, `lambda = 1e-3`,
//! `t_w = 1`, `t_c = 1`:
//!
//! - `exp1` — fixed plant, unit noise, zero start; the regret benchmark.
//! - `exp2` — the top-left transition entry jumps from 1.01 to 4.01 at
//!   `t = 10`; low noise, far-from-origin start; tests online adaptation to
//!   an adversarial switch.
//! - `exp3` — the top-left entry ramps as `1.01 + 0.1 t`; tests tracking of
//!   a continuously drifting plant. The horizon stops at 100 because beyond
//!   `||A|| ≈ 11 = (eta + beta) / beta` no admissible gain can contract the
//!   plant any more.
//! - `exp1_noiseless` — `exp1` with the noise off, `lambda = 0`, `t_w = 3`
//!   and the contraction constraint disabled; in this regime the controller
//!   provably locks onto a closed-form gain, so the preset exists for
//!   verification.
//!
//! Horizons and seed counts are desk-scale defaults, declared in the run
//! manifest rather than claimed to match any external figure.

use std::path::PathBuf;

use crate::config::{
    AScheduleDto, AliceDto, ConfigError, ControllerKind, ExperimentConfig, PieceDto, PlantDto,
    SeedSpec,
};

/// Default base seed of every preset.
pub const DEFAULT_BASE_SEED: u64 = 7;

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = ["exp1", "exp2", "exp3", "exp1_noiseless"];

fn chain_matrix(top_left: f64) -> Vec<Vec<f64>> {
    vec![
        vec![top_left, 0.01, 0.0],
        vec![0.01, 1.01, 0.01],
        vec![0.0, 0.01, 1.01],
    ]
}

fn identity3() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]
}

fn standard_alice() -> AliceDto {
    AliceDto {
        eta: 10.0,
        beta: 1.0,
        alpha: 0.9,
        lambda: 1e-3,
        gamma: 1.2,
        t_w: 1,
        t_c: 1,
    }
}

/// Returns the named preset configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = match name {
        "exp1" => ExperimentConfig {
            plant: PlantDto {
                a_schedule: AScheduleDto::Constant {
                    matrix: chain_matrix(1.01),
                },
                b: identity3(),
                sigma: vec![1.0, 1.0, 1.0],
                x0_mean: vec![0.0, 0.0, 0.0],
                x0_cov: None,
            },
            alice: standard_alice(),
            controllers: vec![
                ControllerKind::Alice,
                ControllerKind::LqrOracle,
                ControllerKind::Zero,
                ControllerKind::Random,
            ],
            horizon: 500,
            seeds: SeedSpec::Count(100),
            base_seed: DEFAULT_BASE_SEED,
            out_dir: PathBuf::from("runs/exp1"),
            emit_svg: false,
        },
        "exp2" => ExperimentConfig {
            plant: PlantDto {
                a_schedule: AScheduleDto::Piecewise {
                    pieces: vec![
                        PieceDto {
                            start: 0,
                            matrix: chain_matrix(1.01),
                        },
                        PieceDto {
                            start: 10,
                            matrix: chain_matrix(4.01),
                        },
                    ],
                },
                b: identity3(),
                sigma: vec![0.1, 0.1, 0.1],
                x0_mean: vec![5.0, 5.0, 5.0],
                x0_cov: None,
            },
            alice: standard_alice(),
            controllers: vec![ControllerKind::Alice, ControllerKind::LqrOracle],
            horizon: 200,
            seeds: SeedSpec::Count(100),
            base_seed: DEFAULT_BASE_SEED,
            out_dir: PathBuf::from("runs/exp2"),
            emit_svg: false,
        },
        "exp3" => {
            let mut slope = vec![vec![0.0; 3]; 3];
            slope[0][0] = 0.1;
            ExperimentConfig {
                plant: PlantDto {
                    a_schedule: AScheduleDto::Ramp {
                        base: chain_matrix(1.01),
                        slope,
                    },
                    b: identity3(),
                    sigma: vec![0.1, 0.1, 0.1],
                    x0_mean: vec![5.0, 5.0, 5.0],
                    x0_cov: None,
                },
                alice: standard_alice(),
                controllers: vec![ControllerKind::Alice, ControllerKind::LqrOracle],
                horizon: 100,
                seeds: SeedSpec::Count(100),
                base_seed: DEFAULT_BASE_SEED,
                out_dir: PathBuf::from("runs/exp3"),
                emit_svg: false,
            }
        }
        "exp1_noiseless" => {
            let horizon = 400;
            let mut alice = standard_alice();
            alice.lambda = 0.0;
            alice.t_w = 3;
            alice.t_c = horizon + 1; // never: disables the constraint
            ExperimentConfig {
                plant: PlantDto {
                    a_schedule: AScheduleDto::Constant {
                        matrix: chain_matrix(1.01),
                    },
                    b: identity3(),
                    sigma: vec![0.0, 0.0, 0.0],
                    x0_mean: vec![0.0, 0.0, 0.0],
                    x0_cov: None,
                },
                alice,
                controllers: vec![ControllerKind::Alice, ControllerKind::LqrOracle],
                horizon,
                seeds: SeedSpec::Count(1),
                base_seed: DEFAULT_BASE_SEED,
                out_dir: PathBuf::from("runs/exp1_noiseless"),
                emit_svg: false,
            }
        }
        other => {
            return Err(ConfigError(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}
