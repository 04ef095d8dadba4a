//! Multi-seed orchestration, aggregation, and file emission.
//!
//! A run executes every `(controller, seed)` rollout, couples each seed's
//! controllers through common random numbers, aggregates per-step medians
//! and quartiles across seeds, and writes:
//!
//! - `rollouts.csv` — every step of every rollout, schema
//!   `t,seed,controller,x_norm2,x_norm_inf,loss,cum_loss,regret,gain_drift,zeta,constraint_active,mode,converged`;
//! - `aggregate.csv` — per-controller median/q25/q75 curves for `t = 1..=T`;
//! - `manifest.json` — config echo, artifact version, resolved seeds;
//! - `summary.json` — the per-controller comparison table;
//! - `regret.svg`, `state_norm.svg` — optional median-curve plots.
//!
//! Seed-level parallelism uses a bounded worker pool (`ALICE_BENCH_WORKERS`
//! overrides the size); results are collected in seed order so every output
//! is a pure function of `(config, base_seed)`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use alice_core::metrics::{contraction_counts, RolloutRecord};
use alice_core::{solve_dare, Mode};

use crate::config::{ControllerKind, ResolvedConfig};
use crate::rollout::{assign_regret, run_rollout, RolloutData};
use crate::svg::{line_plot, Series};

/// CSV schema of `rollouts.csv`.
pub const ROLLOUT_CSV_HEADER: &str =
    "t,seed,controller,x_norm2,x_norm_inf,loss,cum_loss,regret,gain_drift,zeta,constraint_active,mode,converged";

/// Environment variable overriding the worker-pool size.
pub const WORKERS_ENV: &str = "ALICE_BENCH_WORKERS";

const METRICS: [&str; 7] = [
    "x_norm2",
    "x_norm_inf",
    "loss",
    "cum_loss",
    "regret",
    "gain_drift",
    "zeta",
];

fn metric_value(record: &RolloutRecord, metric: &str) -> Option<f64> {
    match metric {
        "x_norm2" => Some(record.x_norm2),
        "x_norm_inf" => Some(record.x_norm_inf),
        "loss" => Some(record.loss),
        "cum_loss" => Some(record.cum_loss),
        "regret" => record.regret,
        "gain_drift" => Some(record.gain_drift),
        "zeta" => record.zeta,
        _ => unreachable!("unknown metric"),
    }
}

/// Errors from running or persisting an experiment.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(msg) => write!(f, "configuration error: {msg}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Median and quartiles of one metric at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// One metric's aggregate curve over `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct MetricCurve {
    pub name: &'static str,
    pub per_t: Vec<Option<Quartiles>>,
}

/// All aggregate curves of one controller.
#[derive(Debug, Clone)]
pub struct ControllerAggregate {
    pub controller: ControllerKind,
    pub metrics: Vec<MetricCurve>,
}

impl ControllerAggregate {
    pub fn metric(&self, name: &str) -> &MetricCurve {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .expect("known metric name")
    }
}

/// Comparison-table row for one controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: String,
    pub completed: usize,
    pub diverged: usize,
    pub terminal_median_regret: Option<f64>,
    /// Mean over the last fifth of the horizon of the median state norm.
    pub steady_state_norm: Option<f64>,
    pub contraction_frequency: Option<f64>,
    pub solver_convergence_rate: Option<f64>,
}

/// All rollouts of one seed, in configured controller order.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rollouts: Vec<RolloutData>,
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed_runs: Vec<SeedRun>,
    pub aggregates: Vec<ControllerAggregate>,
    pub summaries: Vec<ControllerSummary>,
}

impl RunOutput {
    pub fn all_rollouts_diverged(&self) -> bool {
        self.seed_runs
            .iter()
            .all(|sr| sr.rollouts.iter().all(|r| r.diverged_at.is_some()))
    }

    pub fn aggregate(&self, kind: ControllerKind) -> Option<&ControllerAggregate> {
        self.aggregates.iter().find(|a| a.controller == kind)
    }

    pub fn rollouts_of(&self, kind: ControllerKind) -> impl Iterator<Item = &RolloutData> {
        self.seed_runs
            .iter()
            .flat_map(move |sr| sr.rollouts.iter().filter(move |r| r.controller == kind))
    }
}

fn worker_pool() -> Result<rayon::ThreadPool, RunError> {
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Config(format!("cannot build worker pool: {e}")))
}

/// Executes every rollout and aggregates, without touching the filesystem.
pub fn execute(cfg: &ResolvedConfig) -> Result<RunOutput, RunError> {
    let a0 = cfg.plant.a_schedule.matrix_at(0);
    let lqr = solve_dare(&a0, &cfg.plant.b, cfg.alice.eta, cfg.alice.beta)
        .map_err(|e| RunError::Config(format!("plant comparator: {e}")))?;
    let k_star = lqr.k_star;

    let pool = worker_pool()?;
    let seed_runs: Result<Vec<SeedRun>, RunError> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                // The comparator rollout is always computed: it defines the
                // regret column for everyone sharing this seed's noise.
                let reference = run_rollout(cfg, ControllerKind::LqrOracle, &k_star, seed)
                    .map_err(|e| RunError::Config(e.to_string()))?;
                let reference_cum = reference.cum_losses();
                let mut rollouts = Vec::with_capacity(cfg.controllers.len());
                for &kind in &cfg.controllers {
                    let mut data = if kind == ControllerKind::LqrOracle {
                        reference.clone()
                    } else {
                        run_rollout(cfg, kind, &k_star, seed)
                            .map_err(|e| RunError::Config(e.to_string()))?
                    };
                    assign_regret(&mut data.records, &reference_cum);
                    rollouts.push(data);
                }
                Ok(SeedRun { seed, rollouts })
            })
            .collect()
    });
    let seed_runs = seed_runs?;

    let aggregates = aggregate(cfg, &seed_runs);
    let summaries = summarize(cfg, &seed_runs, &aggregates);
    Ok(RunOutput {
        seed_runs,
        aggregates,
        summaries,
    })
}

/// Runs the experiment and writes all output files into `cfg.out_dir`.
pub fn run(cfg: &ResolvedConfig) -> Result<RunOutput, RunError> {
    let output = execute(cfg)?;
    write_outputs(cfg, &output)?;
    Ok(output)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn aggregate(cfg: &ResolvedConfig, seed_runs: &[SeedRun]) -> Vec<ControllerAggregate> {
    cfg.controllers
        .iter()
        .map(|&kind| {
            let rollouts: Vec<&RolloutData> = seed_runs
                .iter()
                .flat_map(|sr| sr.rollouts.iter().filter(|r| r.controller == kind))
                .collect();
            let metrics = METRICS
                .iter()
                .map(|&name| {
                    let per_t = (1..=cfg.horizon)
                        .map(|t| {
                            let mut values: Vec<f64> = rollouts
                                .iter()
                                .filter_map(|r| r.records.get(t))
                                .filter_map(|rec| metric_value(rec, name))
                                .filter(|v| v.is_finite())
                                .collect();
                            if values.is_empty() {
                                return None;
                            }
                            values.sort_by(|a, b| a.total_cmp(b));
                            Some(Quartiles {
                                median: quantile(&values, 0.5),
                                q25: quantile(&values, 0.25),
                                q75: quantile(&values, 0.75),
                            })
                        })
                        .collect();
                    MetricCurve { name, per_t }
                })
                .collect();
            ControllerAggregate {
                controller: kind,
                metrics,
            }
        })
        .collect()
}

fn summarize(
    cfg: &ResolvedConfig,
    seed_runs: &[SeedRun],
    aggregates: &[ControllerAggregate],
) -> Vec<ControllerSummary> {
    aggregates
        .iter()
        .map(|agg| {
            let kind = agg.controller;
            let rollouts: Vec<&RolloutData> = seed_runs
                .iter()
                .flat_map(|sr| sr.rollouts.iter().filter(|r| r.controller == kind))
                .collect();
            let diverged = rollouts.iter().filter(|r| r.diverged_at.is_some()).count();
            let completed = rollouts.len() - diverged;

            let regret_curve = agg.metric("regret");
            let terminal_median_regret = regret_curve
                .per_t
                .iter()
                .rev()
                .find_map(|q| q.map(|v| v.median));

            let window = cfg.horizon.max(5) / 5;
            let norm_curve = agg.metric("x_norm2");
            let tail: Vec<f64> = norm_curve
                .per_t
                .iter()
                .skip(cfg.horizon.saturating_sub(window))
                .filter_map(|q| q.map(|v| v.median))
                .collect();
            let steady_state_norm = if tail.is_empty() {
                None
            } else {
                Some(tail.iter().sum::<f64>() / tail.len() as f64)
            };

            let (mut satisfied, mut counted) = (0usize, 0usize);
            let (mut active, mut converged_active) = (0usize, 0usize);
            for r in &rollouts {
                let (s, c) = contraction_counts(&r.records, cfg.alice.alpha);
                satisfied += s;
                counted += c;
                if kind == ControllerKind::Alice {
                    for rec in &r.records {
                        if rec.mode == Mode::Active {
                            active += 1;
                            if rec.converged {
                                converged_active += 1;
                            }
                        }
                    }
                }
            }
            let contraction_frequency = if counted > 0 {
                Some(satisfied as f64 / counted as f64)
            } else {
                None
            };
            let solver_convergence_rate = if active > 0 {
                Some(converged_active as f64 / active as f64)
            } else {
                None
            };

            ControllerSummary {
                controller: kind.name().to_string(),
                completed,
                diverged,
                terminal_median_regret,
                steady_state_norm,
                contraction_frequency,
                solver_convergence_rate,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every output file of a finished run.
pub fn write_outputs(cfg: &ResolvedConfig, output: &RunOutput) -> Result<(), RunError> {
    fs::create_dir_all(&cfg.out_dir)?;

    let file = fs::File::create(cfg.out_dir.join("rollouts.csv"))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{ROLLOUT_CSV_HEADER}")?;
    for sr in &output.seed_runs {
        for rollout in &sr.rollouts {
            for rec in &rollout.records {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    rec.t,
                    sr.seed,
                    rollout.controller,
                    rec.x_norm2,
                    rec.x_norm_inf,
                    rec.loss,
                    rec.cum_loss,
                    fmt_opt(rec.regret),
                    rec.gain_drift,
                    fmt_opt(rec.zeta),
                    rec.constraint_active,
                    rec.mode,
                    rec.converged
                )?;
            }
        }
    }
    w.flush()?;

    let file = fs::File::create(cfg.out_dir.join("aggregate.csv"))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("t,controller");
    for name in METRICS {
        header.push_str(&format!(",{name}_median,{name}_q25,{name}_q75"));
    }
    writeln!(w, "{header}")?;
    for agg in &output.aggregates {
        for (idx, t) in (1..=cfg.horizon).enumerate() {
            let mut line = format!("{t},{}", agg.controller);
            for metric in &agg.metrics {
                match metric.per_t[idx] {
                    Some(q) => {
                        line.push_str(&format!(",{},{},{}", q.median, q.q25, q.q75));
                    }
                    None => line.push_str(",,,"),
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;

    let manifest = serde_json::json!({
        "artifact": {
            "name": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
        },
        "config": cfg.dto,
        "resolved_seeds": cfg.seeds,
    });
    fs::write(
        cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n",
    )?;

    fs::write(
        cfg.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&output.summaries).expect("serializable summary") + "\n",
    )?;

    if cfg.emit_svg {
        let median_series = |metric: &str| -> Vec<Series> {
            output
                .aggregates
                .iter()
                .map(|agg| Series {
                    label: agg.controller.name().to_string(),
                    points: agg
                        .metric(metric)
                        .per_t
                        .iter()
                        .enumerate()
                        .filter_map(|(i, q)| q.map(|v| ((i + 1) as f64, v.median)))
                        .collect(),
                })
                .filter(|s| !s.points.is_empty())
                .collect()
        };
        fs::write(
            cfg.out_dir.join("regret.svg"),
            line_plot(
                "median regret",
                "t",
                "median cumulative regret",
                &median_series("regret"),
                false,
            ),
        )?;
        fs::write(
            cfg.out_dir.join("state_norm.svg"),
            line_plot(
                "median state norm",
                "t",
                "median ||x||_2",
                &median_series("x_norm2"),
                true,
            ),
        )?;
    }
    Ok(())
}

/// Renders the comparison table of a finished run directory.
pub fn compare(run_dir: &Path) -> Result<String, RunError> {
    let path = run_dir.join("summary.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let summaries: Vec<ControllerSummary> = serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("cannot parse {}: {e}", path.display())))?;

    let fmt_num = |v: Option<f64>| -> String {
        match v {
            None => "-".to_string(),
            Some(x) if x.abs() >= 1e5 => format!("{x:.3e}"),
            Some(x) => format!("{x:.4}"),
        }
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>16} {:>13} {:>12} {:>10} {:>10}\n",
        "controller", "terminal_regret", "steady_norm", "contraction", "conv_rate", "diverged"
    ));
    for s in &summaries {
        out.push_str(&format!(
            "{:<12} {:>16} {:>13} {:>12} {:>10} {:>7}/{}\n",
            s.controller,
            fmt_num(s.terminal_median_regret),
            fmt_num(s.steady_state_norm),
            fmt_num(s.contraction_frequency),
            fmt_num(s.solver_convergence_rate),
            s.diverged,
            s.completed + s.diverged,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SeedSpec;
    use crate::presets::preset;

    fn tiny_exp1(seeds: usize, horizon: usize) -> ResolvedConfig {
        let mut dto = preset("exp1").unwrap();
        dto.seeds = SeedSpec::Count(seeds);
        dto.horizon = horizon;
        dto.resolve().unwrap()
    }

    #[test]
    fn execute_produces_full_shape() {
        let cfg = tiny_exp1(3, 25);
        let out = execute(&cfg).unwrap();
        assert_eq!(out.seed_runs.len(), 3);
        for sr in &out.seed_runs {
            assert_eq!(sr.rollouts.len(), 4);
        }
        assert_eq!(out.aggregates.len(), 4);
        for agg in &out.aggregates {
            for metric in &agg.metrics {
                assert_eq!(metric.per_t.len(), 25);
            }
        }
        assert!(!out.all_rollouts_diverged());
    }

    #[test]
    fn noise_is_shared_within_each_seed() {
        let cfg = tiny_exp1(2, 20);
        let out = execute(&cfg).unwrap();
        for sr in &out.seed_runs {
            let complete: Vec<u64> = sr
                .rollouts
                .iter()
                .filter(|r| r.diverged_at.is_none())
                .map(|r| r.noise_hash)
                .collect();
            assert!(complete.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn oracle_regret_is_zero_and_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut dto = preset("exp1").unwrap();
        dto.seeds = SeedSpec::Count(2);
        dto.horizon = 20;
        dto.out_dir = dir.path().join("a");
        let cfg = dto.clone().resolve().unwrap();
        let out = run(&cfg).unwrap();
        for data in out.rollouts_of(ControllerKind::LqrOracle) {
            assert!(data.records.iter().all(|r| r.regret == Some(0.0)));
        }

        dto.out_dir = dir.path().join("b");
        let cfg2 = dto.resolve().unwrap();
        run(&cfg2).unwrap();
        for file in ["rollouts.csv", "aggregate.csv", "summary.json"] {
            let a = fs::read(dir.path().join("a").join(file)).unwrap();
            let b = fs::read(dir.path().join("b").join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn csv_header_is_stable() {
        assert_eq!(
            ROLLOUT_CSV_HEADER,
            "t,seed,controller,x_norm2,x_norm_inf,loss,cum_loss,regret,gain_drift,zeta,constraint_active,mode,converged"
        );
    }

    #[test]
    fn compare_renders_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut dto = preset("exp1").unwrap();
        dto.seeds = SeedSpec::Count(2);
        dto.horizon = 15;
        dto.out_dir = dir.path().to_path_buf();
        let cfg = dto.resolve().unwrap();
        run(&cfg).unwrap();
        let table = compare(dir.path()).unwrap();
        assert!(table.contains("alice"));
        assert!(table.contains("lqr_oracle"));
        assert!(table.contains("controller"));
    }

    #[test]
    fn svg_files_written_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let mut dto = preset("exp1").unwrap();
        dto.seeds = SeedSpec::Count(2);
        dto.horizon = 15;
        dto.emit_svg = true;
        dto.out_dir = dir.path().to_path_buf();
        let cfg = dto.resolve().unwrap();
        run(&cfg).unwrap();
        let svg = fs::read_to_string(dir.path().join("state_norm.svg")).unwrap();
        assert!(svg.contains("<svg"));
        assert!(dir.path().join("regret.svg").exists());
        assert!(dir.path().join("manifest.json").exists());
    }
}
