//! One rollout of one controller on one seeded environment.
//!
//! Rollouts with the same seed consume the identical process-noise sequence
//! regardless of controller (common random numbers), which is what makes the
//! regret column a paired comparison. Row `t` of the log carries the state
//! `x_t`, the loss `f_t` incurred on arrival, and the decision taken at
//! `x_t`; the environment is stepped `horizon` times while decisions are
//! logged for `t = 0..=horizon`, so the final state row is complete too.

use nalgebra::{DMatrix, DVector};

use alice_core::metrics::{step_loss, zeta_bound, RolloutRecord, ZetaInputs};
use alice_core::{Alice, Baseline, EnvError, EnvState, Mode, StepOutcome};

use crate::config::{ControllerKind, ResolvedConfig};

/// Everything recorded about one rollout.
#[derive(Debug, Clone)]
pub struct RolloutData {
    pub controller: ControllerKind,
    pub seed: u64,
    /// Rows for `t = 0..=last_step`.
    pub records: Vec<RolloutRecord>,
    /// Realized losses `f_1..f_last`.
    pub losses: Vec<f64>,
    /// Step index at which the divergence guard fired, if it did.
    pub diverged_at: Option<usize>,
    pub noise_hash: u64,
}

impl RolloutData {
    /// Cumulative loss curve indexed by `t` (entry 0 is 0).
    pub fn cum_losses(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.losses.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for l in &self.losses {
            acc += l;
            out.push(acc);
        }
        out
    }
}

struct Decision {
    u: DVector<f64>,
    mode: Mode,
    constraint_active: bool,
    converged: bool,
    nu: f64,
    gain_drift: f64,
}

impl Decision {
    fn baseline(u: DVector<f64>) -> Self {
        Self {
            u,
            mode: Mode::Active,
            constraint_active: false,
            converged: true,
            nu: 0.0,
            gain_drift: 0.0,
        }
    }

    fn from_outcome(out: &StepOutcome) -> Self {
        Self {
            u: out.u.clone(),
            mode: out.mode,
            constraint_active: out.constraint_active,
            converged: out.converged && !out.fallback,
            nu: out.nu,
            gain_drift: out.gain_drift,
        }
    }
}

enum Policy {
    Alice(Box<Alice>),
    Base(Baseline),
}

fn state_row(t: usize, x: &DVector<f64>, loss: f64, cum_loss: f64) -> RolloutRecord {
    RolloutRecord {
        t,
        x_norm2: x.norm(),
        x_norm_inf: x.amax(),
        loss,
        cum_loss,
        regret: None,
        gain_drift: 0.0,
        zeta: None,
        constraint_active: false,
        mode: Mode::Coast,
        converged: true,
    }
}

/// Runs one controller for `cfg.horizon` environment steps.
pub fn run_rollout(
    cfg: &ResolvedConfig,
    kind: ControllerKind,
    k_star: &DMatrix<f64>,
    seed: u64,
) -> Result<RolloutData, EnvError> {
    let mut env = EnvState::new(cfg.plant.clone(), seed)?;
    let m = cfg.plant.m;
    let mut policy = match kind {
        ControllerKind::Alice => Policy::Alice(Box::new(
            Alice::new(cfg.alice, cfg.plant.b.clone(), cfg.sigma_norm, seed)
                .expect("validated parameters"),
        )),
        ControllerKind::LqrOracle => Policy::Base(Baseline::LqrOracle(k_star.clone())),
        ControllerKind::Zero => Policy::Base(Baseline::Zero(m)),
        ControllerKind::Random => Policy::Base(Baseline::Random { m, seed }),
    };

    let horizon = cfg.horizon;
    let eta = cfg.alice.eta;
    let beta = cfg.alice.beta;
    let mut records = Vec::with_capacity(horizon + 1);
    let mut losses = Vec::with_capacity(horizon);
    let mut cum_loss = 0.0;
    records.push(state_row(0, env.observe(), 0.0, 0.0));

    // Lagged quantities feeding the gain-drift diagnostic.
    let mut x_prev: Option<DVector<f64>> = None;
    let mut x_prev2: Option<DVector<f64>> = None;
    let mut u_prev: Option<DVector<f64>> = None;
    let mut nu_prev = 0.0;
    let mut diverged_at = None;

    for t in 0..=horizon {
        let x = env.observe().clone();
        let (decision, zeta) = match &mut policy {
            Policy::Alice(alice) => {
                let gain_before = alice.gain().k().clone();
                let gram_snapshot = alice.history().gram().clone();
                let out = alice.act(&x);
                let zeta = if out.mode == Mode::Active {
                    match (&x_prev, &x_prev2, &u_prev) {
                        (Some(xp), Some(xp2), Some(up)) => {
                            let u_hat = &gain_before * xp2;
                            zeta_bound(&ZetaInputs {
                                gram: &gram_snapshot,
                                b: &cfg.plant.b,
                                eta,
                                beta,
                                nu_t: nu_prev,
                                nu_next: out.nu,
                                x_t: &x,
                                x_prev: xp,
                                x_prev2: xp2,
                                u_prev: up,
                                u_hat_prev2: &u_hat,
                            })
                        }
                        _ => None,
                    }
                } else {
                    None
                };
                (Decision::from_outcome(&out), zeta)
            }
            Policy::Base(baseline) => (Decision::baseline(baseline.action(t, &x)), None),
        };

        let row = &mut records[t];
        row.mode = decision.mode;
        row.constraint_active = decision.constraint_active;
        row.converged = decision.converged;
        row.gain_drift = decision.gain_drift;
        row.zeta = zeta;

        if t == horizon {
            break;
        }
        match env.step(&decision.u) {
            Ok(x_new) => {
                let loss = step_loss(&x_new, &decision.u, eta, beta);
                cum_loss += loss;
                losses.push(loss);
                records.push(state_row(t + 1, &x_new, loss, cum_loss));
                if let Policy::Alice(alice) = &mut policy {
                    alice.record(&x, &decision.u, &x_new);
                }
                x_prev2 = x_prev.take();
                x_prev = Some(x);
                u_prev = Some(decision.u);
                nu_prev = decision.nu;
            }
            Err(EnvError::Diverged { step }) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(RolloutData {
        controller: kind,
        seed,
        records,
        losses,
        diverged_at,
        noise_hash: env.noise_hash(),
    })
}

/// Fills the regret column against a comparator's cumulative-loss curve.
///
/// Entries beyond the comparator's (possibly truncated) curve stay absent.
pub fn assign_regret(records: &mut [RolloutRecord], comparator_cum: &[f64]) {
    for row in records.iter_mut() {
        row.regret = comparator_cum.get(row.t).map(|c| row.cum_loss - c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    fn small_cfg() -> ResolvedConfig {
        let mut dto = preset("exp1").unwrap();
        dto.horizon = 40;
        dto.seeds = crate::config::SeedSpec::Count(2);
        dto.resolve().unwrap()
    }

    fn k_star_for(cfg: &ResolvedConfig) -> DMatrix<f64> {
        alice_core::solve_dare(
            &cfg.plant.a_schedule.matrix_at(0),
            &cfg.plant.b,
            cfg.alice.eta,
            cfg.alice.beta,
        )
        .unwrap()
        .k_star
    }

    #[test]
    fn record_shape_and_cumulative_sums() {
        let cfg = small_cfg();
        let k = k_star_for(&cfg);
        let data = run_rollout(&cfg, ControllerKind::Alice, &k, 5).unwrap();
        assert_eq!(data.records.len(), cfg.horizon + 1);
        assert_eq!(data.losses.len(), cfg.horizon);
        assert!(data.diverged_at.is_none());
        let cum = data.cum_losses();
        for (t, row) in data.records.iter().enumerate() {
            assert_eq!(row.t, t);
            assert!((row.cum_loss - cum[t]).abs() <= 1e-9 * (1.0 + cum[t].abs()));
        }
        assert_eq!(data.records[0].loss, 0.0);
        assert_eq!(data.records[0].mode, Mode::Warmup);
    }

    #[test]
    fn common_random_numbers_across_controllers() {
        let cfg = small_cfg();
        let k = k_star_for(&cfg);
        let hashes: Vec<u64> = ControllerKind::ALL
            .iter()
            .map(|&kind| run_rollout(&cfg, kind, &k, 9).unwrap().noise_hash)
            .collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rollouts_are_deterministic() {
        let cfg = small_cfg();
        let k = k_star_for(&cfg);
        let a = run_rollout(&cfg, ControllerKind::Alice, &k, 3).unwrap();
        let b = run_rollout(&cfg, ControllerKind::Alice, &k, 3).unwrap();
        assert_eq!(a.records, b.records);
        let c = run_rollout(&cfg, ControllerKind::Alice, &k, 4).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn regret_against_self_is_zero() {
        let cfg = small_cfg();
        let k = k_star_for(&cfg);
        let mut data = run_rollout(&cfg, ControllerKind::LqrOracle, &k, 3).unwrap();
        let cum = data.cum_losses();
        assign_regret(&mut data.records, &cum);
        for row in &data.records {
            assert_eq!(row.regret, Some(0.0));
        }
    }

    #[test]
    fn regret_absent_beyond_truncated_comparator() {
        let cfg = small_cfg();
        let k = k_star_for(&cfg);
        let mut data = run_rollout(&cfg, ControllerKind::Alice, &k, 3).unwrap();
        let short_cum = vec![0.0; 10]; // comparator diverged after t = 9
        assign_regret(&mut data.records, &short_cum);
        assert!(data.records[9].regret.is_some());
        assert!(data.records[10].regret.is_none());
    }

    #[test]
    fn zero_controller_on_unstable_ramp_diverges_and_truncates() {
        let mut dto = preset("exp3").unwrap();
        dto.seeds = crate::config::SeedSpec::Count(1);
        let cfg = dto.resolve().unwrap();
        let k = k_star_for(&cfg);
        let data = run_rollout(&cfg, ControllerKind::Zero, &k, 1).unwrap();
        let step = data.diverged_at.expect("the ramped plant must blow up under zero control");
        assert!(step <= cfg.horizon);
        assert_eq!(data.records.len(), step);
        assert_eq!(data.losses.len(), step - 1);
    }
}
