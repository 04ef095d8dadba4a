//! Per-step losses, regret curves, and contraction diagnostics.
//!
//! The gain-drift bound `zeta_t` tracks how far consecutive optimal gains
//! can move. With `Phi_i = x_i' ⊗ I_m` it reads
//!
//! ```text
//! zeta_t = 2 ||B|| * ||-2 nu_t Phi_{t-2}' B'B u_hat_{t-2}
//!                     + eta Phi_{t-1}' B' x_t
//!                     + (2 nu_{t+1} + beta) Phi_{t-1}' B'B u_{t-1}||
//!          / ||(eta+beta) Σ_i Phi_{i-1}' B'B Phi_{i-1}
//!             + 2 nu_{t+1} Phi_{t-1}' B'B Phi_{t-1}||
//! ```
//!
//! Materializing the Kronecker products is unnecessary: `Phi_i' z = x_i ⊗ z`
//! and `Σ Phi' B'B Phi = S ⊗ B'B`, whose spectral norm factorizes. The
//! multipliers come from the solver's least-squares dual estimates, so
//! `zeta_t` is a runtime diagnostic rather than a certified bound. A step
//! contracts when `||x_{t+1}|| <= (alpha + zeta_t) ||x_t||`; the frequency of
//! that event over active steps is the headline stability diagnostic.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::controller::Mode;
use crate::linalg::spectral_norm;

/// One logged step of a rollout.
///
/// Row `t` describes the state `x_t`, the loss `f_t` incurred on arrival,
/// and the decision the controller took at `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub t: usize,
    pub x_norm2: f64,
    pub x_norm_inf: f64,
    /// `eta/2 ||x_t||^2 + beta/2 ||u_{t-1}||^2` (zero at `t = 0`).
    pub loss: f64,
    pub cum_loss: f64,
    /// Cumulative loss minus the comparator's on the same noise; absent once
    /// the comparator rollout has diverged.
    pub regret: Option<f64>,
    pub gain_drift: f64,
    pub zeta: Option<f64>,
    pub constraint_active: bool,
    pub mode: Mode,
    pub converged: bool,
}

/// Quadratic per-step loss `eta/2 ||x_t||^2 + beta/2 ||u_{t-1}||^2`.
pub fn step_loss(x_t: &DVector<f64>, u_prev: &DVector<f64>, eta: f64, beta: f64) -> f64 {
    eta / 2.0 * x_t.norm_squared() + beta / 2.0 * u_prev.norm_squared()
}

/// The two loss sequences have different lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

impl fmt::Display for LengthMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loss sequences have different lengths: {} vs {}",
            self.left, self.right
        )
    }
}

impl std::error::Error for LengthMismatch {}

/// Cumulative regret curve `Reg_t = Σ_{i<=t} (own_i - comparator_i)`.
///
/// Both sequences must come from rollouts driven by the identical noise
/// realization (common random numbers).
pub fn regret_curve(own: &[f64], comparator: &[f64]) -> Result<Vec<f64>, LengthMismatch> {
    if own.len() != comparator.len() {
        return Err(LengthMismatch {
            left: own.len(),
            right: comparator.len(),
        });
    }
    let mut out = Vec::with_capacity(own.len());
    let mut acc = 0.0;
    for (a, o) in own.iter().zip(comparator) {
        acc += a - o;
        out.push(acc);
    }
    Ok(out)
}

/// Inputs of the gain-drift bound at step `t`.
pub struct ZetaInputs<'a> {
    /// `Σ_{i=1..t} x_{i-1} x_{i-1}'` at the time of the step-`t` solve.
    pub gram: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub eta: f64,
    pub beta: f64,
    /// Multiplier estimate from the solve at step `t-1`.
    pub nu_t: f64,
    /// Multiplier estimate from the solve at step `t`.
    pub nu_next: f64,
    pub x_t: &'a DVector<f64>,
    /// `x_{t-1}`.
    pub x_prev: &'a DVector<f64>,
    /// `x_{t-2}`.
    pub x_prev2: &'a DVector<f64>,
    /// Action actually played at step `t-1`.
    pub u_prev: &'a DVector<f64>,
    /// Replayed action `K_t x_{t-2}` of the previous gain.
    pub u_hat_prev2: &'a DVector<f64>,
}

/// `a ⊗ w`, the action of `(a' ⊗ I_m)'` on `w`.
fn kron_vec(a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let n = a.len();
    let m = w.len();
    DVector::from_fn(n * m, |idx, _| a[idx / m] * w[idx % m])
}

/// Evaluates the gain-drift bound; `None` when the denominator vanishes.
pub fn zeta_bound(z: &ZetaInputs<'_>) -> Option<f64> {
    let btb = z.b.transpose() * z.b;
    let numerator = kron_vec(z.x_prev2, &(&btb * z.u_hat_prev2)) * (-2.0 * z.nu_t)
        + kron_vec(z.x_prev, &(z.b.transpose() * z.x_t)) * z.eta
        + kron_vec(z.x_prev, &(&btb * z.u_prev)) * (2.0 * z.nu_next + z.beta);
    let hessian_state = z.gram * (z.eta + z.beta)
        + z.x_prev * z.x_prev.transpose() * (2.0 * z.nu_next);
    let denominator = spectral_norm(&hessian_state) * spectral_norm(&btb);
    if denominator <= f64::MIN_POSITIVE {
        return None;
    }
    let b_norm = spectral_norm(z.b);
    Some(2.0 * b_norm * numerator.norm() / denominator)
}

/// `(satisfied, counted)` contraction events over active steps.
///
/// Step `t` is counted when the controller was active there, `zeta_t` is
/// present, and the next state exists; it is satisfied when
/// `||x_{t+1}|| <= (alpha + zeta_t) ||x_t||`.
pub fn contraction_counts(records: &[RolloutRecord], alpha: f64) -> (usize, usize) {
    let mut satisfied = 0;
    let mut counted = 0;
    for pair in records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        if cur.mode != Mode::Active {
            continue;
        }
        let Some(zeta) = cur.zeta else { continue };
        counted += 1;
        if next.x_norm2 <= (alpha + zeta) * cur.x_norm2 {
            satisfied += 1;
        }
    }
    (satisfied, counted)
}

/// Fraction of counted active steps that contract; `None` without any.
pub fn contraction_frequency(records: &[RolloutRecord], alpha: f64) -> Option<f64> {
    let (satisfied, counted) = contraction_counts(records, alpha);
    if counted == 0 {
        None
    } else {
        Some(satisfied as f64 / counted as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn step_loss_hand_values() {
        let eta = 10.0;
        let beta = 1.0;
        assert_eq!(
            step_loss(&DVector::from_element(3, 1.0), &DVector::zeros(3), eta, beta),
            15.0
        );
        assert_eq!(step_loss(&DVector::zeros(3), &DVector::zeros(3), eta, beta), 0.0);
        assert_eq!(
            step_loss(
                &DVector::from_row_slice(&[1.0, 0.0, 0.0]),
                &DVector::from_row_slice(&[2.0, 0.0, 0.0]),
                eta,
                beta
            ),
            7.0
        );
    }

    #[test]
    fn regret_curve_basics() {
        assert_eq!(
            regret_curve(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            regret_curve(&[2.0, 2.0], &[1.0, 1.0]).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(regret_curve(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn regret_curve_is_additive() {
        // Dyadic losses keep every partial sum exact, so the increment
        // identity holds bitwise.
        let mut rng = stream_rng(1, 85, 0);
        let dyadic = |r: &mut rand_chacha::ChaCha12Rng| (r.random_range(0..160) as f64) / 8.0;
        let own: Vec<f64> = (0..50).map(|_| dyadic(&mut rng)).collect();
        let cmp: Vec<f64> = (0..50).map(|_| dyadic(&mut rng)).collect();
        let reg = regret_curve(&own, &cmp).unwrap();
        for t in 1..own.len() {
            assert_eq!(reg[t] - reg[t - 1], own[t] - cmp[t]);
        }
    }

    #[test]
    fn zeta_scalar_hand_evaluation() {
        // n = m = 1, B = 1, eta = beta = 1, multipliers zero, history
        // x0 = 1, x1 = 2, x2 = 4 at t = 2: denominator 2 (1 + 4) = 10,
        // numerator |x1 x2| = 8, zeta = 2 * 8 / 10 = 1.6.
        let gram = DMatrix::from_element(1, 1, 5.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let x_t = DVector::from_element(1, 4.0);
        let x_prev = DVector::from_element(1, 2.0);
        let x_prev2 = DVector::from_element(1, 1.0);
        let zero = DVector::zeros(1);
        let z = zeta_bound(&ZetaInputs {
            gram: &gram,
            b: &b,
            eta: 1.0,
            beta: 1.0,
            nu_t: 0.0,
            nu_next: 0.0,
            x_t: &x_t,
            x_prev: &x_prev,
            x_prev2: &x_prev2,
            u_prev: &zero,
            u_hat_prev2: &zero,
        })
        .unwrap();
        assert!((z - 1.6).abs() < 1e-12);
    }

    #[test]
    fn zeta_vanishing_numerator() {
        let gram = DMatrix::from_element(1, 1, 5.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let zero = DVector::zeros(1);
        let x_prev2 = DVector::from_element(1, 1.0);
        let z = zeta_bound(&ZetaInputs {
            gram: &gram,
            b: &b,
            eta: 1.0,
            beta: 1.0,
            nu_t: 0.0,
            nu_next: 0.0,
            x_t: &DVector::from_element(1, 3.0),
            x_prev: &zero,
            x_prev2: &x_prev2,
            u_prev: &zero,
            u_hat_prev2: &zero,
        })
        .unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn zeta_zero_denominator_is_absent() {
        let gram = DMatrix::zeros(1, 1);
        let b = DMatrix::from_element(1, 1, 1.0);
        let zero = DVector::zeros(1);
        assert!(zeta_bound(&ZetaInputs {
            gram: &gram,
            b: &b,
            eta: 1.0,
            beta: 1.0,
            nu_t: 0.0,
            nu_next: 0.0,
            x_t: &zero,
            x_prev: &zero,
            x_prev2: &zero,
            u_prev: &zero,
            u_hat_prev2: &zero,
        })
        .is_none());
    }

    #[test]
    fn zeta_matches_materialized_kronecker_oracle() {
        // Independent route: build Phi_i = x_i' ⊗ I_m explicitly and apply
        // the drift-bound formula literally.
        let mut rng = stream_rng(9, 85, 1);
        let n = 2;
        let m = 2;
        for _ in 0..10 {
            let b = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let states: Vec<DVector<f64>> = (0..4)
                .map(|_| DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0))
                .collect();
            let u_prev = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let u_hat = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let (nu_t, nu_next) = (rng.random::<f64>() * 0.5, rng.random::<f64>() * 0.5);
            let (eta, beta) = (10.0, 1.0);

            // t = 3: history x0..x2 feed the Gram statistic.
            let gram = states[..3]
                .iter()
                .fold(DMatrix::zeros(n, n), |acc, x| acc + x * x.transpose());
            let got = zeta_bound(&ZetaInputs {
                gram: &gram,
                b: &b,
                eta,
                beta,
                nu_t,
                nu_next,
                x_t: &states[3],
                x_prev: &states[2],
                x_prev2: &states[1],
                u_prev: &u_prev,
                u_hat_prev2: &u_hat,
            })
            .unwrap();

            let phi = |x: &DVector<f64>| x.transpose().kronecker(&DMatrix::identity(m, m));
            let btb = b.transpose() * &b;
            let numerator = phi(&states[1]).transpose() * &btb * &u_hat * (-2.0 * nu_t)
                + phi(&states[2]).transpose() * b.transpose() * &states[3] * eta
                + phi(&states[2]).transpose() * &btb * &u_prev * (2.0 * nu_next + beta);
            let mut hess = DMatrix::zeros(n * m, n * m);
            for x in &states[..3] {
                hess += phi(x).transpose() * &btb * phi(x) * (eta + beta);
            }
            hess += phi(&states[2]).transpose() * &btb * phi(&states[2]) * (2.0 * nu_next);
            let expected =
                2.0 * spectral_norm(&b) * numerator.norm() / spectral_norm(&hess);
            assert!(
                (got - expected).abs() <= 1e-10 * (1.0 + expected),
                "factored {got} vs materialized {expected}"
            );
        }
    }

    fn record(t: usize, x_norm2: f64, mode: Mode, zeta: Option<f64>) -> RolloutRecord {
        RolloutRecord {
            t,
            x_norm2,
            x_norm_inf: x_norm2,
            loss: 0.0,
            cum_loss: 0.0,
            regret: None,
            gain_drift: 0.0,
            zeta,
            constraint_active: false,
            mode,
            converged: true,
        }
    }

    #[test]
    fn contraction_frequency_extremes() {
        let all = vec![
            record(0, 10.0, Mode::Active, Some(0.0)),
            record(1, 8.0, Mode::Active, Some(0.0)),
            record(2, 6.0, Mode::Active, Some(0.0)),
        ];
        assert_eq!(contraction_frequency(&all, 0.9), Some(1.0));

        let none = vec![
            record(0, 1.0, Mode::Active, Some(0.0)),
            record(1, 2.0, Mode::Active, Some(0.0)),
            record(2, 4.0, Mode::Active, Some(0.0)),
        ];
        assert_eq!(contraction_frequency(&none, 0.9), Some(0.0));

        let coast_only = vec![
            record(0, 1.0, Mode::Coast, None),
            record(1, 2.0, Mode::Coast, None),
        ];
        assert_eq!(contraction_frequency(&coast_only, 0.9), None);
    }

    #[test]
    fn contraction_skips_steps_without_zeta() {
        let records = vec![
            record(0, 10.0, Mode::Active, None),
            record(1, 8.0, Mode::Active, Some(0.1)),
            record(2, 6.0, Mode::Coast, Some(0.1)),
            record(3, 5.0, Mode::Coast, None),
        ];
        let (satisfied, counted) = contraction_counts(&records, 0.9);
        assert_eq!(counted, 1);
        assert_eq!(satisfied, 1);
    }
}
