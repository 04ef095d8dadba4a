//! Replayed transitions and the running statistics behind the controller.
//!
//! For a recorded transition `(x_prev, u_prev, x_new)` define
//!
//! ```text
//! c = x_new - B u_prev
//! ```
//!
//! `c` is exactly what the unknown dynamics plus that step's noise
//! contributed: `c = A x_prev + w`, computed without access to either. The
//! replayed ("fantasy") next state under a hypothetical gain `K` with
//! `G = B K` is then `c + G x_prev`, and the replayed loss at that step is
//!
//! ```text
//! eta/2 ||c + G x_prev||^2 + beta/2 ||G x_prev||^2 .
//! ```
//!
//! Summed over the whole history this is a quadratic in `G` determined by
//! three running statistics — `gram = Σ x x'`, `cross = Σ c x'`, and
//! `offset_sq = Σ ||c||^2` — so the controller's memory stays O(n²) no
//! matter how long the rollout runs:
//!
//! ```text
//! J(G) = eta/2 offset_sq + eta <G, cross> + (eta+beta)/2 tr(G' G gram) .
//! ```

use nalgebra::{DMatrix, DVector};

/// Control gain in both parameterizations: `g = B k`.
///
/// Everything the objective and constraint see depends on `K` only through
/// `B K`, so the optimized variable is the n-by-n `g` confined to the column
/// space of `B`; `k` is recovered minimal-norm when an action is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    g: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl GainMatrix {
    /// The zero gain.
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            g: DMatrix::zeros(n, n),
            k: DMatrix::zeros(m, n),
        }
    }

    /// Builds the pair from a subspace gain `g_raw`.
    ///
    /// `recovery` is the minimal-norm operator `(B'B)^+ B'`; the stored `g`
    /// is re-materialized as `B k` so the pair is consistent by construction.
    pub fn recover(g_raw: &DMatrix<f64>, b: &DMatrix<f64>, recovery: &DMatrix<f64>) -> Self {
        let k = recovery * g_raw;
        let g = b * &k;
        Self { g, k }
    }

    /// The n-by-n product `B K`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// The m-by-n control gain.
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// One recorded transition, kept for the contraction constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x_prev: DVector<f64>,
    pub x_new: DVector<f64>,
    pub u_prev: DVector<f64>,
    /// `x_new - B u_prev`, the action-stripped next state.
    pub c: DVector<f64>,
}

/// Running sufficient statistics of the replay objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FantasyHistory {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    offset_sq: f64,
    len: usize,
    last: Option<Transition>,
}

impl FantasyHistory {
    /// Empty history for an n-dimensional state.
    pub fn new(n: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n, n),
            cross: DMatrix::zeros(n, n),
            offset_sq: 0.0,
            len: 0,
            last: None,
        }
    }

    /// Folds one observed transition into the statistics.
    pub fn accumulate(
        &mut self,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
        x_new: &DVector<f64>,
        b: &DMatrix<f64>,
    ) {
        let c = x_new - b * u_prev;
        self.gram += x_prev * x_prev.transpose();
        self.cross += &c * x_prev.transpose();
        self.offset_sq += c.norm_squared();
        self.len += 1;
        self.last = Some(Transition {
            x_prev: x_prev.clone(),
            x_new: x_new.clone(),
            u_prev: u_prev.clone(),
            c,
        });
    }

    /// `Σ x_{i-1} x_{i-1}'`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Σ c_i x_{i-1}'`.
    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// `Σ ||c_i||^2`.
    pub fn offset_sq(&self) -> f64 {
        self.offset_sq
    }

    /// Number of accumulated transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    /// True before any transition was recorded.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The most recent transition, if any.
    pub fn last(&self) -> Option<&Transition> {
        self.last.as_ref()
    }

    /// Exact cumulative replay objective at gain `g`.
    pub fn objective_value(&self, g: &DMatrix<f64>, eta: f64, beta: f64) -> f64 {
        eta / 2.0 * self.offset_sq
            + eta * g.dot(&self.cross)
            + (eta + beta) / 2.0 * (g * &self.gram).dot(g)
    }

    /// Gradient of the replay objective: `eta cross + (eta+beta) g gram`.
    pub fn objective_gradient(&self, g: &DMatrix<f64>, eta: f64, beta: f64) -> DMatrix<f64> {
        &self.cross * eta + g * &self.gram * (eta + beta)
    }
}

/// Replayed next state `(x_i - B u_prev) + G x_prev` for gain `G = B K`.
pub fn fantasy_state(
    x_i: &DVector<f64>,
    u_prev: &DVector<f64>,
    x_prev: &DVector<f64>,
    b: &DMatrix<f64>,
    gain: &GainMatrix,
) -> DVector<f64> {
    (x_i - b * u_prev) + gain.g() * x_prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::minimal_norm_recovery;
    use crate::rng::{standard_normal, stream_rng};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 99, 0);
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn fantasy_state_direct_substitution() {
        let b = DMatrix::identity(2, 2);
        let x_i = DVector::from_row_slice(&[1.0, 0.0]);
        let u_prev = DVector::from_row_slice(&[0.5, 0.0]);
        let x_prev = DVector::from_row_slice(&[1.0, 0.0]);
        // G x_prev = (0.2, 0.1).
        let g = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.0]);
        let gain = GainMatrix::recover(&g, &b, &minimal_norm_recovery(&b));
        let xhat = fantasy_state(&x_i, &u_prev, &x_prev, &b, &gain);
        assert!((xhat - DVector::from_row_slice(&[0.7, 0.1])).amax() < 1e-15);
    }

    #[test]
    fn replaying_the_real_action_reproduces_the_real_state() {
        let b = random_matrix(1, 3, 2);
        let recovery = minimal_norm_recovery(&b);
        let x_prev = DVector::from_row_slice(&[0.3, -1.0, 2.0]);
        let x_i = DVector::from_row_slice(&[1.0, 0.2, -0.4]);
        // Pick K, then the "real" action u_prev = K x_prev; G x_prev = B u_prev.
        let k = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1]);
        let u_prev = &k * &x_prev;
        let gain = GainMatrix::recover(&(&b * &k), &b, &recovery);
        let xhat = fantasy_state(&x_i, &u_prev, &x_prev, &b, &gain);
        assert!((xhat - x_i).amax() < 1e-12);
    }

    #[test]
    fn fantasy_state_equals_hidden_dynamics_plus_gain() {
        // Oracle with plant access: on a noiseless transition the replayed
        // state must equal A x_prev + G x_prev for every G.
        let a = random_matrix(2, 3, 3);
        let b = random_matrix(3, 3, 2);
        let recovery = minimal_norm_recovery(&b);
        for trial in 0..20u64 {
            let x_prev = standard_normal(trial, 98, 0, 3);
            let u_prev = standard_normal(trial, 98, 1, 2);
            let x_i = &a * &x_prev + &b * &u_prev;
            let g_raw = random_matrix(100 + trial, 3, 3);
            let gain = GainMatrix::recover(&g_raw, &b, &recovery);
            let xhat = fantasy_state(&x_i, &u_prev, &x_prev, &b, &gain);
            let oracle = &a * &x_prev + gain.g() * &x_prev;
            assert!((xhat - oracle).amax() < 1e-12);
        }
    }

    #[test]
    fn single_transition_statistics() {
        let b = DMatrix::identity(2, 2);
        let mut h = FantasyHistory::new(2);
        let x_prev = DVector::from_row_slice(&[1.0, 0.0]);
        let x_new = DVector::from_row_slice(&[2.0, 0.0]);
        h.accumulate(&x_prev, &DVector::zeros(2), &x_new, &b);
        assert_eq!(h.gram(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(h.cross(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert_eq!(h.offset_sq(), 4.0);
        assert_eq!(h.len(), 1);
        let last = h.last().unwrap();
        assert_eq!(last.c, x_new);
    }

    #[test]
    fn zero_gain_objective_is_offset_term() {
        let b = random_matrix(4, 3, 3);
        let mut h = FantasyHistory::new(3);
        for i in 0..5u64 {
            let x_prev = standard_normal(i, 97, 0, 3);
            let u = standard_normal(i, 97, 1, 3);
            let x_new = standard_normal(i, 97, 2, 3);
            h.accumulate(&x_prev, &u, &x_new, &b);
        }
        let g0 = DMatrix::zeros(3, 3);
        let eta = 10.0;
        let got = h.objective_value(&g0, eta, 1.0);
        assert!((got - eta / 2.0 * h.offset_sq()).abs() < 1e-12 * (1.0 + got.abs()));
    }

    #[test]
    fn objective_matches_per_step_sum() {
        // Brute-force oracle: recompute the objective from the stored
        // trajectory, term by term.
        let eta = 10.0;
        let beta = 1.0;
        for trial in 0..20u64 {
            let b = random_matrix(300 + trial, 3, 2);
            let mut h = FantasyHistory::new(3);
            let mut trajectory = Vec::new();
            for i in 0..5u64 {
                let x_prev = standard_normal(trial, 90, 3 * i, 3);
                let u = standard_normal(trial, 90, 3 * i + 1, 2);
                let x_new = standard_normal(trial, 90, 3 * i + 2, 3);
                h.accumulate(&x_prev, &u, &x_new, &b);
                trajectory.push((x_prev, u, x_new));
            }
            let g = random_matrix(400 + trial, 3, 3);
            let mut expected = 0.0;
            for (x_prev, u, x_new) in &trajectory {
                let c = x_new - &b * u;
                let gx = &g * x_prev;
                expected += eta / 2.0 * (&c + &gx).norm_squared() + beta / 2.0 * gx.norm_squared();
            }
            let got = h.objective_value(&g, eta, beta);
            assert!(
                (got - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
                "objective {got} vs oracle {expected}"
            );
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let eta = 10.0;
        let beta = 1.0;
        let step = 1e-6;
        for trial in 0..10u64 {
            let b = random_matrix(500 + trial, 3, 3);
            let mut h = FantasyHistory::new(3);
            for i in 0..4u64 {
                let x_prev = standard_normal(trial, 91, 3 * i, 3);
                let u = standard_normal(trial, 91, 3 * i + 1, 3);
                let x_new = standard_normal(trial, 91, 3 * i + 2, 3);
                h.accumulate(&x_prev, &u, &x_new, &b);
            }
            let g = random_matrix(600 + trial, 3, 3);
            let grad = h.objective_gradient(&g, eta, beta);
            for r in 0..3 {
                for c in 0..3 {
                    let mut gp = g.clone();
                    let mut gm = g.clone();
                    gp[(r, c)] += step;
                    gm[(r, c)] -= step;
                    let fd = (h.objective_value(&gp, eta, beta)
                        - h.objective_value(&gm, eta, beta))
                        / (2.0 * step);
                    let a = grad[(r, c)];
                    assert!(
                        (fd - a).abs() <= 1e-5 * (1.0 + a.abs()),
                        "entry ({r},{c}): analytic {a}, finite difference {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn gain_pair_is_consistent() {
        let b = random_matrix(7, 3, 2);
        let recovery = minimal_norm_recovery(&b);
        let p = crate::linalg::column_space_projector(&b);
        let g_raw = &p * random_matrix(8, 3, 3);
        let gain = GainMatrix::recover(&g_raw, &b, &recovery);
        assert!((gain.g() - &b * gain.k()).norm() < 1e-10);
        assert!((gain.g() - &g_raw).norm() < 1e-10);
    }

    // Dyadic-rational inputs make every product and sum exact in f64, so
    // reordering transitions must leave the statistics bitwise identical.
    fn dyadic_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((-16i32..=16).prop_map(|k| k as f64 / 8.0), 3)
    }

    proptest! {
        #[test]
        fn interleavings_commute(
            raw in proptest::collection::vec((dyadic_vec(), dyadic_vec(), dyadic_vec()), 2..6),
            swap_a in 0usize..6,
            swap_b in 0usize..6,
        ) {
            let b = DMatrix::identity(3, 3);
            let transitions: Vec<_> = raw
                .iter()
                .map(|(xp, u, xn)| {
                    (
                        DVector::from_row_slice(xp),
                        DVector::from_row_slice(u),
                        DVector::from_row_slice(xn),
                    )
                })
                .collect();
            let mut reordered = transitions.clone();
            let len = reordered.len();
            reordered.swap(swap_a % len, swap_b % len);

            let fold = |ts: &[(DVector<f64>, DVector<f64>, DVector<f64>)]| {
                let mut h = FantasyHistory::new(3);
                for (xp, u, xn) in ts {
                    h.accumulate(xp, u, xn, &b);
                }
                (h.gram().clone(), h.cross().clone(), h.offset_sq())
            };
            let (s1, c1, q1) = fold(&transitions);
            let (s2, c2, q2) = fold(&reordered);
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(c1, c2);
            prop_assert_eq!(q1, q2);
        }

        #[test]
        fn objective_is_convex(theta in 0.01f64..0.99) {
            let b = random_matrix(41, 3, 3);
            let mut h = FantasyHistory::new(3);
            for i in 0..4u64 {
                let x_prev = standard_normal(17, 92, 3 * i, 3);
                let u = standard_normal(17, 92, 3 * i + 1, 3);
                let x_new = standard_normal(17, 92, 3 * i + 2, 3);
                h.accumulate(&x_prev, &u, &x_new, &b);
            }
            let g1 = random_matrix(42, 3, 3);
            let g2 = random_matrix(43, 3, 3);
            let mix = &g1 * theta + &g2 * (1.0 - theta);
            let lhs = h.objective_value(&mix, 10.0, 1.0);
            let rhs = theta * h.objective_value(&g1, 10.0, 1.0)
                + (1.0 - theta) * h.objective_value(&g2, 10.0, 1.0);
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn gram_stays_symmetric_psd() {
        let b = random_matrix(50, 3, 3);
        let mut h = FantasyHistory::new(3);
        for i in 0..12u64 {
            let x_prev = standard_normal(i, 93, 0, 3);
            let u = standard_normal(i, 93, 1, 3);
            let x_new = standard_normal(i, 93, 2, 3);
            h.accumulate(&x_prev, &u, &x_new, &b);
        }
        let s = h.gram();
        assert_eq!(s, &s.transpose());
        let eig = s.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-12));
    }
}
