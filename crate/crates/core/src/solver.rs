//! Per-step constrained minimization of the replay objective.
//!
//! Solves
//!
//! ```text
//! minimize    eta/2 q + eta <G, C> + (eta+beta)/2 tr(G' G S) + lambda ||G - G_prev||_F
//! subject to  ||c + G x||_2 <= r          (optional ball constraint)
//!             G in colspace(B)            (G = P_B G)
//! ```
//!
//! The feasible set is the intersection of a linear subspace with a ball in
//! the image of `G -> c + G x`; its Frobenius-metric projection has a closed
//! form (a rank-one correction along `x`), so the solve is accelerated
//! projected gradient descent. The nonsmooth proximity term is replaced by
//! `lambda sqrt(||G - G_prev||_F^2 + eps)` with `eps = 1e-12`, which shifts
//! the optimum by at most `lambda sqrt(eps)` — far below solver tolerance at
//! the operating weights. With `lambda = 0` the quadratic is minimized in
//! closed form through a pseudo-inverse and iteration is skipped whenever
//! that minimizer is feasible.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{frob_dot, psd_pseudo_inverse, spectral_norm};

/// Smoothing constant for the proximity term.
const SMOOTH_EPS: f64 = 1e-12;
/// The ball constraint is reported active when it holds with equality to this.
const ACTIVE_TOL: f64 = 1e-6;
/// Consecutive relative-change threshold that also counts as convergence.
const STALL_TOL: f64 = 1e-12;
const STALL_RUNS: usize = 10;

/// Ball constraint `||offset + G anchor||_2 <= radius` on the latest transition.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    /// The action-stripped next state `c_t`.
    pub offset: DVector<f64>,
    /// The state the gain acts on, `x_{t-1}`.
    pub anchor: DVector<f64>,
    /// Contraction target, typically `alpha ||x_{t-1}||`.
    pub radius: f64,
}

/// One instance of the per-step optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProblem {
    /// `Σ x x'` statistic.
    pub gram: DMatrix<f64>,
    /// `Σ c x'` statistic.
    pub cross: DMatrix<f64>,
    /// `Σ ||c||^2` statistic (constant term; keeps objective values exact).
    pub offset_sq: f64,
    /// Previous gain, the proximity anchor.
    pub g_prev: DMatrix<f64>,
    /// Optional contraction constraint.
    pub constraint: Option<BallConstraint>,
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Orthogonal projector onto the column space of `B`.
    pub projector: DMatrix<f64>,
}

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 5000,
        }
    }
}

/// Outcome of a per-step solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// The optimized subspace gain.
    pub g_opt: DMatrix<f64>,
    /// Exact objective value at `g_opt` (unsmoothed proximity term).
    pub objective: f64,
    pub iterations: usize,
    /// True when the ball constraint holds with equality (within 1e-6).
    pub constraint_active: bool,
    /// Least-squares estimate of the constraint multiplier.
    pub nu_estimate: f64,
    pub converged: bool,
    /// The ball constraint was infeasible (or degenerate) and dropped.
    pub constraint_dropped: bool,
    /// The Gram statistic was rank-deficient and pseudo-inverted.
    pub low_rank: bool,
    /// Objective value after each accepted iterate (index 0 = start).
    pub trace: Vec<f64>,
}

/// Exact minimizer of the quadratic part over the column space of `B`.
///
/// `G = -eta/(eta+beta) C S^+`, projected by `P_B`. This is the minimal-norm
/// stationary point; when `S` is rank-deficient the pseudo-inverse picks the
/// minimizer with no component on unexplored state directions, flagged
/// through the returned boolean.
pub fn solve_unconstrained(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    eta: f64,
    beta: f64,
    projector: &DMatrix<f64>,
) -> (DMatrix<f64>, bool) {
    let n = gram.nrows();
    let (pinv, rank) = psd_pseudo_inverse(gram, 1e-12);
    let g = cross * pinv * (-eta / (eta + beta));
    (projector * g, rank < n)
}

/// Frobenius-metric projection onto `{G : ||c + G x|| <= r} ∩ colspace(B)`.
///
/// Split `v = c + G x` into `v_perp = (I - P_B) c` (unreachable by any
/// subspace gain) and `v_par = P_B v`. Feasibility requires
/// `||v_perp|| <= r`; the reachable part is then shrunk onto the sphere of
/// radius `rho = sqrt(r^2 - ||v_perp||^2)` by the rank-one correction
/// `G += d x' / ||x||^2` with `d = (rho/||v_par|| - 1) v_par`, the nearest
/// subspace-respecting correction in Frobenius norm.
///
/// Returns `None` when the constraint is infeasible for every subspace gain.
pub fn project_ball_subspace(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    x: &DVector<f64>,
    r: f64,
    projector: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let g_s = projector * g;
    let x_sq = x.norm_squared();
    if x_sq == 0.0 {
        // The gain cannot influence v at all.
        return if c.norm() <= r { Some(g_s) } else { None };
    }
    let v = c + &g_s * x;
    if v.norm() <= r {
        return Some(g_s);
    }
    let v_perp = c - projector * c;
    let perp_sq = v_perp.norm_squared();
    if perp_sq > r * r {
        return None;
    }
    let rho = (r * r - perp_sq).sqrt();
    let v_par = projector * &v;
    let par_norm = v_par.norm();
    // ||v|| > r >= ||v_perp|| forces a nonzero reachable part.
    debug_assert!(par_norm > 0.0);
    let d = v_par * (rho / par_norm - 1.0);
    Some(g_s + d * x.transpose() / x_sq)
}

/// Least-squares estimate of the ball-constraint multiplier at `g_opt`.
///
/// Fits `nu >= 0` minimizing the subspace stationarity residual
/// `||P_B (grad J + grad soft + nu grad h)||_F` where `h(G) = ||c + G x||`.
/// Returns 0 when the constraint is absent, slack, degenerate, or was
/// infeasible (never enforced).
pub fn dual_estimate(p: &StepProblem, g_opt: &DMatrix<f64>) -> f64 {
    let Some(ball) = effective_constraint(p) else {
        return 0.0;
    };
    let v = &ball.offset + g_opt * &ball.anchor;
    let v_norm = v.norm();
    if v_norm == 0.0 || v_norm < ball.radius - ACTIVE_TOL {
        return 0.0;
    }
    let mut grad = &p.cross * p.eta + g_opt * &p.gram * (p.eta + p.beta);
    if p.lambda > 0.0 {
        let diff = g_opt - &p.g_prev;
        let denom = (diff.norm_squared() + SMOOTH_EPS).sqrt();
        grad += diff * (p.lambda / denom);
    }
    let residual = &p.projector * grad;
    let direction = &p.projector * (v / v_norm) * ball.anchor.transpose();
    let denom = frob_dot(&direction, &direction);
    if denom == 0.0 {
        return 0.0;
    }
    (-frob_dot(&residual, &direction) / denom).max(0.0)
}

/// Solves one step problem to `tol` with at most `max_iters` iterations.
pub fn solve_step(p: &StepProblem, tol: f64, max_iters: usize) -> SolveReport {
    let ball = effective_constraint(p);
    let constraint_dropped = p.constraint.is_some() && ball.is_none();

    let exact_objective = |g: &DMatrix<f64>| -> f64 {
        quadratic(p, g) + p.lambda * (g - &p.g_prev).norm()
    };

    // lambda = 0: the quadratic has a closed-form subspace minimizer.
    if p.lambda == 0.0 {
        let (g_u, low_rank) = solve_unconstrained(&p.gram, &p.cross, p.eta, p.beta, &p.projector);
        let feasible = match ball {
            None => true,
            Some(b) => (&b.offset + &g_u * &b.anchor).norm() <= b.radius + 1e-12,
        };
        if feasible {
            let objective = exact_objective(&g_u);
            return finish(
                p,
                ball,
                g_u,
                objective,
                0,
                true,
                constraint_dropped,
                low_rank,
                vec![objective],
            );
        }
    }

    let smoothed = |g: &DMatrix<f64>| -> f64 {
        let prox = if p.lambda > 0.0 {
            p.lambda * ((g - &p.g_prev).norm_squared() + SMOOTH_EPS).sqrt()
        } else {
            0.0
        };
        quadratic(p, g) + prox
    };
    let gradient = |g: &DMatrix<f64>| -> DMatrix<f64> {
        let mut grad = &p.cross * p.eta + g * &p.gram * (p.eta + p.beta);
        if p.lambda > 0.0 {
            let diff = g - &p.g_prev;
            let denom = (diff.norm_squared() + SMOOTH_EPS).sqrt();
            grad += diff * (p.lambda / denom);
        }
        grad
    };
    let project = |g: &DMatrix<f64>| -> DMatrix<f64> {
        match ball {
            None => &p.projector * g,
            // Feasibility was established up front, so projection succeeds.
            Some(b) => project_ball_subspace(g, &b.offset, &b.anchor, b.radius, &p.projector)
                .expect("pre-checked feasible constraint"),
        }
    };

    // Accelerated projected gradient with monotone restarts. `x_cur` is
    // always feasible; `y` may extrapolate outside the feasible set.
    let mut x_cur = project(&p.g_prev);
    let mut f_cur = smoothed(&x_cur);
    let mut y = x_cur.clone();
    let mut theta = 1.0_f64;
    let mut tau = 1.0 / ((p.eta + p.beta) * spectral_norm(&p.gram) + p.lambda + 1e-12);
    let gm_target = tol * (1.0 + p.eta * p.cross.norm());

    let mut best = x_cur.clone();
    let mut f_best = f_cur;
    let mut trace = vec![f_cur];
    let mut iterations = 0;
    let mut converged = false;
    let mut stall = 0;

    for _ in 0..max_iters {
        iterations += 1;
        tau *= 1.3;
        let (mut cand, mut f_cand, tau_used) = backtrack_step(&y, tau, &smoothed, &gradient, &project);
        tau = tau_used;
        if f_cand > f_cur + 1e-13 {
            // Momentum overshot: restart from the last accepted iterate.
            theta = 1.0;
            let (c2, f2, tau2) = backtrack_step(&x_cur, tau, &smoothed, &gradient, &project);
            tau = tau2;
            if f2 <= f_cur {
                cand = c2;
                f_cand = f2;
            } else {
                cand = x_cur.clone();
                f_cand = f_cur;
            }
        }

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &cand + (&cand - &x_cur) * ((theta - 1.0) / theta_next);
        theta = theta_next;

        let rel_change = (f_cur - f_cand).abs() / (1.0 + f_cand.abs());
        x_cur = cand;
        f_cur = f_cand;
        trace.push(f_cur);
        if f_cur < f_best {
            best = x_cur.clone();
            f_best = f_cur;
        }

        let grad_now = gradient(&x_cur);
        let mapped = project(&(&x_cur - &grad_now * tau));
        let grad_map = (&x_cur - mapped).norm() / tau;
        if grad_map <= gm_target {
            converged = true;
            break;
        }
        if rel_change <= STALL_TOL {
            stall += 1;
            if stall >= STALL_RUNS {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    let low_rank = {
        let n = p.gram.nrows();
        let (_, rank) = psd_pseudo_inverse(&p.gram, 1e-12);
        rank < n
    };
    let objective = exact_objective(&best);
    finish(
        p,
        ball,
        best,
        objective,
        iterations,
        converged,
        constraint_dropped,
        low_rank,
        trace,
    )
}

/// The constraint actually enforced: drops degenerate and infeasible balls.
fn effective_constraint(p: &StepProblem) -> Option<&BallConstraint> {
    let ball = p.constraint.as_ref()?;
    if ball.anchor.norm_squared() == 0.0 {
        // The gain cannot move v; the constraint is either vacuous or hopeless.
        return None;
    }
    let v_perp = &ball.offset - &p.projector * &ball.offset;
    if v_perp.norm() > ball.radius {
        return None;
    }
    Some(ball)
}

fn quadratic(p: &StepProblem, g: &DMatrix<f64>) -> f64 {
    p.eta / 2.0 * p.offset_sq
        + p.eta * frob_dot(g, &p.cross)
        + (p.eta + p.beta) / 2.0 * frob_dot(&(g * &p.gram), g)
}

/// One projected-gradient step from `from` with halving line search.
///
/// Accepts the step once the quadratic upper bound
/// `F(c) <= F(y) + <grad, c - y> + ||c - y||^2 / (2 tau)` holds, which for a
/// feasible starting point guarantees descent.
fn backtrack_step(
    from: &DMatrix<f64>,
    tau0: f64,
    f: &impl Fn(&DMatrix<f64>) -> f64,
    grad: &impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    project: &impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> (DMatrix<f64>, f64, f64) {
    let g = grad(from);
    let f_from = f(from);
    let mut tau = tau0;
    loop {
        let cand = project(&(from - &g * tau));
        let f_cand = f(&cand);
        let diff = &cand - from;
        let bound = f_from + frob_dot(&g, &diff) + diff.norm_squared() / (2.0 * tau)
            + 1e-12 * (1.0 + f_from.abs());
        if f_cand <= bound || tau < 1e-18 {
            return (cand, f_cand, tau);
        }
        tau /= 2.0;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &StepProblem,
    ball: Option<&BallConstraint>,
    g_opt: DMatrix<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    constraint_dropped: bool,
    low_rank: bool,
    trace: Vec<f64>,
) -> SolveReport {
    let constraint_active = match ball {
        None => false,
        Some(b) => {
            let v_norm = (&b.offset + &g_opt * &b.anchor).norm();
            (v_norm - b.radius).abs() <= ACTIVE_TOL
        }
    };
    let nu_estimate = dual_estimate(p, &g_opt);
    SolveReport {
        g_opt,
        objective,
        iterations,
        constraint_active,
        nu_estimate,
        converged,
        constraint_dropped,
        low_rank,
        trace,
    }
}
