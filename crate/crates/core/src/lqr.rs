//! Regret comparator and trivial baselines.
//!
//! The comparator is the infinite-horizon LQR gain `K*` for cost weights
//! `Q = eta I`, `R = beta I`, obtained as the fixed point of the discrete
//! Riccati recursion
//!
//! ```text
//! P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA,    K* = -(R + B'PB)^{-1} B'PA .
//! ```
//!
//! Value iteration from `P0 = Q` is deliberately simple; the reported
//! residual certifies the fixed point regardless of method. Everything here
//! needs the true `A` and therefore lives strictly on the harness side of
//! the information barrier.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::rng::{standard_normal, STREAM_RANDOM_CTRL};

const MAX_ITERS: usize = 100_000;
const REL_TOL: f64 = 1e-12;

/// The Riccati recursion failed to converge.
#[derive(Debug, Clone, PartialEq)]
pub struct DareError {
    pub iterations: usize,
}

impl fmt::Display for DareError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Riccati iteration did not converge in {} iterations; the pair is likely not stabilizable",
            self.iterations
        )
    }
}

impl std::error::Error for DareError {}

/// Certified solution of the discrete Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// The fixed point (symmetric PSD).
    pub p: DMatrix<f64>,
    /// The optimal gain, acting as `u = K* x`.
    pub k_star: DMatrix<f64>,
    /// Spectral radius of the closed loop `A + B K*`.
    pub closed_loop_radius: f64,
    /// Frobenius norm of the fixed-point residual.
    pub residual: f64,
    pub iterations: usize,
}

fn riccati_rhs(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let btpa = b.transpose() * p * a;
    let gram = r + b.transpose() * p * b;
    let chol = Cholesky::new(gram).expect("R + B'PB is positive definite");
    let correction = a.transpose() * p * b * chol.solve(&btpa);
    q + a.transpose() * p * a - correction
}

/// Solves the discrete Riccati equation for weights `Q = eta I`, `R = beta I`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    eta: f64,
    beta: f64,
) -> Result<LqrSolution, DareError> {
    let n = a.nrows();
    let m = b.ncols();
    let q = DMatrix::identity(n, n) * eta;
    let r = DMatrix::identity(m, m) * beta;
    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut p_next = riccati_rhs(a, b, &q, &r, &p);
        // Symmetrize to keep round-off from drifting.
        p_next = (&p_next + p_next.transpose()) * 0.5;
        let delta = (&p_next - &p).norm();
        let done = delta <= REL_TOL * p.norm();
        p = p_next;
        if done {
            break;
        }
        if iterations >= MAX_ITERS {
            return Err(DareError { iterations });
        }
    }
    let gram = &r + b.transpose() * &p * b;
    let chol = Cholesky::new(gram).expect("R + B'PB is positive definite");
    let k_star = -chol.solve(&(b.transpose() * &p * a));
    let closed = a + b * &k_star;
    let closed_loop_radius = closed
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    let residual = (&p - riccati_rhs(a, b, &q, &r, &p)).norm();
    Ok(LqrSolution {
        p,
        k_star,
        closed_loop_radius,
        residual,
        iterations,
    })
}

/// Comparator policies for the regret harness.
#[derive(Debug, Clone)]
pub enum Baseline {
    /// Plays `u = K* x` with the privileged LQR gain.
    LqrOracle(DMatrix<f64>),
    /// Always plays zero.
    Zero(usize),
    /// Plays i.i.d. standard-normal actions from a dedicated stream.
    Random { m: usize, seed: u64 },
}

impl Baseline {
    /// The action at step `t` in state `x`.
    pub fn action(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Baseline::LqrOracle(k) => k * x,
            Baseline::Zero(m) => DVector::zeros(*m),
            Baseline::Random { m, seed } => standard_normal(*seed, STREAM_RANDOM_CTRL, t as u64, *m),
        }
    }
}
