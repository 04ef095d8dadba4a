//! Small dense-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Frobenius inner product `tr(A' B)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values()[0]
}

/// Pseudo-inverse of a symmetric PSD matrix via eigen-decomposition.
///
/// Eigenvalues at or below `rel_tol * max_eig` are treated as zero. Returns
/// the inverse together with the numerical rank.
pub fn psd_pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * max_eig.max(1e-300);
    let mut rank = 0;
    let inv_vals = DVector::from_fn(n, |i, _| {
        let v = eig.eigenvalues[i];
        if v > cutoff {
            rank += 1;
            1.0 / v
        } else {
            0.0
        }
    });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    (pinv, rank)
}

/// Orthogonal projector onto the column space of `b`, the operator
/// `B (B'B)^+ B'`.
///
/// Assembled as `U_r U_r'` from the singular vectors of `b` so the result
/// stays an orthogonal projector to machine precision even when `b` is
/// ill-conditioned or rank-deficient.
pub fn column_space_projector(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let svd = b.clone().svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = 1e-12 * max_sv.max(1e-300);
    let mut p = DMatrix::zeros(n, n);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff {
            let col = u.column(i);
            p += col * col.transpose();
        }
    }
    p
}

/// Minimal-norm gain recovery operator `(B'B)^+ B'`, i.e. the pseudo-inverse
/// of `b`. Left-multiplying a subspace gain `G = B K` by this operator
/// returns the smallest `K` that reproduces it.
pub fn minimal_norm_recovery(b: &DMatrix<f64>) -> DMatrix<f64> {
    let max_sv = spectral_norm(b);
    b.clone()
        .pseudo_inverse(1e-12 * max_sv.max(1e-300))
        .expect("SVD of a finite matrix")
}

/// Factor `L` of a symmetric PSD matrix with `L L' = m`.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero; anything below `-tol` is
/// rejected as not positive semidefinite.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, String> {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    for i in 0..n {
        if eig.eigenvalues[i] < -tol {
            return Err(format!(
                "matrix has negative eigenvalue {:.3e}",
                eig.eigenvalues[i]
            ));
        }
    }
    let sqrt_vals = DVector::from_fn(n, |i, _| eig.eigenvalues[i].max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}
