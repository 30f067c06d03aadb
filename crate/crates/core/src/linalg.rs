//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Replace `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Returns `(eigenvalues, eigenvectors)` where column `k` of the second value
/// pairs with entry `k` of the first.
pub fn sym_eig_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let view = faer::MatRef::from_column_major_slice(m.as_slice(), n, n);
    let Ok(eig) = view.self_adjoint_eigen(faer::Side::Lower) else {
        return sym_eig_desc_fallback(m);
    };
    let (s, u) = (eig.S(), eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| s[k]));
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    (values, vectors)
}

fn sym_eig_desc_fallback(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// `dst ← dst + alpha · a · bᵀ` through a blocked kernel.
pub fn add_mul_tr(dst: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64) {
    assert_eq!(a.ncols(), b.ncols(), "inner dimensions differ");
    assert_eq!(dst.shape(), (a.nrows(), b.nrows()), "output shape differs");
    let (m, n, k) = (a.nrows(), b.nrows(), a.ncols());
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let lhs = faer::MatRef::from_column_major_slice(a.as_slice(), m, k);
    let rhs = faer::MatRef::from_column_major_slice(b.as_slice(), n, k);
    let out = faer::MatMut::from_column_major_slice_mut(dst.as_mut_slice(), m, n);
    faer::linalg::matmul::matmul(out, faer::Accum::Add, lhs, rhs.transpose(), alpha, faer::Par::Seq);
}

/// `a · bᵀ`.
pub fn mul_tr(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    add_mul_tr(&mut out, a, b, 1.0);
    out
}

/// Minimum-norm least-squares solution of `a · x = b` through the SVD.
///
/// Singular values below `rcond · σ_max` are treated as zero. Returns the
/// solution together with the numerical rank of `a`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rcond * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff && s > 0.0).count();
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut utb = u.transpose() * b;
    for (i, s) in svd.singular_values.iter().enumerate() {
        let scale = if *s > cutoff && *s > 0.0 { 1.0 / s } else { 0.0 };
        utb.row_mut(i).scale_mut(scale);
    }
    (vt.transpose() * utb, rank)
}

/// Moore–Penrose pseudoinverse with relative cutoff `rcond`.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    lstsq(a, &DMatrix::identity(a.nrows(), a.nrows()), rcond).0
}

/// 2-norm condition number (`σ_max / σ_min`, infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = a.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite Gram matrix.
///
/// When the Cholesky factor fails or its diagonal spread indicates a
/// reciprocal condition below `1e-12`, a ridge of `1e-10 · trace / n` is added
/// to the diagonal first.
pub fn spd_inverse(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(chol) = gram.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if lo > 0.0 && (lo / hi).powi(2) > 1e-12 {
            let mut inv = chol.inverse();
            symmetrize(&mut inv);
            return Ok(inv);
        }
    }
    let delta = 1e-10 * gram.trace() / n as f64;
    let mut reg = gram.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    let chol = reg.cholesky().ok_or(Error::SingularInputGram)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Frobenius norm of `a - b` relative to the Frobenius norm of `b`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        (a - b).norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Orthonormal basis of the column space of `a` via thin QR.
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}
