//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex matrix.
pub type CMat = DMatrix<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `(X + X†) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
///
/// The input is symmetrized first so round-off asymmetry does not leak
/// into the eigenvectors.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// `X^{-1/2}` for Hermitian positive definite `X`, with eigenvalues floored
/// at `floor`. Eigenvalues below `-floor` are reported as indefiniteness.
pub fn inv_sqrt_hermitian(m: &CMat, floor: f64) -> Result<CMat> {
    if !is_finite(m) {
        return Err(Error::NonFinite("inverse square root input"));
    }
    let (values, vectors) = hermitian_eigen(m);
    if let Some(&min) = values.first() {
        if min < -floor.max(f64::EPSILON) * 1e3 {
            return Err(Error::Indefinite("inverse square root"));
        }
    }
    let scales: Vec<f64> = values.iter().map(|&v| 1.0 / v.max(floor).sqrt()).collect();
    let mut scaled = vectors.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    Ok(hermitian_part(&(&scaled * vectors.adjoint())))
}

/// Thin SVD `A = U diag(s) V†` with singular values in descending order.
/// Returns `(U, s, V)` where `V` (not `V†`) has orthonormal columns.
pub fn svd_sorted(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (CMat::zeros(rows, 0), Vec::new(), CMat::zeros(cols, 0));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^H").adjoint();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = CMat::from_fn(rows, k, |r, j| u[(r, order[j])]);
    let v = CMat::from_fn(cols, k, |r, j| v[(r, order[j])]);
    (u, s, v)
}

/// `log2 det(I + X)` for Hermitian PSD `X`.
///
/// Uses a Cholesky factorization; if that fails the eigenvalues of `X`
/// are clamped at zero instead.
pub fn log2_det_identity_plus(x: &CMat) -> f64 {
    let n = x.nrows();
    let mut m = hermitian_part(x);
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    if let Some(chol) = m.clone().cholesky() {
        let l = chol.l_dirty();
        // Complex Cholesky takes complex square roots of bad pivots instead
        // of failing, so the pivots are checked here.
        if (0..n).all(|i| l[(i, i)].re > 0.0 && l[(i, i)].im.abs() <= 1e-12 * l[(i, i)].re) {
            let ln_det: f64 = (0..n).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0;
            return ln_det / std::f64::consts::LN_2;
        }
    }
    let (values, _) = hermitian_eigen(x);
    values.iter().map(|&v| (1.0 + v.max(0.0)).log2()).sum()
}

/// Trace of a square complex matrix, real part.
pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Multiplies the rows of `m` by the real diagonal `d` (i.e. `diag(d) * m`).
pub fn scale_rows(d: &DVector<f64>, m: &CMat) -> CMat {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row.scale_mut(d[i]);
    }
    out
}

/// `X† diag(d) X` for real diagonal `d`.
pub fn weighted_gram(x: &CMat, d: &DVector<f64>) -> CMat {
    hermitian_part(&(x.adjoint() * scale_rows(d, x)))
}
