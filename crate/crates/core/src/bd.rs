//! Block-diagonalization machinery.
//!
//! Each user's covariance is confined to the null space of every other
//! user's channel (`S_k = V_k Q_k V_k†`). For a diagonal price matrix
//! `Omega` the per-user subproblem
//!
//! ```text
//! max_{Q ⪰ 0}  log2 det(I + H_k V_k Q V_k† H_k† / σ²) − Tr{Ω V_k Q V_k†}
//! ```
//!
//! is solved in closed form by whitening with `(V_k† Ω V_k)^{-1/2}`, taking
//! the SVD of the whitened channel and loading each singular direction with
//! `(1/ln2 − σ²/ξ²)^+`.

use std::ops::Range;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::linalg::{self, c, hermitian_eigen, inv_sqrt_hermitian, log2_det_identity_plus, svd_sorted, trace_re};
use crate::{CMat, Error, Result};

/// Relative singular-value gap below which a null space is flagged.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Relative ridge added to `Omega` before the inverse square root.
pub const RIDGE_REL: f64 = 1e-10;

/// The `B_l` selectors: RAP `l` owns antennas `N_c l .. N_c (l+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RapBlocks {
    pub rap_antennas: usize,
    pub num_raps: usize,
}

impl RapBlocks {
    pub fn new(rap_antennas: usize, num_raps: usize) -> Self {
        Self { rap_antennas, num_raps }
    }

    pub fn total_antennas(&self) -> usize {
        self.rap_antennas * self.num_raps
    }

    pub fn range(&self, l: usize) -> Range<usize> {
        l * self.rap_antennas..(l + 1) * self.rap_antennas
    }

    /// Dense 0/1 diagonal `B_l`.
    pub fn selector(&self, l: usize) -> CMat {
        let m = self.total_antennas();
        let range = self.range(l);
        CMat::from_fn(m, m, |i, j| if i == j && range.contains(&i) { c(1.0) } else { c(0.0) })
    }

    /// Diagonal of `Σ_l w_l B_l`.
    pub fn expand(&self, per_rap: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.total_antennas(), |i, _| per_rap[i / self.rap_antennas])
    }
}

/// Orthonormal bases of the BD null spaces, one `M x (M − N(K−1))` matrix
/// per user.
#[derive(Debug, Clone)]
pub struct NullBasis {
    pub bases: Vec<CMat>,
    /// Users whose null space is numerically ill-defined or annihilates
    /// their own channel.
    pub degenerate: Vec<usize>,
}

impl NullBasis {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

/// Trailing `M − N(K−1)` right singular vectors of the stacked
/// interference channel of each user.
///
/// The dimension is fixed by the count, not by numerical rank; a user is
/// flagged degenerate when the singular-value gap at the cut is below
/// [`DEGENERACY_GAP`] or when the basis annihilates the user's own channel.
pub fn compute_null_basis(stacked: &[CMat]) -> Result<NullBasis> {
    let k_users = stacked.len();
    if k_users == 0 {
        return Err(Error::DimensionMismatch("no users".into()));
    }
    let (n, m) = stacked[0].shape();
    if stacked.iter().any(|h| h.shape() != (n, m)) {
        return Err(Error::DimensionMismatch("users must share N x M channel shape".into()));
    }
    let interference_rows = n * (k_users - 1);
    if m < interference_rows + 1 {
        return Err(Error::DimensionMismatch(format!(
            "null space needs M > N(K-1), got M = {m}, N(K-1) = {interference_rows}"
        )));
    }
    let d = m - interference_rows;
    let mut bases = Vec::with_capacity(k_users);
    let mut degenerate = Vec::new();
    for k in 0..k_users {
        if !linalg::is_finite(&stacked[k]) {
            return Err(Error::NonFinite("channel matrix"));
        }
        let basis = if interference_rows == 0 {
            CMat::identity(m, m)
        } else {
            // Left singular vectors of the zero-padded square [G_k†, 0] are
            // the full right singular matrix of G_k.
            let mut padded = CMat::zeros(m, m);
            let mut col = 0;
            for (j, h) in stacked.iter().enumerate() {
                if j == k {
                    continue;
                }
                padded.view_mut((0, col), (m, n)).copy_from(&h.adjoint());
                col += n;
            }
            let (u, s, _) = svd_sorted(&padded);
            let top = s[0];
            if top == 0.0 || s[interference_rows - 1] < DEGENERACY_GAP * top {
                degenerate.push(k);
            }
            u.columns(interference_rows, d).into_owned()
        };
        let own = &stacked[k] * &basis;
        let own_norm = stacked[k].norm();
        let (_, own_sv, _) = svd_sorted(&own);
        let weakest = own_sv.last().copied().unwrap_or(0.0);
        if (own_norm == 0.0 || weakest < DEGENERACY_GAP * own_norm) && !degenerate.contains(&k) {
            degenerate.push(k);
        }
        bases.push(basis);
    }
    Ok(NullBasis { bases, degenerate })
}

/// Ridge added to a nonnegative diagonal price matrix.
pub fn ridge_level(omega_diag: &DVector<f64>) -> f64 {
    RIDGE_REL * (1.0 + omega_diag.max().max(0.0))
}

/// Factors of the whitened single-user channel.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    /// `(V† Ω V)^{-1/2}`, `d x d`.
    pub whitening: CMat,
    /// `H V (V† Ω V)^{-1/2}`, `N x d`.
    pub whitened: CMat,
    /// Singular values of `whitened`, descending.
    pub xi: Vec<f64>,
    /// Left singular vectors, `N x r`.
    pub u_hat: CMat,
    /// Right singular vectors (columns), `d x r`.
    pub v_hat: CMat,
}

/// Whitens `H_k V_k` by the price matrix and takes its reduced SVD.
///
/// `omega_diag` is the diagonal of `Ω`. A ridge of
/// `1e-10 (1 + max Ω)` is added before the inverse square root.
pub fn effective_channel(h: &CMat, basis: &CMat, omega_diag: &DVector<f64>) -> Result<EffectiveChannel> {
    if h.ncols() != basis.nrows() || omega_diag.len() != basis.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, basis {}x{}, Omega has {} entries",
            h.nrows(),
            h.ncols(),
            basis.nrows(),
            basis.ncols(),
            omega_diag.len()
        )));
    }
    if omega_diag.iter().any(|w| !w.is_finite()) || !linalg::is_finite(h) {
        return Err(Error::NonFinite("effective channel input"));
    }
    if omega_diag.iter().any(|&w| w < 0.0) {
        return Err(Error::Indefinite("price matrix has negative entries"));
    }
    let ridge = ridge_level(omega_diag);
    let regularized = omega_diag.add_scalar(ridge);
    let gram = linalg::weighted_gram(basis, &regularized);
    let whitening = inv_sqrt_hermitian(&gram, ridge)?;
    let whitened = h * basis * &whitening;
    if !linalg::is_finite(&whitened) {
        return Err(Error::NonFinite("whitened channel"));
    }
    let (u_hat, xi, v_hat) = svd_sorted(&whitened);
    Ok(EffectiveChannel { whitening, whitened, xi, u_hat, v_hat })
}

/// Dual waterfilling loading `(1/ln2 − σ²/ξ²)^+`; zero gains get zero.
pub fn waterfill_dual(xi: &[f64], sigma2: f64) -> Vec<f64> {
    let level = std::f64::consts::LOG2_E;
    xi.iter()
        .map(|&x| if x > 0.0 { (level - sigma2 / (x * x)).max(0.0) } else { 0.0 })
        .collect()
}

fn check_loading(eff: &EffectiveChannel, basis: &CMat, loading: &[f64]) -> Result<()> {
    if loading.len() != eff.v_hat.ncols() || eff.whitening.nrows() != basis.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "loading has {} entries for {} directions; whitening {}x{} vs basis width {}",
            loading.len(),
            eff.v_hat.ncols(),
            eff.whitening.nrows(),
            eff.whitening.ncols(),
            basis.ncols()
        )));
    }
    if loading.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("power loading must be nonnegative".into()));
    }
    Ok(())
}

/// Precoder `T = V W^{-1/2} V̂ Λ^{1/2}` (`M x r`), so that `S = T T†`.
pub fn precoder_from_dual(basis: &CMat, eff: &EffectiveChannel, loading: &[f64]) -> Result<CMat> {
    check_loading(eff, basis, loading)?;
    let mut inner = &eff.whitening * &eff.v_hat;
    for (j, &p) in loading.iter().enumerate() {
        inner.column_mut(j).scale_mut(p.sqrt());
    }
    Ok(basis * inner)
}

/// Covariance `S = V W^{-1/2} V̂ Λ V̂† W^{-1/2} V†` (`M x M`).
pub fn covariance_from_dual(basis: &CMat, eff: &EffectiveChannel, loading: &[f64]) -> Result<CMat> {
    let t = precoder_from_dual(basis, eff, loading)?;
    Ok(linalg::hermitian_part(&(&t * t.adjoint())))
}

/// Fails unless `S` is Hermitian PSD up to round-off
/// (`min eig ≥ −1e-9 · max eig`).
pub fn check_psd(s: &CMat) -> Result<()> {
    if !linalg::is_finite(s) {
        return Err(Error::NonFinite("covariance"));
    }
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let asym = (s - s.adjoint()).norm();
    let (values, _) = hermitian_eigen(s);
    let (min_eig, max_eig) = match (values.first(), values.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Ok(()),
    };
    let scale = max_eig.abs().max(s.norm()).max(f64::MIN_POSITIVE);
    if min_eig < -1e-9 * scale || asym > 1e-9 * scale {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    Ok(())
}

/// BD sum rate `Σ_k log2 det(I + H_k S_k H_k† / σ²)` without validation.
pub fn sum_rate_unchecked(stacked: &[CMat], covariances: &[CMat], sigma2: f64) -> f64 {
    stacked
        .iter()
        .zip(covariances)
        .map(|(h, s)| log2_det_identity_plus(&(h * s * h.adjoint()).unscale(sigma2)))
        .sum()
}

/// BD sum rate in bits/s/Hz. Covariances must be PSD.
pub fn sum_rate(stacked: &[CMat], covariances: &[CMat], sigma2: f64) -> Result<f64> {
    if stacked.len() != covariances.len() {
        return Err(Error::DimensionMismatch("one covariance per user".into()));
    }
    for (h, s) in stacked.iter().zip(covariances) {
        if s.nrows() != h.ncols() {
            return Err(Error::DimensionMismatch(format!("covariance {}x{} for M = {}", s.nrows(), s.ncols(), h.ncols())));
        }
        check_psd(s)?;
    }
    Ok(sum_rate_unchecked(stacked, covariances, sigma2))
}

/// Sum rate treating the other users' signals as noise. Coincides with
/// [`sum_rate`] when the covariances are zero-forcing.
pub fn sum_rate_with_interference(stacked: &[CMat], covariances: &[CMat], sigma2: f64) -> f64 {
    stacked
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let received = |skip_own: bool| {
                covariances
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| !(skip_own && j == k))
                    .fold(CMat::zeros(h.nrows(), h.nrows()), |acc, (_, s)| acc + h * s * h.adjoint())
            };
            // log det(σ²I + all) − log det(σ²I + interference)
            log2_det_identity_plus(&received(false).unscale(sigma2))
                - log2_det_identity_plus(&received(true).unscale(sigma2))
        })
        .sum()
}

/// Per-RAP transmit powers `ω_l = Tr{B_l Σ_k S_k}`.
pub fn per_rap_powers(covariances: &[CMat], blocks: &RapBlocks) -> Vec<f64> {
    (0..blocks.num_raps)
        .map(|l| {
            covariances
                .iter()
                .map(|s| blocks.range(l).map(|i| s[(i, i)].re).sum::<f64>())
                .sum::<f64>()
                .max(0.0)
        })
        .collect()
}

/// Same powers from precoders: squared row norms of `T_k`.
pub fn per_rap_powers_from_precoders(precoders: &[CMat], blocks: &RapBlocks) -> Vec<f64> {
    (0..blocks.num_raps)
        .map(|l| {
            precoders
                .iter()
                .map(|t| blocks.range(l).map(|i| t.row(i).norm_squared()).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Largest relative zero-forcing leak
/// `‖H_j S_k H_j†‖_F / (‖H_j‖_F² Tr{S_k})` over `j ≠ k`.
pub fn zf_residual(stacked: &[CMat], covariances: &[CMat]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, s) in covariances.iter().enumerate() {
        let tr = trace_re(s);
        if tr <= 0.0 {
            continue;
        }
        for (j, h) in stacked.iter().enumerate() {
            if j == k {
                continue;
            }
            let leak = (h * s * h.adjoint()).norm();
            let scale = h.norm_squared() * tr;
            if scale > 0.0 {
                worst = worst.max(leak / scale);
            }
        }
    }
    worst
}

/// Precoding result for one channel realization.
#[derive(Debug, Clone, Serialize)]
pub struct PrecoderSolution {
    /// `S_k`, `M x M` per user.
    #[serde(skip)]
    pub covariances: Vec<CMat>,
    /// `T_k`, `M x r` per user.
    #[serde(skip)]
    pub precoders: Vec<CMat>,
    pub per_rap_power: Vec<f64>,
    /// Active RAP indices, zero-based and ascending.
    pub active_set: Vec<usize>,
    pub sum_rate: f64,
    /// `sum_rate − η |A|`.
    pub objective: f64,
}

/// Diagnostic dump of covariances, powers and rates as JSON.
pub fn covariance_dump(solution: &PrecoderSolution) -> serde_json::Value {
    let mat = |m: &CMat| -> Vec<Vec<[f64; 2]>> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|col| [m[(r, col)].re, m[(r, col)].im]).collect())
            .collect()
    };
    serde_json::json!({
        "sum_rate": solution.sum_rate,
        "objective": solution.objective,
        "per_rap_power": solution.per_rap_power,
        "active_set": solution.active_set,
        "covariances": solution.covariances.iter().map(mat).collect::<Vec<_>>(),
    })
}

/// Inverse of [`covariance_dump`] for the covariance list.
pub fn covariances_from_dump(value: &serde_json::Value) -> Result<Vec<CMat>> {
    let raw: Vec<Vec<Vec<[f64; 2]>>> = serde_json::from_value(value["covariances"].clone())?;
    raw.into_iter()
        .map(|rows| {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::DimensionMismatch("covariance dump is not square".into()));
            }
            Ok(CMat::from_fn(n, n, |r, col| Complex64::new(rows[r][col][0], rows[r][col][1])))
        })
        .collect()
}
