//! Reference solvers used to validate the sparse solver.
//!
//! * [`max_rate`] solves the unpenalized per-RAP-constrained BD problem to
//!   high accuracy. It uses the same closed-form inner solution as the
//!   sparse solver but minimizes the dual over the log-multipliers with a
//!   quasi-Newton method, so its accuracy does not depend on a step size.
//! * [`exhaustive_search`] enumerates RAP subsets and keeps the best per
//!   cardinality.
//! * [`projected_gradient_reference`] maximizes the priced objective by
//!   plain gradient ascent over PSD matrices, without any of the SVD and
//!   waterfilling machinery.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::bd::{self, NullBasis, PrecoderSolution, RapBlocks};
use crate::linalg::{self, c};
use crate::model::ChannelRealization;
use crate::solver::{self, fmt_float, InnerSolution, PenaltyMatrix};
use crate::{CMat, Error, Result};

/// Largest number of RAPs [`exhaustive_search`] accepts.
pub const MAX_EXHAUSTIVE_RAPS: usize = 14;

/// Rates closer than this (relative) count as ties in subset search.
pub const TIE_REL_TOL: f64 = 1e-9;

/// BD room check for `size` active RAPs: `size·N_c ≥ ⌈KN/N_c⌉·N_c` and
/// every user keeps at least `N` null-space dimensions.
pub fn subset_is_feasible(size: usize, rap_antennas: usize, num_users: usize, user_antennas: usize) -> bool {
    let m = size * rap_antennas;
    let a_min = (num_users * user_antennas).div_ceil(rap_antennas);
    m >= a_min * rap_antennas && m >= user_antennas * num_users
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetResult {
    /// Ascending RAP indices.
    pub subset: Vec<usize>,
    /// Sum rate in bits/s/Hz, `None` for an infeasible subset.
    pub rate: Option<f64>,
}

impl SubsetResult {
    pub fn is_feasible(&self) -> bool {
        self.rate.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxRateOptions {
    /// Allowed relative budget overshoot `ω_l ≤ (1 + rtol) P_l`.
    pub rtol: f64,
    /// Bound on the duality gap `Σ_l λ_l |P_l − ω_l|`, in bits/s/Hz.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for MaxRateOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, gap_tol: 1e-10, max_iter: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct MaxRateSolution {
    /// Feasible solution (rescaled onto the budgets if needed).
    pub solution: PrecoderSolution,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct DualPoint {
    lambda: Vec<f64>,
    value: f64,
    inner: InnerSolution,
}

fn eval_dual(ch: &ChannelRealization, basis: &NullBasis, psi: &PenaltyMatrix, lambda: Vec<f64>) -> Result<DualPoint> {
    let inner = solver::inner_solve(ch, basis, psi, &lambda)?;
    let omega = solver::price_diag(psi, &lambda);
    let budget_term: f64 = lambda.iter().zip(&ch.budgets).map(|(l, p)| l * p).sum();
    let value = solver::priced_objective(ch.stacked(), &inner.covariances, &omega, ch.sigma2) + budget_term;
    if !value.is_finite() {
        return Err(Error::NonFinite("dual value"));
    }
    Ok(DualPoint { lambda, value, inner })
}

fn kkt_satisfied(point: &DualPoint, budgets: &[f64], opts: &MaxRateOptions) -> bool {
    let omega = &point.inner.per_rap_power;
    let within = omega.iter().zip(budgets).all(|(&w, &p)| w <= p * (1.0 + opts.rtol));
    let gap: f64 = omega.iter().zip(budgets).zip(&point.lambda).map(|((w, p), l)| l * (p - w).abs()).sum();
    within && gap <= opts.gap_tol
}

/// Maximum BD sum rate under the per-RAP budgets, with no sparsity price.
pub fn max_rate(ch: &ChannelRealization, opts: &MaxRateOptions) -> Result<MaxRateSolution> {
    let basis = bd::compute_null_basis(ch.stacked())?;
    max_rate_priced(ch, &basis, &vec![0.0; ch.num_raps()], opts)
}

/// BD null bases on the full antenna set that also vanish on the antennas of
/// the RAPs in `off`: for user `k`, the orthogonal complement of the other
/// users' channels and of the unit vectors of the switched-off antennas.
pub fn null_basis_with_raps_off(ch: &ChannelRealization, off: &[usize]) -> Result<NullBasis> {
    if let Some(&l) = off.iter().find(|&&l| l >= ch.num_raps()) {
        return Err(Error::DimensionMismatch(format!("RAP {l} out of range")));
    }
    let m = ch.total_antennas();
    let off_antennas: Vec<usize> = off.iter().flat_map(|&l| ch.rap_range(l)).collect();
    let stacked = ch.stacked();
    let n = ch.user_antennas();
    let rows = n * (stacked.len() - 1) + off_antennas.len();
    if m < rows + n {
        return Err(Error::DimensionMismatch(format!("{m} antennas leave no room after {rows} constraints")));
    }
    let mut bases = Vec::with_capacity(stacked.len());
    let mut degenerate = Vec::new();
    for k in 0..stacked.len() {
        let mut constraints = CMat::zeros(m, m);
        let mut col = 0;
        for (j, h) in stacked.iter().enumerate() {
            if j != k {
                constraints.view_mut((0, col), (m, n)).copy_from(&h.adjoint());
                col += n;
            }
        }
        for &a in &off_antennas {
            constraints[(a, col)] = c(1.0);
            col += 1;
        }
        let (u, sv, _) = linalg::svd_sorted(&constraints);
        if rows > 0 && sv[rows - 1] < bd::DEGENERACY_GAP * sv[0] {
            degenerate.push(k);
        }
        bases.push(u.columns(rows, m - rows).into_owned());
    }
    Ok(NullBasis { bases, degenerate })
}

/// [`max_rate`] on the full antenna set with the RAPs in `off` held at
/// exactly zero power.
pub fn max_rate_forced_off(ch: &ChannelRealization, off: &[usize], opts: &MaxRateOptions) -> Result<MaxRateSolution> {
    let basis = null_basis_with_raps_off(ch, off)?;
    max_rate_priced(ch, &basis, &vec![0.0; ch.num_raps()], opts)
}

/// Maximizes `Σ_k R_k − Σ_l extra_l ω_l` subject to `ω_l ≤ P_l`.
///
/// The dual is minimized over `μ = ln λ` by BFGS with backtracking on the
/// dual value. The gradient in these coordinates is `λ_l (P_l − ω_l)`.
pub fn max_rate_priced(ch: &ChannelRealization, basis: &NullBasis, extra: &[f64], opts: &MaxRateOptions) -> Result<MaxRateSolution> {
    if !ch.is_bd_feasible() {
        return Err(Error::DimensionMismatch("channel is not BD-feasible".into()));
    }
    if basis.is_degenerate() {
        return Err(Error::DegenerateNullSpace { users: basis.degenerate.clone() });
    }
    if extra.len() != ch.num_raps() || extra.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::DimensionMismatch("need one nonnegative price per RAP".into()));
    }
    let blocks = RapBlocks::new(ch.rap_antennas(), ch.num_raps());
    let psi = PenaltyMatrix { per_rap: extra.to_vec(), blocks };
    let budgets = &ch.budgets;

    let n = ch.num_raps();
    let grad_of = |pt: &DualPoint| -> DVector<f64> {
        DVector::from_iterator(
            n,
            pt.lambda.iter().zip(&pt.inner.per_rap_power).zip(budgets).map(|((l, w), p)| l * (p - w)),
        )
    };
    let mut point = eval_dual(ch, basis, &psi, vec![1.0; n])?;
    let mut grad = grad_of(&point);
    // Inverse Hessian estimate in μ coordinates, seeded with the diagonal
    // curvature λ_l P_l.
    let diagonal_seed = |pt: &DualPoint| {
        DMatrix::from_diagonal(&DVector::from_iterator(n, pt.lambda.iter().zip(budgets).map(|(l, p)| 1.0 / (l * p))))
    };
    let mut h_inv = diagonal_seed(&point);
    let mut fresh = true;
    let mut converged = kkt_satisfied(&point, budgets, opts);
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir = -(&h_inv * &grad);
        let mut slope = dir.dot(&grad);
        if !(slope < 0.0) && !fresh {
            h_inv = diagonal_seed(&point);
            fresh = true;
            dir = -(&h_inv * &grad);
            slope = dir.dot(&grad);
        }
        let longest = dir.amax();
        if longest > 4.0 {
            dir *= 4.0 / longest;
            slope *= 4.0 / longest;
        }
        let slack = 1e-13 * (1.0 + point.value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let lambda: Vec<f64> = point.lambda.iter().zip(dir.iter()).map(|(l, d)| l * (step * d).exp()).collect();
            let trial = eval_dual(ch, basis, &psi, lambda)?;
            if trial.value <= point.value + 1e-4 * step * slope + slack {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            if fresh {
                break;
            }
            // The quasi-Newton model went stale: restart from the diagonal.
            h_inv = diagonal_seed(&point);
            fresh = true;
            continue;
        };
        fresh = false;
        let next_grad = grad_of(&next);
        let s_vec = &dir * step;
        let y_vec = &next_grad - &grad;
        let sy = s_vec.dot(&y_vec);
        if sy > 1e-16 * s_vec.norm() * y_vec.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - (&s_vec * y_vec.transpose()) * rho;
            h_inv = &left * &h_inv * left.transpose() + (&s_vec * s_vec.transpose()) * rho;
        }
        point = next;
        grad = next_grad;
        converged = kkt_satisfied(&point, budgets, opts);
    }

    let overshoot = point
        .inner
        .per_rap_power
        .iter()
        .zip(budgets)
        .map(|(w, p)| w / p)
        .fold(1.0, f64::max);
    let scale = 1.0 / overshoot;
    let covariances: Vec<CMat> = point.inner.covariances.iter().map(|s| s.scale(scale)).collect();
    let precoders: Vec<CMat> = point.inner.precoders.iter().map(|t| t.scale(scale.sqrt())).collect();
    let per_rap_power = bd::per_rap_powers(&covariances, &blocks);
    let active_set = solver::extract_active_set(&per_rap_power, budgets, crate::solver::SolverParams::default().active_thresh_rel);
    let sum_rate = bd::sum_rate_unchecked(ch.stacked(), &covariances, ch.sigma2);
    Ok(MaxRateSolution {
        solution: PrecoderSolution { covariances, precoders, per_rap_power, active_set, objective: sum_rate, sum_rate },
        lambda: point.lambda,
        iterations,
        converged,
    })
}

/// Best achievable rate using only the RAPs in `subset`.
pub fn solve_fixed_subset(ch: &ChannelRealization, subset: &[usize], opts: &MaxRateOptions) -> Result<f64> {
    if !subset_is_feasible(subset.len(), ch.rap_antennas(), ch.num_users(), ch.user_antennas()) {
        return Err(Error::InfeasibleSubset {
            subset: subset.to_vec(),
            reason: format!(
                "{} antennas cannot serve {} users with {} antennas each",
                subset.len() * ch.rap_antennas(),
                ch.num_users(),
                ch.user_antennas()
            ),
        });
    }
    let restricted = ch.restrict(subset)?;
    Ok(max_rate(&restricted, opts)?.solution.sum_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchSize {
    All,
    Exactly(usize),
}

/// Subsets of `{0..n}` with `size` elements as bitmasks, in increasing
/// numeric order.
pub fn combinations(n: usize, size: usize) -> Vec<u32> {
    assert!(n < 32);
    if size > n {
        return Vec::new();
    }
    if size == 0 {
        return vec![0];
    }
    let limit = 1u32 << n;
    let mut mask: u32 = (1u32 << size) - 1;
    let mut out = Vec::new();
    while mask < limit {
        out.push(mask);
        // Gosper's hack: next larger integer with the same popcount.
        let lowest = mask & mask.wrapping_neg();
        let ripple = mask + lowest;
        mask = (((ripple ^ mask) >> 2) / lowest) | ripple;
    }
    out
}

fn mask_to_subset(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Best subset for each requested cardinality, ascending in size.
///
/// Subsets are evaluated in parallel. The reduction scans them in
/// lexicographic order and only replaces the incumbent on a strictly better
/// rate (beyond [`TIE_REL_TOL`]), so ties go to the lexicographically
/// smallest subset and the result does not depend on scheduling.
pub fn exhaustive_search(ch: &ChannelRealization, size: SearchSize, opts: &MaxRateOptions) -> Result<Vec<SubsetResult>> {
    let l = ch.num_raps();
    if l > MAX_EXHAUSTIVE_RAPS {
        return Err(Error::TooManyRaps { l, cap: MAX_EXHAUSTIVE_RAPS });
    }
    let feasible = |a: usize| subset_is_feasible(a, ch.rap_antennas(), ch.num_users(), ch.user_antennas());
    let sizes: Vec<usize> = match size {
        SearchSize::All => (1..=l).filter(|&a| feasible(a)).collect(),
        SearchSize::Exactly(a) => {
            if a == 0 || a > l || !feasible(a) {
                return Err(Error::InfeasibleSubset {
                    subset: Vec::new(),
                    reason: format!("no feasible subset of size {a} out of {l} RAPs"),
                });
            }
            vec![a]
        }
    };
    let mut results = Vec::with_capacity(sizes.len());
    for a in sizes {
        let mut subsets: Vec<Vec<usize>> = combinations(l, a).into_iter().map(mask_to_subset).collect();
        subsets.sort();
        let rates: Vec<f64> = subsets
            .par_iter()
            .map(|s| solve_fixed_subset(ch, s, opts))
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (i, &r) in rates.iter().enumerate().skip(1) {
            if r > rates[best] + TIE_REL_TOL * rates[best].abs().max(1e-300) {
                best = i;
            }
        }
        results.push(SubsetResult { subset: subsets.swap_remove(best), rate: Some(rates[best]) });
    }
    Ok(results)
}

pub const FRONTIER_SCHEMA: &str = "# cran-frontier v1";

/// Writes `cardinality,best_subset,rate` rows; subsets are space-separated
/// RAP indices.
pub fn write_frontier_csv<W: Write>(results: &[SubsetResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FRONTIER_SCHEMA}")?;
    writeln!(out, "cardinality,best_subset,rate")?;
    for r in results {
        let subset: Vec<String> = r.subset.iter().map(|i| i.to_string()).collect();
        let rate = r.rate.map(fmt_float).unwrap_or_default();
        writeln!(out, "{},{},{}", r.subset.len(), subset.join(" "), rate)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    /// Stop once an accepted step improves the objective by less than this
    /// and the gradient mapping is below `stationarity_tol`.
    pub tol: f64,
    /// Bound on `‖Π(Q + ∇f) − Q‖_F`, where `Π` is the PSD projection.
    pub stationarity_tol: f64,
    pub max_iter: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self { tol: 1e-10, stationarity_tol: 1e-9, max_iter: 200_000 }
    }
}

fn project_psd(q: &CMat) -> CMat {
    let (vals, vecs) = linalg::hermitian_eigen(&linalg::hermitian_part(q));
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| c(v.max(0.0))));
    linalg::hermitian_part(&(&vecs * CMat::from_diagonal(&clipped) * vecs.adjoint()))
}

struct UserProblem {
    /// `H_k Ṽ_k`.
    g: CMat,
    /// `Ṽ_k† Ω Ṽ_k`.
    w: CMat,
}

impl UserProblem {
    fn objective(&self, q: &CMat, sigma2: f64) -> f64 {
        let x = &self.g * q * self.g.adjoint() / c(sigma2);
        linalg::log2_det_identity_plus(&x) - (&self.w * q).trace().re
    }

    fn gradient(&self, q: &CMat, sigma2: f64) -> Result<CMat> {
        let n = self.g.nrows();
        let k = CMat::identity(n, n) * c(sigma2) + &self.g * q * self.g.adjoint();
        let k_inv = linalg::hermitian_part(&k)
            .cholesky()
            .ok_or(Error::Indefinite("noise-plus-signal covariance"))?
            .inverse();
        let grad = self.g.adjoint() * k_inv * &self.g / c(std::f64::consts::LN_2) - &self.w;
        Ok(linalg::hermitian_part(&grad))
    }
}

/// Maximizes `Σ_k log2 det(I + H_k S_k H_k†/σ²) − Tr{Ω Σ_k S_k}` over
/// `S_k = Ṽ_k Q_k Ṽ_k†`, `Q_k ⪰ 0`, by projected gradient ascent with
/// step halving. Users decouple, so each is solved separately. Returns the
/// full-size covariances `S_k`.
pub fn projected_gradient_reference(
    stacked: &[CMat],
    basis: &NullBasis,
    omega_diag: &DVector<f64>,
    sigma2: f64,
    opts: &GradientOptions,
) -> Result<Vec<CMat>> {
    if basis.bases.len() != stacked.len() {
        return Err(Error::DimensionMismatch("one null basis per user".into()));
    }
    let omega = CMat::from_diagonal(&omega_diag.map(c));
    let mut out = Vec::with_capacity(stacked.len());
    for (h, v) in stacked.iter().zip(&basis.bases) {
        let problem = UserProblem { g: h * v, w: linalg::hermitian_part(&(v.adjoint() * &omega * v)) };
        let d = v.ncols();
        let mut q = CMat::zeros(d, d);
        let mut f = problem.objective(&q, sigma2);
        let mut step = 1.0;
        for _ in 0..opts.max_iter {
            let grad = problem.gradient(&q, sigma2)?;
            let mut improved = None;
            while step > 1e-16 {
                let trial = project_psd(&(&q + &grad * c(step)));
                let ft = problem.objective(&trial, sigma2);
                if ft > f {
                    improved = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, fnext)) = improved else { break };
            let gain = fnext - f;
            q = next;
            f = fnext;
            step *= 1.5;
            if gain < opts.tol {
                let mapping = (project_psd(&(&q + problem.gradient(&q, sigma2)?)) - &q).norm();
                if mapping < opts.stationarity_tol {
                    break;
                }
            }
        }
        out.push(linalg::hermitian_part(&(v * q * v.adjoint())));
    }
    Ok(out)
}

/// Maximizer of a unimodal `f` on `[lo, hi]` by golden-section search,
/// stopping when the bracket is narrower than `tol`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Power maximizing `log2(1 + g p / σ²) − c p` over `p ∈ [0, hi]`, found by
/// golden-section search without using the closed form.
///
/// A second pass searches the increment `f(p) − f(p₁)` around the first
/// estimate `p₁`, written so that it carries no cancellation error; plain
/// golden-section on `f` stalls near `sqrt(machine eps)`.
pub fn scalar_power_search(gain: f64, price: f64, sigma2: f64, hi: f64) -> f64 {
    let a = gain / sigma2;
    let f = |p: f64| (a * p).ln_1p() / std::f64::consts::LN_2 - price * p;
    let first = golden_section_max(f, 0.0, hi, 1e-12 * hi.max(1.0));
    let base = 1.0 + a * first;
    let increment = |p: f64| (a * (p - first) / base).ln_1p() / std::f64::consts::LN_2 - price * (p - first);
    let width = (1e-6 * hi.max(1.0)).max(1e-9);
    golden_section_max(increment, (first - width).max(0.0), (first + width).min(hi), 1e-15)
}
