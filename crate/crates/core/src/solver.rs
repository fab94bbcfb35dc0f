//! Reweighted-ℓ1 group-sparse precoding.
//!
//! The ℓ0 count of active RAPs is replaced at every iteration by the
//! weighted sum `Σ_l β_l ω_l` with `β_l = 1/(ω_l^prev + ε)`, which turns into
//! the diagonal penalty `Ψ = η Σ_l β_l B_l`. The per-RAP power constraints
//! are dualized: for fixed multipliers `λ` every user's covariance has the
//! closed form from [`crate::bd`], and `λ` follows a projected subgradient
//! step. Reweighting and the dual step are interleaved, one of each per
//! iteration.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bd::{self, NullBasis, PrecoderSolution, RapBlocks};
use crate::model::ChannelRealization;
use crate::{CMat, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `δ_t = δ`.
    Constant,
    /// `δ_t = δ / t`.
    Diminishing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Price per active RAP, in bits/s/Hz.
    pub eta: f64,
    /// Reweighting constant `ε` in normalized power units.
    pub epsilon_w: f64,
    /// Subgradient step size `δ`.
    pub step0: f64,
    pub step_rule: StepRule,
    /// Stop once the complementary-slackness residual drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// A RAP is active when `ω_l ≥ active_thresh_rel · P_l`.
    pub active_thresh_rel: f64,
    /// Initial multiplier, used for every RAP.
    pub lambda0: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            eta: 0.0,
            epsilon_w: 1e-6,
            step0: 0.1,
            step_rule: StepRule::Constant,
            tol: 1e-4,
            max_iter: 500,
            active_thresh_rel: 1e-5,
            lambda0: 1.0,
        }
    }
}

impl SolverParams {
    pub fn with_eta(eta: f64) -> Self {
        Self { eta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig { field, reason: reason.to_string() })
            }
        };
        check(self.eta >= 0.0 && self.eta.is_finite(), "eta", "must be finite and >= 0")?;
        check(self.epsilon_w > 0.0 && self.epsilon_w.is_finite(), "epsilon_w", "must be > 0")?;
        check(self.step0 > 0.0 && self.step0.is_finite(), "step0", "must be > 0")?;
        check(self.tol > 0.0, "tol", "must be > 0")?;
        check(self.max_iter >= 1, "max_iter", "must be >= 1")?;
        check(
            self.active_thresh_rel > 0.0 && self.active_thresh_rel < 1.0,
            "active_thresh_rel",
            "must lie in (0, 1)",
        )?;
        check(self.lambda0 > 0.0 && self.lambda0.is_finite(), "lambda0", "must be > 0")
    }

    fn step_at(&self, t: usize) -> f64 {
        match self.step_rule {
            StepRule::Constant => self.step0,
            StepRule::Diminishing => self.step0 / t as f64,
        }
    }
}

/// Block-constant diagonal penalty `Ψ = Σ_l ψ_l B_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub per_rap: Vec<f64>,
    pub blocks: RapBlocks,
}

impl PenaltyMatrix {
    pub fn zero(blocks: RapBlocks) -> Self {
        Self { per_rap: vec![0.0; blocks.num_raps], blocks }
    }

    pub fn diag(&self) -> DVector<f64> {
        self.blocks.expand(&self.per_rap)
    }

    pub fn dense(&self) -> CMat {
        CMat::from_diagonal(&self.diag().map(crate::linalg::c))
    }
}

/// `β_l = 1 / (ω_l + ε)`.
pub fn update_weights(omega_prev: &[f64], epsilon_w: f64) -> Vec<f64> {
    omega_prev.iter().map(|&w| 1.0 / (w.max(0.0) + epsilon_w)).collect()
}

/// `Ψ = η Σ_l β_l B_l`.
pub fn build_psi(eta: f64, beta: &[f64], blocks: RapBlocks) -> PenaltyMatrix {
    PenaltyMatrix { per_rap: beta.iter().map(|b| eta * b).collect(), blocks }
}

/// Maximizer of the Lagrangian for fixed prices.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub covariances: Vec<CMat>,
    pub precoders: Vec<CMat>,
    pub per_rap_power: Vec<f64>,
    /// Waterfilling loads per user.
    pub loadings: Vec<Vec<f64>>,
}

/// Closed-form maximizer of
/// `Σ_k log2 det(I + H_k S_k H_k†/σ²) − Tr{Ω Σ_k S_k}` over BD covariances,
/// for an arbitrary nonnegative diagonal price `Ω`.
pub fn inner_solve_with_price(
    stacked: &[CMat],
    basis: &NullBasis,
    omega_diag: &DVector<f64>,
    sigma2: f64,
    blocks: RapBlocks,
) -> Result<InnerSolution> {
    if basis.bases.len() != stacked.len() {
        return Err(Error::DimensionMismatch("one null basis per user".into()));
    }
    let mut covariances = Vec::with_capacity(stacked.len());
    let mut precoders = Vec::with_capacity(stacked.len());
    let mut loadings = Vec::with_capacity(stacked.len());
    for (h, v) in stacked.iter().zip(&basis.bases) {
        let eff = bd::effective_channel(h, v, omega_diag)?;
        let load = bd::waterfill_dual(&eff.xi, sigma2);
        let t = bd::precoder_from_dual(v, &eff, &load)?;
        covariances.push(crate::linalg::hermitian_part(&(&t * t.adjoint())));
        precoders.push(t);
        loadings.push(load);
    }
    let per_rap_power = bd::per_rap_powers_from_precoders(&precoders, &blocks);
    Ok(InnerSolution { covariances, precoders, per_rap_power, loadings })
}

/// Price diagonal `Ω = Ψ + Σ_l λ_l B_l`.
pub fn price_diag(psi: &PenaltyMatrix, lambda: &[f64]) -> DVector<f64> {
    let per_rap: Vec<f64> = psi.per_rap.iter().zip(lambda).map(|(p, l)| p + l).collect();
    psi.blocks.expand(&per_rap)
}

/// Covariances maximizing the Lagrangian for penalty `Ψ` and multipliers `λ`.
pub fn inner_solve(ch: &ChannelRealization, basis: &NullBasis, psi: &PenaltyMatrix, lambda: &[f64]) -> Result<InnerSolution> {
    if lambda.len() != ch.num_raps() || psi.per_rap.len() != ch.num_raps() {
        return Err(Error::DimensionMismatch("one multiplier and one penalty per RAP".into()));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Domain("multipliers must be nonnegative".into()));
    }
    let omega = price_diag(psi, lambda);
    inner_solve_with_price(ch.stacked(), basis, &omega, ch.sigma2, psi.blocks)
}

/// `Σ_k log2 det(I + H_k S_k H_k†/σ²) − Tr{Ω Σ_k S_k}`.
pub fn priced_objective(stacked: &[CMat], covariances: &[CMat], omega_diag: &DVector<f64>, sigma2: f64) -> f64 {
    let cost: f64 = covariances
        .iter()
        .map(|s| (0..s.nrows()).map(|i| omega_diag[i] * s[(i, i)].re).sum::<f64>())
        .sum();
    bd::sum_rate_unchecked(stacked, covariances, sigma2) - cost
}

/// Dual function `g(λ)`: the maximized Lagrangian plus `Σ_l λ_l P_l`.
pub fn dual_value(ch: &ChannelRealization, basis: &NullBasis, psi: &PenaltyMatrix, lambda: &[f64]) -> Result<f64> {
    let inner = inner_solve(ch, basis, psi, lambda)?;
    let omega = price_diag(psi, lambda);
    let budget_term: f64 = lambda.iter().zip(&ch.budgets).map(|(l, p)| l * p).sum();
    Ok(priced_objective(ch.stacked(), &inner.covariances, &omega, ch.sigma2) + budget_term)
}

/// Projected subgradient step `λ_l ← max(λ_l − δ (P_l − ω_l), 0)`.
pub fn subgradient_step(lambda: &[f64], omega: &[f64], budgets: &[f64], delta: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(omega)
        .zip(budgets)
        .map(|((&l, &w), &p)| (l - delta * (p - w)).max(0.0))
        .collect()
}

/// Complementary-slackness residual `Σ_l (λ_l (P_l − ω_l))²`.
pub fn slackness_residual(lambda: &[f64], omega: &[f64], budgets: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(omega)
        .zip(budgets)
        .map(|((&l, &w), &p)| (l * (p - w)).powi(2))
        .sum()
}

/// RAPs with `ω_l ≥ thresh · P_l`, ascending.
pub fn extract_active_set(omega: &[f64], budgets: &[f64], active_thresh_rel: f64) -> Vec<usize> {
    omega
        .iter()
        .zip(budgets)
        .enumerate()
        .filter(|(_, (&w, &p))| w >= active_thresh_rel * p)
        .map(|(l, _)| l)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual: f64,
    pub active_count: usize,
    pub sum_rate: f64,
    /// Multipliers after this iteration's update.
    pub lambda: Vec<f64>,
    /// Per-RAP powers of this iteration's covariances.
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub psi: PenaltyMatrix,
    pub iter: usize,
    pub residual_history: Vec<f64>,
    pub active_count_history: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: PrecoderSolution,
    pub state: DualState,
    pub converged: bool,
    /// Iteration whose covariances were returned.
    pub selected_iter: usize,
    /// Uniform factor applied to restore per-RAP feasibility (1 if none).
    pub feasibility_scale: f64,
    pub trace: Vec<IterationRecord>,
}

impl SolveOutcome {
    pub fn iterations(&self) -> usize {
        self.state.iter
    }
}

/// Runs the reweighted-ℓ1 / dual subgradient iteration.
///
/// Every iteration reweights from the previous powers, solves the priced
/// problem in closed form and takes one projected dual step. It stops when
/// the slackness residual (with the updated multipliers) falls below `tol`.
/// A run hitting `max_iter` returns the iterate with the smallest residual
/// and `converged = false`.
///
/// The returned covariances are scaled down uniformly if any RAP exceeds
/// its budget, which keeps them zero-forcing and PSD.
pub fn solve(ch: &ChannelRealization, params: &SolverParams) -> Result<SolveOutcome> {
    let basis = bd::compute_null_basis(ch.stacked())?;
    solve_with_basis(ch, &basis, params)
}

pub fn solve_with_basis(ch: &ChannelRealization, basis: &NullBasis, params: &SolverParams) -> Result<SolveOutcome> {
    run(ch, basis, params, Penalty::Reweighted)
}

/// Dual subgradient iteration with a fixed penalty `Ψ` (no reweighting).
/// `params.eta` is only used for the reported objective.
pub fn solve_fixed_penalty(ch: &ChannelRealization, psi_per_rap: &[f64], params: &SolverParams) -> Result<SolveOutcome> {
    let basis = bd::compute_null_basis(ch.stacked())?;
    if psi_per_rap.len() != ch.num_raps() || psi_per_rap.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::DimensionMismatch("need one nonnegative penalty per RAP".into()));
    }
    run(ch, &basis, params, Penalty::Fixed(psi_per_rap))
}

enum Penalty<'a> {
    Reweighted,
    Fixed(&'a [f64]),
}

fn run(ch: &ChannelRealization, basis: &NullBasis, params: &SolverParams, penalty: Penalty<'_>) -> Result<SolveOutcome> {
    params.validate()?;
    if !ch.is_bd_feasible() {
        return Err(Error::DimensionMismatch("channel is not BD-feasible".into()));
    }
    if basis.is_degenerate() {
        return Err(Error::DegenerateNullSpace { users: basis.degenerate.clone() });
    }
    let blocks = RapBlocks::new(ch.rap_antennas(), ch.num_raps());
    let budgets = &ch.budgets;

    let mut lambda = vec![params.lambda0; ch.num_raps()];
    // Before any covariance exists every RAP is treated as fully loaded.
    let mut omega_prev = budgets.clone();
    let mut beta = update_weights(&omega_prev, params.epsilon_w);
    let mut psi = PenaltyMatrix::zero(blocks);
    let mut trace = Vec::new();
    let mut residual_history = Vec::new();
    let mut active_count_history = Vec::new();
    let mut best: Option<(f64, usize, InnerSolution)> = None;
    let mut converged = false;
    let mut iter = 0;

    for t in 1..=params.max_iter {
        iter = t;
        psi = match penalty {
            Penalty::Reweighted => {
                beta = update_weights(&omega_prev, params.epsilon_w);
                build_psi(params.eta, &beta, blocks)
            }
            Penalty::Fixed(per_rap) => PenaltyMatrix { per_rap: per_rap.to_vec(), blocks },
        };
        let inner = inner_solve(ch, basis, &psi, &lambda)?;
        let omega = inner.per_rap_power.clone();
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("per-RAP power"));
        }
        let next_lambda = subgradient_step(&lambda, &omega, budgets, params.step_at(t));
        let residual = slackness_residual(&next_lambda, &omega, budgets);
        let active = extract_active_set(&omega, budgets, params.active_thresh_rel);
        trace.push(IterationRecord {
            iter: t,
            residual,
            active_count: active.len(),
            sum_rate: bd::sum_rate_unchecked(ch.stacked(), &inner.covariances, ch.sigma2),
            lambda: next_lambda.clone(),
            omega: omega.clone(),
        });
        residual_history.push(residual);
        active_count_history.push(active.len());

        if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
            best = Some((residual, t, inner));
        }
        lambda = next_lambda;
        omega_prev = omega;
        if residual < params.tol {
            converged = true;
            break;
        }
    }

    let (_, selected_iter, inner) = best.expect("max_iter >= 1");
    let (solution, feasibility_scale) = finalize(ch, inner, params, blocks);
    Ok(SolveOutcome {
        solution,
        state: DualState { lambda, beta, psi, iter, residual_history, active_count_history },
        converged,
        selected_iter,
        feasibility_scale,
        trace,
    })
}

fn finalize(ch: &ChannelRealization, inner: InnerSolution, params: &SolverParams, blocks: RapBlocks) -> (PrecoderSolution, f64) {
    let overshoot = inner
        .per_rap_power
        .iter()
        .zip(&ch.budgets)
        .map(|(w, p)| w / p)
        .fold(1.0, f64::max);
    let scale = 1.0 / overshoot;
    let covariances: Vec<CMat> = inner.covariances.iter().map(|s| s.scale(scale)).collect();
    let precoders: Vec<CMat> = inner.precoders.iter().map(|t| t.scale(scale.sqrt())).collect();
    let per_rap_power = bd::per_rap_powers(&covariances, &blocks);
    let active_set = extract_active_set(&per_rap_power, &ch.budgets, params.active_thresh_rel);
    let sum_rate = bd::sum_rate_unchecked(ch.stacked(), &covariances, ch.sigma2);
    let objective = sum_rate - params.eta * active_set.len() as f64;
    (PrecoderSolution { covariances, precoders, per_rap_power, active_set, sum_rate, objective }, scale)
}

/// Schema tag written as the first line of every CSV this crate emits.
pub const TRACE_SCHEMA: &str = "# cran-trace v1";

/// Floats in CSV output: 12 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes `iter,residual,active_count,sum_rate,lambda_1..L,omega_1..L`.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], num_raps: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_SCHEMA}")?;
    let mut header = vec!["iter".to_string(), "residual".into(), "active_count".into(), "sum_rate".into()];
    header.extend((1..=num_raps).map(|l| format!("lambda_{l}")));
    header.extend((1..=num_raps).map(|l| format!("omega_{l}")));
    writeln!(out, "{}", header.join(","))?;
    for rec in trace {
        let mut row = vec![rec.iter.to_string(), fmt_float(rec.residual), rec.active_count.to_string(), fmt_float(rec.sum_rate)];
        row.extend(rec.lambda.iter().map(|&x| fmt_float(x)));
        row.extend(rec.omega.iter().map(|&x| fmt_float(x)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
