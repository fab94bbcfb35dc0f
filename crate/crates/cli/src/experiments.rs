//! The four experiment drivers. Each returns its results in memory and
//! writes plot-ready CSV files into the configured output directory.
//!
//! Realizations run on the rayon pool; every realization draws from its own
//! seeded stream and results are collected in index order, so output is
//! byte-identical regardless of thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cran_core::bd;
use cran_core::model::{realize, realize_fading, ChannelFile, ChannelRealization, SystemConfig};
use cran_core::oracle::{self, MaxRateOptions, SearchSize, SubsetResult};
use cran_core::solver::{self, SolveOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::csv::{self, fmt_float, floats, opt_float, CsvFile};
use crate::error::{CliError, Result};

/// Identifies one channel draw: layout index and fading index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RealizationId {
    pub layout: u32,
    pub fading: u32,
}

pub fn realization_ids(n_layouts: usize, n_fading: usize) -> Vec<RealizationId> {
    (0..n_layouts as u32)
        .flat_map(|layout| (0..n_fading as u32).map(move |fading| RealizationId { layout, fading }))
        .collect()
}

pub fn channel(sys: &SystemConfig, id: RealizationId) -> Result<ChannelRealization> {
    Ok(realize_fading(sys, id.layout, id.fading)?)
}

/// Summary of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub eta: f64,
    pub step: f64,
    pub id: RealizationId,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub active_count: usize,
    pub sum_rate: f64,
    /// Residual never increased from one iteration to the next.
    pub monotone: bool,
}

impl RunSummary {
    pub fn new(eta: f64, step: f64, id: RealizationId, out: &SolveOutcome) -> Self {
        let h = &out.state.residual_history;
        Self {
            eta,
            step,
            id,
            converged: out.converged,
            iterations: out.iterations(),
            final_residual: h.last().copied().unwrap_or(f64::NAN),
            active_count: out.solution.active_set.len(),
            sum_rate: out.solution.sum_rate,
            monotone: h.windows(2).all(|w| w[1] <= w[0]),
        }
    }
}

pub struct ConvergeReport {
    /// Full traces on the first realization, one per (η, δ).
    pub traces: Vec<(f64, f64, SolveOutcome)>,
    /// One run per (η, δ, layout) on fading draw 0.
    pub runs: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

/// Convergence traces for every configured η and step size, plus a
/// per-layout summary of iteration counts and monotonicity.
pub fn converge(cfg: &ExperimentConfig) -> Result<ConvergeReport> {
    let sys = cfg.system();
    let l = sys.num_raps;
    let first = channel(&sys, RealizationId { layout: 0, fading: 0 })?;
    let grid: Vec<(f64, f64)> = cfg.etas().into_iter().flat_map(|e| cfg.steps().into_iter().map(move |s| (e, s))).collect();

    let traces = grid
        .par_iter()
        .map(|&(eta, step)| Ok((eta, step, solver::solve(&first, &cfg.solver(eta, step))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut trace_csv = CsvFile::create(
        &cfg.out_dir,
        "converge.csv",
        "cran-converge v1",
        &csv::header(&["eta", "step", "iter", "residual", "active_count", "sum_rate"], l, &["lambda", "omega"]),
    )?;
    for (eta, step, out) in &traces {
        for rec in &out.trace {
            let mut row = vec![fmt_float(*eta), fmt_float(*step), rec.iter.to_string(), fmt_float(rec.residual)];
            row.push(rec.active_count.to_string());
            row.push(fmt_float(rec.sum_rate));
            row.extend(floats(&rec.lambda));
            row.extend(floats(&rec.omega));
            trace_csv.row(&row)?;
        }
    }

    let ids: Vec<RealizationId> = (0..cfg.n_layouts() as u32).map(|layout| RealizationId { layout, fading: 0 }).collect();
    let jobs: Vec<(f64, f64, RealizationId)> =
        grid.iter().flat_map(|&(e, s)| ids.iter().map(move |&id| (e, s, id))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(eta, step, id)| {
            let ch = channel(&sys, id)?;
            let out = solver::solve(&ch, &cfg.solver(eta, step))?;
            Ok(RunSummary::new(eta, step, id, &out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary_csv = CsvFile::create(
        &cfg.out_dir,
        "converge_summary.csv",
        "cran-converge-summary v1",
        &csv::header(
            &["eta", "step", "layout", "fading", "converged", "iterations", "final_residual", "active_count", "sum_rate", "monotone"],
            0,
            &[],
        ),
    )?;
    for r in &runs {
        summary_csv.row(&run_row(r))?;
    }
    let files = vec![trace_csv.finish()?, summary_csv.finish()?];
    Ok(ConvergeReport { traces, runs, files })
}

fn run_row(r: &RunSummary) -> Vec<String> {
    vec![
        fmt_float(r.eta),
        fmt_float(r.step),
        r.id.layout.to_string(),
        r.id.fading.to_string(),
        r.converged.to_string(),
        r.iterations.to_string(),
        fmt_float(r.final_residual),
        r.active_count.to_string(),
        fmt_float(r.sum_rate),
        r.monotone.to_string(),
    ]
}

/// Average over the converged runs at one η.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub eta: f64,
    pub mean_active: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub n_samples: usize,
    pub n_nonconverged: usize,
    /// Mean exhaustive-search rate at each run's own cardinality.
    pub mean_oracle_rate: Option<f64>,
}

/// Mean rate of deploying only the first `cardinality` RAPs of each layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub cardinality: usize,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRun {
    pub summary: RunSummary,
    /// Best exhaustive rate at `summary.active_count`, when feasible.
    pub oracle_rate: Option<f64>,
}

pub struct TradeoffReport {
    pub points: Vec<TradeoffPoint>,
    pub runs: Vec<TradeoffRun>,
    pub fixed: Vec<FixedPoint>,
    /// Exhaustive frontier per realization (empty with the oracle off).
    pub frontiers: Vec<(RealizationId, Vec<SubsetResult>)>,
    pub files: Vec<PathBuf>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

struct RealizationResult {
    id: RealizationId,
    runs: Vec<(TradeoffRun, Option<serde_json::Value>)>,
    fixed: Vec<(usize, f64)>,
    frontier: Vec<SubsetResult>,
}

/// Rate vs number of active RAPs over an η sweep, with the fixed-deployment
/// baseline and (optionally) the exhaustive-search frontier.
pub fn tradeoff(cfg: &ExperimentConfig) -> Result<TradeoffReport> {
    let sys = cfg.system();
    let step = cfg.steps()[0];
    let etas = cfg.etas();
    let ids = realization_ids(cfg.n_layouts(), cfg.n_fading());
    let opts = MaxRateOptions::default();
    let a_min = sys.min_active_raps();
    let feasible = |a: usize| oracle::subset_is_feasible(a, sys.rap_antennas, sys.num_users, sys.user_antennas);

    let results = ids
        .par_iter()
        .map(|&id| -> Result<RealizationResult> {
            let ch = channel(&sys, id)?;
            let frontier = if cfg.oracle { oracle::exhaustive_search(&ch, SearchSize::All, &opts)? } else { Vec::new() };
            let mut runs = Vec::with_capacity(etas.len());
            for &eta in &etas {
                let out = solver::solve(&ch, &cfg.solver(eta, step))?;
                let summary = RunSummary::new(eta, step, id, &out);
                let oracle_rate = frontier
                    .iter()
                    .find(|r| r.subset.len() == summary.active_count)
                    .and_then(|r| r.rate);
                let dump = if cfg.dump_covariances {
                    let channel = serde_json::to_value(ChannelFile::from(&ch)).map_err(|e| CliError::Core(e.into()))?;
                    Some(serde_json::json!({
                        "eta": eta,
                        "channel": channel,
                        "solution": bd::covariance_dump(&out.solution),
                    }))
                } else {
                    None
                };
                runs.push((TradeoffRun { summary, oracle_rate }, dump));
            }
            let fixed = (a_min..=sys.num_raps)
                .filter(|&a| feasible(a))
                .map(|a| {
                    let subset: Vec<usize> = (0..a).collect();
                    Ok((a, oracle::solve_fixed_subset(&ch, &subset, &opts)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RealizationResult { id, runs, fixed, frontier })
        })
        .collect::<Result<Vec<_>>>()?;

    let runs: Vec<TradeoffRun> = results.iter().flat_map(|r| r.runs.iter().map(|(run, _)| run.clone())).collect();
    let points: Vec<TradeoffPoint> = etas
        .iter()
        .map(|&eta| {
            let at_eta: Vec<&TradeoffRun> = runs.iter().filter(|r| r.summary.eta == eta).collect();
            let ok: Vec<&TradeoffRun> = at_eta.iter().copied().filter(|r| r.summary.converged).collect();
            let rates: Vec<f64> = ok.iter().map(|r| r.summary.sum_rate).collect();
            let (mean_rate, std_rate) = mean_std(&rates);
            let actives: Vec<f64> = ok.iter().map(|r| r.summary.active_count as f64).collect();
            let oracle_rates: Vec<f64> = ok.iter().filter_map(|r| r.oracle_rate).collect();
            TradeoffPoint {
                eta,
                mean_active: mean_std(&actives).0,
                mean_rate,
                std_rate,
                n_samples: ok.len(),
                n_nonconverged: at_eta.len() - ok.len(),
                mean_oracle_rate: (cfg.oracle && !oracle_rates.is_empty()).then(|| mean_std(&oracle_rates).0),
            }
        })
        .collect();
    let fixed: Vec<FixedPoint> = (a_min..=sys.num_raps)
        .filter(|&a| feasible(a))
        .map(|a| {
            let rates: Vec<f64> = results.iter().flat_map(|r| r.fixed.iter().filter(|f| f.0 == a).map(|f| f.1)).collect();
            let (mean_rate, std_rate) = mean_std(&rates);
            FixedPoint { cardinality: a, mean_rate, std_rate, n_samples: rates.len() }
        })
        .collect();

    let mut files = Vec::new();
    let mut points_csv = CsvFile::create(
        &cfg.out_dir,
        "tradeoff.csv",
        "cran-tradeoff v1",
        &csv::header(&["eta", "mean_active", "mean_rate", "std_rate", "n_samples", "n_nonconverged", "mean_oracle_rate"], 0, &[]),
    )?;
    for p in &points {
        points_csv.row(&[
            fmt_float(p.eta),
            fmt_float(p.mean_active),
            fmt_float(p.mean_rate),
            fmt_float(p.std_rate),
            p.n_samples.to_string(),
            p.n_nonconverged.to_string(),
            opt_float(p.mean_oracle_rate),
        ])?;
    }
    files.push(points_csv.finish()?);

    let mut runs_csv = CsvFile::create(
        &cfg.out_dir,
        "tradeoff_runs.csv",
        "cran-tradeoff-runs v1",
        &csv::header(
            &["eta", "step", "layout", "fading", "converged", "iterations", "final_residual", "active_count", "sum_rate", "monotone", "oracle_rate"],
            0,
            &[],
        ),
    )?;
    for r in &runs {
        let mut row = run_row(&r.summary);
        row.push(opt_float(r.oracle_rate));
        runs_csv.row(&row)?;
    }
    files.push(runs_csv.finish()?);

    let mut fixed_csv = CsvFile::create(
        &cfg.out_dir,
        "fixed.csv",
        "cran-fixed v1",
        &csv::header(&["cardinality", "mean_rate", "std_rate", "n_samples"], 0, &[]),
    )?;
    for f in &fixed {
        fixed_csv.row(&[f.cardinality.to_string(), fmt_float(f.mean_rate), fmt_float(f.std_rate), f.n_samples.to_string()])?;
    }
    files.push(fixed_csv.finish()?);

    if cfg.oracle {
        let mut frontier_csv = CsvFile::create(
            &cfg.out_dir,
            "frontier.csv",
            "cran-frontier v1",
            &csv::header(&["layout", "fading", "cardinality", "best_subset", "rate"], 0, &[]),
        )?;
        for r in &results {
            for s in &r.frontier {
                let subset: Vec<String> = s.subset.iter().map(|i| i.to_string()).collect();
                frontier_csv.row(&[
                    r.id.layout.to_string(),
                    r.id.fading.to_string(),
                    s.subset.len().to_string(),
                    subset.join(" "),
                    opt_float(s.rate),
                ])?;
            }
        }
        files.push(frontier_csv.finish()?);
    }

    if cfg.dump_covariances {
        let dir = cfg.out_dir.join("dumps");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for r in &results {
            for (i, (_, dump)) in r.runs.iter().enumerate() {
                if let Some(dump) = dump {
                    let path = dir.join(format!("eta{i}_layout{}_fading{}.json", r.id.layout, r.id.fading));
                    write_json(&path, dump)?;
                }
            }
        }
        files.push(dir);
    }

    let frontiers = results.into_iter().map(|r| (r.id, r.frontier)).collect();
    Ok(TradeoffReport { points, runs, fixed, frontiers, files })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Core(e.into()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub struct PowersReport {
    pub runs: Vec<(f64, SolveOutcome)>,
    pub budgets: Vec<f64>,
    pub files: Vec<PathBuf>,
}

/// Per-RAP transmit power at every iteration on the first realization.
pub fn powers(cfg: &ExperimentConfig) -> Result<PowersReport> {
    let sys = cfg.system();
    let l = sys.num_raps;
    let ch = channel(&sys, RealizationId { layout: 0, fading: 0 })?;
    let step = cfg.steps()[0];
    let runs = cfg
        .etas()
        .par_iter()
        .map(|&eta| Ok((eta, solver::solve(&ch, &cfg.solver(eta, step))?)))
        .collect::<Result<Vec<_>>>()?;

    let mut trace_csv = CsvFile::create(
        &cfg.out_dir,
        "powers.csv",
        "cran-powers v1",
        &csv::header(&["eta", "iter", "active_count"], l, &["omega"]),
    )?;
    for (eta, out) in &runs {
        for rec in &out.trace {
            let mut row = vec![fmt_float(*eta), rec.iter.to_string(), rec.active_count.to_string()];
            row.extend(floats(&rec.omega));
            trace_csv.row(&row)?;
        }
    }
    let mut final_csv = CsvFile::create(
        &cfg.out_dir,
        "powers_final.csv",
        "cran-powers-final v1",
        &csv::header(&["eta", "converged", "rap", "omega", "budget", "active"], 0, &[]),
    )?;
    for (eta, out) in &runs {
        for (rap, (w, p)) in out.solution.per_rap_power.iter().zip(&ch.budgets).enumerate() {
            final_csv.row(&[
                fmt_float(*eta),
                out.converged.to_string(),
                (rap + 1).to_string(),
                fmt_float(*w),
                fmt_float(*p),
                out.solution.active_set.contains(&rap).to_string(),
            ])?;
        }
    }
    let files = vec![trace_csv.finish()?, final_csv.finish()?];
    Ok(PowersReport { runs, budgets: ch.budgets.clone(), files })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub num_raps: usize,
    pub rap_antennas: usize,
    /// Median over realizations of wall time per iteration, seconds.
    pub median_iter_seconds: f64,
    /// Mean iteration count over realizations.
    pub t_avg: f64,
    pub n_seeds: usize,
}

pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of log(time per iteration) against log(L).
    pub slope: f64,
    pub files: Vec<PathBuf>,
}

/// Timing of one solve per realization; runs sequentially so the
/// measurements do not compete for cores.
pub fn bench_point(cfg: &ExperimentConfig, num_raps: usize, rap_antennas: usize) -> Result<BenchPoint> {
    let mut sys = SystemConfig::new(num_raps, rap_antennas, cfg.num_users, cfg.user_antennas);
    sys.seed = cfg.seed;
    sys.radius_km = cfg.radius_km;
    let params = cfg.solver(cfg.etas().into_iter().find(|&e| e > 0.0).unwrap_or(0.0), cfg.steps()[0]);
    let mut per_iter = Vec::with_capacity(cfg.bench_seeds);
    let mut iterations = Vec::with_capacity(cfg.bench_seeds);
    for s in 0..cfg.bench_seeds as u64 {
        let ch = realize(&sys, s)?;
        let basis = bd::compute_null_basis(ch.stacked())?;
        let start = Instant::now();
        let out = solver::solve_with_basis(&ch, &basis, &params)?;
        let elapsed = start.elapsed().as_secs_f64();
        per_iter.push(elapsed / out.iterations() as f64);
        iterations.push(out.iterations() as f64);
    }
    per_iter.sort_by(f64::total_cmp);
    let median = if per_iter.len() % 2 == 1 {
        per_iter[per_iter.len() / 2]
    } else {
        0.5 * (per_iter[per_iter.len() / 2 - 1] + per_iter[per_iter.len() / 2])
    };
    Ok(BenchPoint {
        num_raps,
        rap_antennas,
        median_iter_seconds: median,
        t_avg: iterations.iter().sum::<f64>() / iterations.len() as f64,
        n_seeds: cfg.bench_seeds,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Per-iteration time against the number of RAPs.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let points = cfg
        .bench_raps
        .iter()
        .map(|&l| bench_point(cfg, l, cfg.rap_antennas))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.num_raps as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_iter_seconds).collect();
    let slope = if points.len() >= 2 { loglog_slope(&xs, &ys) } else { f64::NAN };

    let mut csv_out = CsvFile::create(
        &cfg.out_dir,
        "bench.csv",
        "cran-bench v1",
        &csv::header(&["num_raps", "rap_antennas", "median_iter_seconds", "t_avg", "n_seeds"], 0, &[]),
    )?;
    for p in &points {
        csv_out.row(&[
            p.num_raps.to_string(),
            p.rap_antennas.to_string(),
            fmt_float(p.median_iter_seconds),
            fmt_float(p.t_avg),
            p.n_seeds.to_string(),
        ])?;
    }
    let mut fit = CsvFile::create(&cfg.out_dir, "bench_fit.csv", "cran-bench-fit v1", &["loglog_slope".to_string()])?;
    fit.row(&[fmt_float(slope)])?;
    let files = vec![csv_out.finish()?, fit.finish()?];
    Ok(BenchReport { points, slope, files })
}
