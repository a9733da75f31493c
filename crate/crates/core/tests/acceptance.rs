//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits successfully even when a criterion fails, so that a
//! failing physics target is reported rather than hidden behind a panic; it
//! only exits non-zero when the suite itself cannot run. Set `DMEM_ACCEPT`
//! to a comma separated list (e.g. `C3,C12`) to run a subset and
//! `DMEM_FULL=1` for the full 5x5 heatmap instead of the 2x2 smoke grid.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use dmem::config::{load_config, RunConfig};
use dmem::disorder::{estimate_correlation, generate_key, section_key, CorrelationSpec, KeyProfile};
use dmem::grid::{SpaceTimeGrid, TimeGrid, ZGrid};
use dmem::harness::{
    derive_seed, run_brute_force, run_heatmap, run_keytest_suite, run_shift_sweep, trial_keys, AttackMode, DemParams,
    EitParams, ExperimentPlan, Trial,
};
use dmem::lambda::{simulate_dem, DecayModel, LambdaConfig};
use dmem::metrics::{echo_oracle, fidelity, mean_and_se, pearson, storage_efficiency, KeyDistribution};
use dmem::nscheme::{simulate_eit_encrypted, spinwave_rotation_check};
use dmem::propagation::{SimResult, SnapshotStates, SolverDiagnostics, INVARIANT_TOLERANCE};
use dmem::protocol::{build_dem_schedule, phase_theta, ProbeSpec};
use dmem::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

// C1
const BEER_LAMBERT_DEPTH: f64 = 30.0;
const BEER_LAMBERT_DURATION: f64 = 100.0;
const BEER_LAMBERT_TOL: f64 = 0.05;
// C2
const REVIVAL_SCHEDULES: usize = 100;
const REVIVAL_TOL: f64 = 1e-10;
// C3
const MIN_KEY1_FIDELITY: f64 = 0.95;
const MAX_ATTACK_NSE: f64 = 0.05;
// C4
const SE_CEILING_DEPTHS: [f64; 3] = [300.0, 600.0, 1200.0];
const SE_CEILING_RANGE: (f64, f64) = (0.40, 0.60);
const SE_CEILING_REALIZATIONS: u64 = 10;
// C5
const MIN_COVERED_FIDELITY: f64 = 0.9;
const COVERED_MIN_DEPTH: f64 = 600.0;
/// Slack, in combined standard errors, before a dip counts as non-monotone.
const MONOTONE_SLACK_SE: f64 = 2.0;
// C6
const MAX_FINEST_WIDTH: f64 = 1e-2;
// C7
const MAX_BASELINE_L2: f64 = 0.01;
// C8
const MAX_NORM_DRIFT: f64 = 1e-6;
// C10
const ECHO_DEPTH: f64 = 1200.0;
const ECHO_DURATION: f64 = 1e-3;
const ECHO_SEED: u64 = 7;
const ECHO_BINS: usize = 64;
const ECHO_POOLED_KEYS: usize = 200;
const MIN_ECHO_CORRELATION: f64 = 0.9;
const MAX_GAUSSIAN_DEVIATION: f64 = 0.02;
// C11
const STAT_KEYS: usize = 500;
const STAT_CELLS: usize = 1000;
const STAT_SIGMA: f64 = 0.01;
const STAT_STRENGTH: f64 = 1000.0;
const STAT_SE_MULTIPLE: f64 = 3.0;
// C12
const MAX_REFINEMENT_DF: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict, String> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

/// Invariant record of every solver run made by the suite.
struct Hygiene {
    runs: usize,
    worst_trace: f64,
    min_population: f64,
    max_population: f64,
    violations: Vec<String>,
}

static HYGIENE: Mutex<Hygiene> = Mutex::new(Hygiene {
    runs: 0,
    worst_trace: 0.0,
    min_population: 0.0,
    max_population: 0.0,
    violations: Vec::new(),
});

fn record(label: &str, d: &SolverDiagnostics) {
    let mut h = HYGIENE.lock().unwrap();
    h.runs += 1;
    h.worst_trace = h.worst_trace.max(d.max_trace_error);
    h.min_population = h.min_population.min(d.min_population);
    h.max_population = h.max_population.max(d.max_population);
    if !d.invariants_hold(INVARIANT_TOLERANCE) {
        h.violations.push(format!("{label}: {d:?}"));
    }
}

/// Ensemble runners refuse runs that break the invariants; count those.
fn record_ensemble(label: &str, runs: usize, errors: &[String]) {
    let mut h = HYGIENE.lock().unwrap();
    h.runs += runs;
    for e in errors.iter().filter(|e| e.contains("invariants violated")) {
        h.violations.push(format!("{label}: {e}"));
    }
}

/// Converts a harness error, noting it if it was an invariant violation.
fn tracked<T>(label: &str, r: dmem::Result<T>) -> Result<T, String> {
    r.map_err(|e| {
        if matches!(e, Error::InvariantViolated { .. }) {
            HYGIENE.lock().unwrap().violations.push(format!("{label}: {e}"));
        }
        e.to_string()
    })
}

fn plan(name: &str) -> Result<ExperimentPlan, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    match load_config(&path).map_err(|e| e.to_string())?.run {
        RunConfig::Plan(p) => Ok(p),
        _ => Err(format!("{name} is not an experiment plan")),
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn beer_lambert() -> Result<Verdict, String> {
    let probe = ProbeSpec {
        peak_time: 4.0 * BEER_LAMBERT_DURATION,
        duration: BEER_LAMBERT_DURATION,
        amplitude: 0.01,
    };
    // A thick medium is effectively broadband at rate xi Gamma, hence the
    // fine cells and steps.
    let grid = SpaceTimeGrid::new(
        ZGrid::new(1.0, 400).map_err(err)?,
        TimeGrid::covering(8.0 * BEER_LAMBERT_DURATION, 0.025).map_err(err)?,
    );
    let res = simulate_dem(&LambdaConfig {
        optical_depth: BEER_LAMBERT_DEPTH,
        probe,
        control: vec![],
        grid,
        decay: DecayModel::default(),
        snapshot_times: vec![],
    })
    .map_err(err)?;
    record("C1", &res.diagnostics);
    let e = |v: &[num_complex::Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let ratio = e(&res.output) / e(&res.input);
    let rel = ratio / (-BEER_LAMBERT_DEPTH).exp() - 1.0;
    verdict(
        rel.abs() <= BEER_LAMBERT_TOL,
        format!(
            "T = {ratio:.4e} vs exp(-{BEER_LAMBERT_DEPTH}) = {:.4e}, deviation {:+.2}% (tol {:.0}%)",
            (-BEER_LAMBERT_DEPTH).exp(),
            100.0 * rel,
            100.0 * BEER_LAMBERT_TOL
        ),
    )
}

fn phase_revival() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..REVIVAL_SCHEDULES {
        let strength = rng.gen_range(100.0..3000.0);
        let sigma = rng.gen_range(0.005..0.1);
        let t_i = rng.gen_range(0.05..0.4);
        let z = ZGrid::with_max_spacing(1.0, sigma / 10.0).map_err(err)?;
        let key = generate_key(&z, CorrelationSpec::new(strength, sigma).map_err(err)?, k as u64).map_err(err)?;
        let t = TimeGrid::aligned(2.0 * t_i + 0.05, 1e-4, t_i).map_err(err)?;
        let schedule = build_dem_schedule(&key, t_i, t.t_end()).map_err(err)?;
        let peak = phase_theta(std::slice::from_ref(&schedule), &t, t_i).map_err(err)?;
        let revived = phase_theta(std::slice::from_ref(&schedule), &t, 2.0 * t_i).map_err(err)?;
        let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(max(&revived) / max(&peak));
    }
    verdict(
        worst <= REVIVAL_TOL,
        format!("{REVIVAL_SCHEDULES} schedules, worst max|theta(2t_i)| / max|theta(t_i)| = {worst:.2e} (tol {REVIVAL_TOL:.0e})"),
    )
}

/// Key1 fidelity of the desk-scale Lambda key test, shared with the grid
/// refinement check.
static KEY1_FIDELITY: Mutex<Option<f64>> = Mutex::new(None);

fn lambda_keytest() -> Result<Verdict, String> {
    let plan = plan("keytest_lambda.json")?;
    let start = Instant::now();
    let report = tracked("C3", run_keytest_suite(&plan))?;
    record_ensemble("C3", report.traces.len(), &[]);
    let per_trace = start.elapsed().as_secs_f64() / report.traces.len() as f64;
    let get = |name: &str| report.trace(name).ok_or(format!("missing trace {name}"));
    let f1 = get("key1")?.metrics.fidelity;
    *KEY1_FIDELITY.lock().unwrap() = Some(f1);
    let nse = |name: &str| -> Result<f64, String> {
        get(name)?
            .metrics
            .normalized_se
            .ok_or(format!("{name} has no normalized SE"))
    };
    let (n2, n3) = (nse("key2")?, nse("key3")?);
    verdict(
        f1 >= MIN_KEY1_FIDELITY && n2 < MAX_ATTACK_NSE && n3 < MAX_ATTACK_NSE,
        format!(
            "key1 F = {f1:.4} (min {MIN_KEY1_FIDELITY}), key2 nSE = {:.2}%, key3 nSE = {:.2}% (max {:.0}%), {per_trace:.0} s per trace",
            100.0 * n2,
            100.0 * n3,
            100.0 * MAX_ATTACK_NSE
        ),
    )
}

fn efficiency_ceiling() -> Result<Verdict, String> {
    let mut means = Vec::new();
    let mut listed = Vec::new();
    for (k, &xi) in SE_CEILING_DEPTHS.iter().enumerate() {
        let params = DemParams {
            optical_depth: xi,
            ..DemParams::default()
        };
        let grid = params.grid().map_err(err)?;
        let spec = params.spec().map_err(err)?;
        let mut ses = Vec::new();
        for r in 0..SE_CEILING_REALIZATIONS {
            let key = generate_key(&grid.z, spec, derive_seed(4, &[k as u64], r)).map_err(err)?;
            let res = params.run(grid, &key, &key.inverted()).map_err(err)?;
            record("C4", &res.diagnostics);
            ses.push(storage_efficiency(&res.input, &res.output, &res.time, params.t_i).map_err(err)?);
        }
        let (mean, se) = mean_and_se(&ses);
        means.push(mean);
        listed.push(format!("xi={xi}: {:.1} +- {:.1}%", 100.0 * mean, 100.0 * se));
    }
    let max = means.iter().copied().fold(0.0, f64::max);
    verdict(
        (SE_CEILING_RANGE.0..=SE_CEILING_RANGE.1).contains(&max),
        format!(
            "mean SE over {SE_CEILING_REALIZATIONS} keys: {} -> max {:.1}% (required [{:.0}%, {:.0}%])",
            listed.join(", "),
            100.0 * max,
            100.0 * SE_CEILING_RANGE.0,
            100.0 * SE_CEILING_RANGE.1
        ),
    )
}

fn heatmap() -> Result<Verdict, String> {
    let full = std::env::var("DMEM_FULL").is_ok_and(|v| v == "1");
    let plan = plan(if full {
        "heatmap_full.json"
    } else {
        "heatmap_smoke.json"
    })?;
    let table = run_heatmap(&plan).map_err(err)?;
    let errors: Vec<String> = table.cells.iter().flat_map(|c| c.errors.clone()).collect();
    record_ensemble("C5", table.cells.len() * plan.realizations, &errors);
    let failures: usize = table.cells.iter().map(|c| c.failures).sum();

    let covered: Vec<_> = table
        .cells
        .iter()
        .filter(|c| c.coverage >= 1.0 && c.optical_depth >= COVERED_MIN_DEPTH)
        .collect();
    let worst_covered = covered.iter().map(|c| c.mean_fidelity).fold(f64::INFINITY, f64::min);
    let uncovered = table.cells.iter().filter(|c| c.coverage < 1.0).count();

    // Below the best strength of each depth, fidelity must fall steadily as D
    // approaches and crosses the coverage boundary D kappa = 1.
    let mut dips = Vec::new();
    for &xi in &plan.optical_depths {
        let mut row: Vec<_> = table.cells.iter().filter(|c| c.optical_depth == xi).collect();
        row.sort_by(|a, b| a.strength.total_cmp(&b.strength));
        let Some(best) = (0..row.len()).max_by(|&a, &b| row[a].mean_fidelity.total_cmp(&row[b].mean_fidelity)) else {
            continue;
        };
        for w in row[..=best].windows(2) {
            let slack = MONOTONE_SLACK_SE * w[0].fidelity_se.hypot(w[1].fidelity_se);
            if w[0].mean_fidelity > w[1].mean_fidelity + slack {
                dips.push(format!("xi={xi} D={}->{}", w[0].strength, w[1].strength));
            }
        }
    }
    let cells: Vec<String> = table
        .cells
        .iter()
        .map(|c| format!("({}, {}): {:.3}", c.optical_depth, c.strength, c.mean_fidelity))
        .collect();
    verdict(
        failures == 0 && !covered.is_empty() && worst_covered >= MIN_COVERED_FIDELITY && dips.is_empty(),
        format!(
            "{} grid, {} realizations; covered xi>={COVERED_MIN_DEPTH} min F = {worst_covered:.3} (min {MIN_COVERED_FIDELITY}); {uncovered} uncovered cells; non-monotone steps: {}; failures {failures}; F(xi, D) {}",
            if full { "5x5" } else { "2x2 smoke" },
            plan.realizations,
            if dips.is_empty() { "none".into() } else { dips.join(", ") },
            cells.join(" ")
        ),
    )
}

fn shift_sweep() -> Result<Verdict, String> {
    let plan = plan("shift_sweep_lambda.json")?;
    let sweep = tracked("C6", run_shift_sweep(&plan))?;
    let failures: usize = sweep.curves.iter().map(|c| c.failures).sum();
    record_ensemble(
        "C6",
        plan.realizations * plan.correlation_lengths.len() * plan.shifts.len(),
        &[],
    );
    let mut curves = sweep.curves.clone();
    curves.sort_by(|a, b| a.correlation_length.total_cmp(&b.correlation_length));
    let widths: Vec<Option<f64>> = curves.iter().map(|c| c.window_width).collect();
    let ordered = widths.iter().all(Option::is_some) && widths.windows(2).all(|w| w[0] < w[1]);
    let peaks = curves.iter().all(|c| c.peak_at_zero);
    let finest = widths.first().copied().flatten();
    let finest_ok = finest.is_some_and(|w| w < MAX_FINEST_WIDTH);
    let listed: Vec<String> = curves
        .iter()
        .map(|c| {
            format!(
                "sigma={:.4}: width {}, residual {}",
                c.correlation_length,
                c.window_width.map_or("none".into(), |w| format!("{w:.2e}")),
                c.large_shift_residual
                    .map_or("n/a".into(), |r| format!("{:.1}%", 100.0 * r))
            )
        })
        .collect();
    verdict(
        failures == 0 && ordered && peaks && finest_ok,
        format!(
            "peak at delta=0: {peaks}; widths strictly ordered: {ordered}; finest width < {MAX_FINEST_WIDTH:.0e} L: {finest_ok}; {}; failures {failures}",
            listed.join("; ")
        ),
    )
}

fn eit_keytest() -> Result<Verdict, String> {
    let plan = plan("keytest_eit.json")?;
    let report = tracked("C7", run_keytest_suite(&plan))?;
    record_ensemble("C7", report.traces.len(), &[]);
    let l2 = report.key1_baseline_l2.ok_or("no baseline comparison")?;
    let mut worst: f64 = 0.0;
    let mut listed = Vec::new();
    for trial in [Trial::Key2, Trial::Key3, Trial::EncryptOnly, Trial::DecryptOnly] {
        let t = report
            .trace(trial.name())
            .ok_or(format!("missing trace {}", trial.name()))?;
        let nse = t.metrics.normalized_se.ok_or("missing normalized SE")?;
        worst = worst.max(nse);
        listed.push(format!("{} {:.2}%", trial.name(), 100.0 * nse));
    }
    verdict(
        l2 < MAX_BASELINE_L2 && worst < MAX_ATTACK_NSE,
        format!(
            "key1 vs baseline L2 = {:.2e} (max {MAX_BASELINE_L2}); nSE {} (max {:.0}%)",
            l2,
            listed.join(", "),
            100.0 * MAX_ATTACK_NSE
        ),
    )
}

fn rotation_conservation() -> Result<Verdict, String> {
    let params = EitParams::default();
    let grid = params.grid().map_err(err)?;
    let keys = trial_keys(&grid.z, params.spec().map_err(err)?, 1, Trial::Key1).map_err(err)?;
    let mut cfg = params
        .config(grid, keys.encrypt.as_ref(), keys.decrypt.as_ref())
        .map_err(err)?;
    let (t_ref, between, after) = (57.0, 85.0, 113.0);
    cfg.snapshot_times = vec![t_ref, between, after];
    let res = simulate_eit_encrypted(&cfg).map_err(err)?;
    record("C8", &res.diagnostics);
    let a = spinwave_rotation_check(&res, &cfg.switches, t_ref, between).map_err(err)?;
    let b = spinwave_rotation_check(&res, &cfg.switches, t_ref, after).map_err(err)?;
    let drift = a.norm.max(b.norm);
    verdict(
        drift <= MAX_NORM_DRIFT,
        format!(
            "relative drift of |rho21|^2+|rho41|^2: {:.2e} after encryption, {:.2e} after decryption (max {MAX_NORM_DRIFT:.0e}); rotation residual {:.2e}",
            a.norm,
            b.norm,
            a.rotation.max(b.rotation)
        ),
    )
}

fn brute_force() -> Result<Verdict, String> {
    let plan = plan("brute_force.json")?;
    let AttackMode::BruteForce { n_keys } = plan.attack else {
        return Err("brute_force.json does not configure a brute-force attack".into());
    };
    let report = tracked("C9", run_brute_force(&plan, n_keys))?;
    record_ensemble("C9", n_keys + 1, &[]);
    verdict(
        report.successes == 0 && report.control_success,
        format!(
            "{} keys, {} successes at {:.0}% threshold; best attack {:.2}%, mean {:.2}% of the legitimate SE {:.1}%",
            report.n_keys,
            report.successes,
            100.0 * report.success_threshold,
            100.0 * report.max_normalized.unwrap_or(0.0),
            100.0 * report.mean_normalized.unwrap_or(0.0),
            100.0 * report.correct_efficiency
        ),
    )
}

fn echo_shape() -> Result<Verdict, String> {
    let params = DemParams {
        optical_depth: ECHO_DEPTH,
        probe: ProbeSpec {
            duration: ECHO_DURATION,
            ..DemParams::default().probe
        },
        ..DemParams::default()
    };
    let grid = params.grid().map_err(err)?;
    let spec = params.spec().map_err(err)?;
    let key = generate_key(&grid.z, spec, ECHO_SEED).map_err(err)?;
    let res = params.run(grid, &key, &key.inverted()).map_err(err)?;
    record("C10", &res.diagnostics);

    let from = grid.t.first_index_at_or_after(params.t_i);
    let times = &res.times()[from..];
    let amplitude: Vec<f64> = res.output[from..].iter().map(|c| c.norm()).collect();
    let centre = 2.0 * params.t_i - params.probe.peak_time;
    let own = KeyDistribution::from_keys(&[&key], ECHO_BINS).map_err(err)?;
    let predicted: Vec<f64> = echo_oracle(&own, centre, times)
        .envelope
        .iter()
        .map(|e| e.abs())
        .collect();
    let corr = pearson(&amplitude, &predicted);

    let pool: Vec<KeyProfile> = (0..ECHO_POOLED_KEYS as u64)
        .into_par_iter()
        .map(|r| generate_key(&grid.z, spec, derive_seed(ECHO_SEED, &[10], r)))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let refs: Vec<&KeyProfile> = pool.iter().collect();
    let pooled = echo_oracle(
        &KeyDistribution::from_keys(&refs, ECHO_BINS).map_err(err)?,
        centre,
        times,
    );
    let gaussian = echo_oracle(
        &KeyDistribution::Gaussian {
            strength: params.strength,
        },
        centre,
        times,
    );
    let deviation = pooled
        .envelope
        .iter()
        .zip(&gaussian.envelope)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        corr >= MIN_ECHO_CORRELATION && deviation <= MAX_GAUSSIAN_DEVIATION,
        format!(
            "xi={ECHO_DEPTH}, kappa={ECHO_DURATION:.0e}: solver vs key-histogram prediction r = {corr:.4} (min {MIN_ECHO_CORRELATION}); Gaussian vs {ECHO_POOLED_KEYS}-key histogram max deviation {:.2}% (max {:.0}%)",
            100.0 * deviation,
            100.0 * MAX_GAUSSIAN_DEVIATION
        ),
    )
}

fn keys_in_pool(threads: usize, grid: &ZGrid, spec: CorrelationSpec) -> Result<Vec<KeyProfile>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        (0..STAT_KEYS as u64)
            .into_par_iter()
            .map(|r| generate_key(grid, spec, derive_seed(11, &[], r)))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(err)
}

fn disorder_statistics() -> Result<Verdict, String> {
    let grid = ZGrid::new(1.0, STAT_CELLS).map_err(err)?;
    let spec = CorrelationSpec::new(STAT_STRENGTH, STAT_SIGMA).map_err(err)?;
    let keys = keys_in_pool(1, &grid, spec)?;
    let max_lag = (3.0 * STAT_SIGMA / grid.spacing()).round() as usize;
    let lags: Vec<usize> = (0..=max_lag).collect();
    let est = estimate_correlation(&keys, &lags).map_err(err)?;
    let mut worst: f64 = 0.0;
    for ((sep, v), se) in est.separations.iter().zip(&est.values).zip(&est.std_errors) {
        worst = worst.max((v - spec.covariance(*sep)).abs() / se);
    }

    let parallel = keys_in_pool(3, &grid, spec)?;
    let keys_identical = keys.iter().zip(&parallel).all(|(a, b)| {
        a.samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let small = ExperimentPlan {
        realizations: 2,
        optical_depths: vec![10.0, 20.0],
        strengths: vec![200.0, 300.0],
        dem: DemParams {
            optical_depth: 20.0,
            strength: 300.0,
            correlation_length: 0.05,
            probe: ProbeSpec {
                peak_time: 0.05,
                duration: 0.01,
                amplitude: 0.01,
            },
            t_i: 0.15,
            t_end: 0.3,
            ..DemParams::default()
        },
        ..ExperimentPlan::default()
    };
    let heat = |threads| {
        run_heatmap(&ExperimentPlan {
            threads: Some(threads),
            ..small.clone()
        })
        .map_err(err)
    };
    let (one, three) = (heat(1)?, heat(3)?);
    let bits = |t: &dmem::harness::HeatmapTable| -> Vec<u64> {
        t.cells
            .iter()
            .flat_map(|c| [c.mean_fidelity.to_bits(), c.mean_efficiency.to_bits()])
            .collect()
    };
    let runs_identical = bits(&one) == bits(&three);
    verdict(
        worst <= STAT_SE_MULTIPLE && keys_identical && runs_identical,
        format!(
            "{STAT_KEYS} keys, lags 0..={max_lag} cells (3 sigma): worst |C_emp - D^2 exp(-s^2/sigma^2)| = {worst:.2} SE (max {STAT_SE_MULTIPLE}); 1 vs 3 threads bit-identical: keys {keys_identical}, heatmap {runs_identical}"
        ),
    )
}

#[allow(clippy::needless_range_loop)]
fn check_hermitian(res: &SimResult) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for snap in &res.snapshots {
        let SnapshotStates::Lambda(cells) = &snap.states else {
            return Err("expected Lambda snapshots".into());
        };
        for c in cells {
            let m = c.density_matrix();
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max((m[i][j] - m[j][i].conj()).norm());
                }
            }
            worst = worst.max((m[0][0].re + m[1][1].re + m[2][2].re - 1.0).abs());
        }
    }
    Ok(worst)
}

fn numerical_hygiene() -> Result<Verdict, String> {
    let plan = plan("keytest_lambda.json")?;
    let params = plan.dem;
    let coarse = params.grid().map_err(err)?;
    let key = trial_keys(&coarse.z, params.spec().map_err(err)?, plan.master_seed, Trial::Key1)
        .map_err(err)?
        .encrypt
        .ok_or("key1 has no encryption key")?;
    let base = match *KEY1_FIDELITY.lock().unwrap() {
        Some(f) => f,
        None => {
            let res = params.run(coarse, &key, &key.inverted()).map_err(err)?;
            record("C12", &res.diagnostics);
            fidelity(&res.input, &res.output, &res.time, params.t_i)
                .map_err(err)?
                .fidelity
        }
    };
    let fine = coarse.refined();
    let fine_key = section_key(&key, 0.0, &fine.z).map_err(err)?;
    let mut cfg = params.config(fine, &fine_key, &fine_key.inverted()).map_err(err)?;
    cfg.snapshot_times = vec![0.1, params.t_i, 0.3];
    let res = simulate_dem(&cfg).map_err(err)?;
    record("C12", &res.diagnostics);
    let refined = fidelity(&res.input, &res.output, &res.time, params.t_i)
        .map_err(err)?
        .fidelity;
    let hermitian = check_hermitian(&res)?;
    let df = (refined - base).abs();

    let h = HYGIENE.lock().unwrap();
    let clean = h.violations.is_empty() && hermitian <= INVARIANT_TOLERANCE;
    verdict(
        df < MAX_REFINEMENT_DF && clean,
        format!(
            "F = {base:.5} -> {refined:.5} on the halved grid, |dF| = {df:.1e} (max {MAX_REFINEMENT_DF:.0e}); {} solver runs, worst trace error {:.1e}, populations in [{:.1e}, 1{:+.1e}], snapshot Hermiticity/trace residual {hermitian:.1e}, violations: {}",
            h.runs,
            h.worst_trace,
            h.min_population,
            h.max_population - 1.0,
            if h.violations.is_empty() { "none".into() } else { h.violations.join("; ") }
        ),
    )
}

type Criterion = fn() -> Result<Verdict, String>;

fn main() {
    let criteria: [(&str, &str, Criterion); 12] = [
        ("C1", "Beer-Lambert absorption", beer_lambert),
        ("C2", "phase revival", phase_revival),
        ("C3", "Lambda key test", lambda_keytest),
        ("C4", "storage efficiency ceiling", efficiency_ceiling),
        ("C5", "fidelity heatmap", heatmap),
        ("C6", "shift sweep", shift_sweep),
        ("C7", "EIT key test", eit_keytest),
        ("C8", "spin-wave rotation", rotation_conservation),
        ("C9", "brute force", brute_force),
        ("C10", "echo shape oracle", echo_shape),
        ("C11", "disorder statistics", disorder_statistics),
        ("C12", "numerical hygiene", numerical_hygiene),
    ];
    let only: Option<Vec<String>> = std::env::var("DMEM_ACCEPT")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());

    let mut passed = 0;
    let mut ran = 0;
    for (id, title, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(v) => {
                passed += usize::from(v.pass);
                println!(
                    "{id} {} {title}: {} [{secs:.1} s]",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.detail
                );
            }
            Err(e) => println!("{id} FAIL {title}: error: {e} [{secs:.1} s]"),
        }
    }
    println!("acceptance: {passed}/{ran} criteria pass");
}
