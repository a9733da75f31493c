use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dmem::config::{load_config, LoadedConfig, RunConfig};
use dmem::harness::{run_brute_force, run_heatmap, run_keytest_suite, run_shift_sweep, AttackMode, ExperimentPlan};
use dmem::io::{
    brute_force_table, heatmap_table, json_artifact, keytest_table, schedule_table, shift_table, snapshot_table,
    trace_table, write_results, Artifact, RunInfo,
};
use dmem::metrics::{confidentiality, MetricsBundle};
use dmem::propagation::INVARIANT_TOLERANCE;
use dmem::{simulate_dem, simulate_eit_encrypted, SimResult};

/// Simulate disorder-encrypted optical memories.
#[derive(Parser)]
#[command(name = "dmem", version)]
struct Cli {
    /// Worker threads for ensemble commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run of the three-level echo memory (`lambda` config).
    RunDem(RunArgs),
    /// One run of the four-level EIT memory (`n` config).
    RunEit(RunArgs),
    /// Mean fidelity over a grid of optical depths and disorder strengths.
    Heatmap(PlanArgs),
    /// Retrieval with keys shifted against the encryption key.
    ShiftSweep(PlanArgs),
    /// Random attack keys against one encrypted memory.
    BruteForce {
        #[command(flatten)]
        plan: PlanArgs,
        /// Number of attack keys; overrides the plan.
        #[arg(long)]
        keys: Option<usize>,
    },
    /// Correct, wrong and gradient keys side by side.
    Keytest(PlanArgs),
    /// Validate a config and print it with every default filled in.
    CheckConfig { config: PathBuf },
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the encryption and decryption keys. Keys are secrets.
    #[arg(long)]
    save_keys: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
}

fn load(common: &Common) -> Result<LoadedConfig> {
    let cfg = load_config(&common.config)?;
    Ok(match common.seed {
        Some(seed) => cfg.with_master_seed(seed)?,
        None => cfg,
    })
}

fn check_invariants(result: &SimResult) -> Result<()> {
    Ok(result.diagnostics.check(INVARIANT_TOLERANCE)?)
}

fn run_single(args: &RunArgs, command: &str, want_lambda: bool) -> Result<()> {
    let cfg = load(&args.common)?;
    let start = Instant::now();
    let (result, schedules, retrieval_start, chi, keys) = match (&cfg.run, want_lambda) {
        (RunConfig::Lambda(run), true) => {
            let c = run.config()?;
            log::info!("{} cells x {} steps", c.grid.z.cells, c.grid.t.steps);
            let result = simulate_dem(&c)?;
            let chi = confidentiality(1.0, run.params.correlation_length, 1.0).ok();
            let keys: Vec<_> = c.control.iter().map(|s| s.key.clone()).collect();
            (result, c.control, run.params.t_i, chi, keys)
        }
        (RunConfig::N(run), false) => {
            let c = run.config()?;
            log::info!("{} cells x {} steps", c.grid.z.cells, c.grid.t.steps);
            let result = simulate_eit_encrypted(&c)?;
            let mut schedules = vec![c.control.clone()];
            schedules.extend(c.switches.iter().cloned());
            let keys: Vec<_> = c.switches.iter().map(|s| s.key.clone()).collect();
            (result, schedules, run.params.retrieval_start(), None, keys)
        }
        _ => bail!(
            "{} expects a `{}` config",
            command,
            if want_lambda { "lambda" } else { "n" }
        ),
    };
    check_invariants(&result)?;
    let metrics = MetricsBundle::compute(&result, retrieval_start, None, chi)?;
    let grid = match &cfg.run {
        RunConfig::Lambda(r) => r.params.grid()?,
        RunConfig::N(r) => r.params.grid()?,
        RunConfig::Plan(_) => unreachable!("checked above"),
    };

    let mut artifacts = vec![
        Artifact::Table {
            name: "trace",
            table: trace_table(&result),
        },
        Artifact::Table {
            name: "schedule",
            table: schedule_table(&schedules, &result.time),
        },
        json_artifact(
            "metrics",
            &json!({
                "metrics": metrics,
                "retrieval_start": retrieval_start,
                "diagnostics": result.diagnostics,
            }),
        )?,
    ];
    if !result.snapshots.is_empty() {
        artifacts.push(Artifact::Table {
            name: "snapshots",
            table: snapshot_table(&result, grid.z.spacing()),
        });
    }
    let names = ["key_a", "key_b", "key_c"];
    if args.save_keys {
        for (name, key) in names.iter().zip(&keys) {
            artifacts.push(Artifact::Key { name, key });
        }
    }
    let info = RunInfo {
        command,
        config: &cfg,
        seeds: result.seeds.clone(),
        grid: Some(grid),
        threads: None,
        wall_time: start.elapsed(),
    };
    let manifest = write_results(&args.common.out, &info, &artifacts)?;
    println!(
        "fidelity {:.6}  efficiency {:.6}  delay {:.6}  files {}",
        metrics.fidelity,
        metrics.storage_efficiency,
        metrics.best_delay,
        manifest.files.len()
    );
    Ok(())
}

fn load_plan(cli: &Cli, common: &Common) -> Result<(LoadedConfig, ExperimentPlan)> {
    let cfg = load(common)?;
    let RunConfig::Plan(plan) = &cfg.run else {
        bail!("{} is not a `plan` config", common.config.display());
    };
    let mut plan = plan.clone();
    if cli.threads.is_some() {
        plan.threads = cli.threads;
    }
    Ok((cfg, plan))
}

fn finish(
    common: &Common,
    command: &str,
    cfg: &LoadedConfig,
    plan: &ExperimentPlan,
    seeds: Vec<u64>,
    start: Instant,
    artifacts: &[Artifact<'_>],
) -> Result<()> {
    let info = RunInfo {
        command,
        config: cfg,
        seeds,
        grid: None,
        threads: plan.threads,
        wall_time: start.elapsed(),
    };
    let manifest = write_results(&common.out, &info, artifacts)
        .with_context(|| format!("writing results to {}", common.out.display()))?;
    log::info!("wrote {} files to {}", manifest.files.len(), common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::RunDem(args) => run_single(args, "run-dem", true),
        Command::RunEit(args) => run_single(args, "run-eit", false),
        Command::Heatmap(args) => {
            let (cfg, plan) = load_plan(cli, &args.common)?;
            let start = Instant::now();
            let table = run_heatmap(&plan)?;
            for c in &table.cells {
                println!(
                    "xi {:>8.1}  D {:>8.1}  F {:.4} +- {:.4}  SE {:.4}  failures {}",
                    c.optical_depth, c.strength, c.mean_fidelity, c.fidelity_se, c.mean_efficiency, c.failures
                );
            }
            let artifacts = [
                Artifact::Table {
                    name: "heatmap",
                    table: heatmap_table(&table),
                },
                json_artifact("heatmap", &table)?,
            ];
            finish(
                &args.common,
                "heatmap",
                &cfg,
                &plan,
                table.seeds.clone(),
                start,
                &artifacts,
            )
        }
        Command::ShiftSweep(args) => {
            let (cfg, plan) = load_plan(cli, &args.common)?;
            let start = Instant::now();
            let sweep = run_shift_sweep(&plan)?;
            for c in &sweep.curves {
                println!(
                    "sigma {:.4}  width {}  peak at zero {}  residual {}",
                    c.correlation_length,
                    c.window_width.map_or("-".into(), |w| format!("{w:.3e}")),
                    c.peak_at_zero,
                    c.large_shift_residual.map_or("-".into(), |r| format!("{r:.4}")),
                );
            }
            let artifacts = [
                Artifact::Table {
                    name: "shift_sweep",
                    table: shift_table(&sweep),
                },
                json_artifact("shift_sweep", &sweep)?,
            ];
            finish(&args.common, "shift-sweep", &cfg, &plan, Vec::new(), start, &artifacts)
        }
        Command::BruteForce { plan: args, keys } => {
            let (cfg, plan) = load_plan(cli, &args.common)?;
            let n_keys = match (keys, plan.attack) {
                (Some(n), _) => *n,
                (None, AttackMode::BruteForce { n_keys }) => n_keys,
                (None, _) => bail!("give --keys or set `attack` to brute_force in the plan"),
            };
            let start = Instant::now();
            let report = run_brute_force(&plan, n_keys)?;
            println!(
                "{} keys: {} successes at threshold {}, max normalized SE {}",
                report.n_keys,
                report.successes,
                report.success_threshold,
                report.max_normalized.map_or("-".into(), |m| format!("{m:.4}"))
            );
            let artifacts = [
                Artifact::Table {
                    name: "brute_force",
                    table: brute_force_table(&report),
                },
                json_artifact("brute_force", &report)?,
            ];
            finish(
                &args.common,
                "brute-force",
                &cfg,
                &plan,
                report.seeds.clone(),
                start,
                &artifacts,
            )
        }
        Command::Keytest(args) => {
            let (cfg, plan) = load_plan(cli, &args.common)?;
            let start = Instant::now();
            let report = run_keytest_suite(&plan)?;
            let summary: Vec<_> = report
                .traces
                .iter()
                .map(|t| {
                    println!(
                        "{:<13} F {:.4}  SE {:.4}  normalized {}",
                        t.name,
                        t.metrics.fidelity,
                        t.metrics.storage_efficiency,
                        t.metrics.normalized_se.map_or("-".into(), |v| format!("{v:.4}"))
                    );
                    json!({"name": t.name, "metrics": t.metrics})
                })
                .collect();
            let artifacts = [
                Artifact::Table {
                    name: "keytest",
                    table: keytest_table(&report),
                },
                json_artifact(
                    "keytest",
                    &json!({
                        "scheme": report.scheme,
                        "reference": report.reference,
                        "retrieval_start": report.retrieval_start,
                        "key1_baseline_l2": report.key1_baseline_l2,
                        "traces": summary,
                    }),
                )?,
            ];
            finish(
                &args.common,
                "keytest",
                &cfg,
                &plan,
                report.seeds.clone(),
                start,
                &artifacts,
            )
        }
        Command::CheckConfig { config } => check_config(config),
    }
}

fn check_config(path: &Path) -> Result<()> {
    let cfg = load_config(path)?;
    println!("{}", serde_json::to_string_pretty(&cfg.resolved)?);
    for d in &cfg.defaults {
        eprintln!("default {} = {}", d.field, d.value);
    }
    eprintln!("sha256 {}", cfg.hash);
    Ok(())
}
