//! Command-line frontend: training, evaluation, benchmark sweeps, the
//! centralized baseline, and gradient checking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfmimo::channel::{sample_realization, SimRng, SystemConfig};
use cfmimo::error::Error;
use cfmimo::gnn::GnnConfig;
use cfmimo::harness::checkpoint::{load_checkpoint, save_checkpoint};
use cfmimo::harness::{
    load_config, run_experiment, write_history_csv, write_results_csv, write_results_json,
    write_trace_csv, ExperimentReport, ExperimentSpec, HarnessConfig, Method, SweepVar, TraceRow,
};
use cfmimo::trainer::{gradient_check, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "cfmimo",
    about = "IRS-enhanced cell-free MIMO simulator: distributed GNN beamforming vs classic baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the per-BS networks and write a checkpoint plus history.
    Train {
        /// JSON configuration file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seed (overrides SIM_SEED and the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write a per-step loss trace.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate a trained checkpoint against all benchmark methods.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Paired channel realizations per method.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the sweep described by the config's `experiment` section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Checkpoint for the dml method, when listed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the centralized ZF + power-allocation baseline over random draws.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the per-iteration surrogate trace.
        #[arg(long)]
        trace: bool,
    },
    /// Verify analytic gradients against finite differences on a small
    /// instance.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) => 2,
        Error::Numeric(_)
        | Error::Singular(_)
        | Error::Degenerate(_)
        | Error::Infeasible(_)
        | Error::Domain(_)
        | Error::Shape(_) => 3,
        Error::Io(_) => 1,
    }
}

/// Seed precedence: CLI flag, then SIM_SEED, then the configured value.
fn resolve_seed(cli: Option<u64>, configured: u64) -> Result<u64, Error> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match std::env::var("SIM_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("SIM_SEED={text:?} is not a u64: {e}"))),
        Err(_) => Ok(configured),
    }
}

fn load_or_default(path: &Option<PathBuf>) -> Result<HarnessConfig, Error> {
    match path {
        Some(p) => load_config(p),
        None => Ok(HarnessConfig::default()),
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            trace,
        } => cmd_train(&load_or_default(&config)?, seed, &out, trace),
        Command::Eval {
            config,
            checkpoint,
            trials,
            seed,
            out,
        } => cmd_eval(&load_or_default(&config)?, &checkpoint, trials, seed, &out),
        Command::Sweep {
            config,
            seed,
            trials,
            checkpoint,
            out,
        } => cmd_sweep(&load_config(&config)?, seed, trials, checkpoint.as_deref(), &out),
        Command::Baseline {
            config,
            trials,
            seed,
            out,
            trace,
        } => cmd_baseline(&load_or_default(&config)?, trials, seed, &out, trace),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

fn cmd_train(
    cfg: &HarnessConfig,
    seed: Option<u64>,
    out: &Path,
    trace: bool,
) -> Result<(), Error> {
    ensure_out_dir(out)?;
    let mut tcfg: TrainConfig = cfg.train.clone();
    tcfg.seed = resolve_seed(seed, tcfg.seed)?;

    let mut steps: Vec<(u64, f64, f64)> = Vec::new();
    let mut observer = |step: u64, loss: f64, lr: f64| steps.push((step, loss, lr));
    let outcome = train(
        &cfg.system,
        &cfg.gnn,
        &tcfg,
        trace.then_some(&mut observer as cfmimo::trainer::StepObserver),
    )?;

    let ckpt_path = out.join("checkpoint.json");
    save_checkpoint(&outcome.model, &ckpt_path)?;
    write_history_csv(&outcome.history, &out.join("history.csv"))?;
    if trace {
        let mut writer = csv::Writer::from_path(out.join("steps.csv"))?;
        for (step, loss, lr) in &steps {
            writer.serialize((step, loss, lr))?;
        }
        writer.flush()?;
    }

    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs (seed {}): train loss {:.4}, validation mean sum rate {:.4} bit/s/Hz",
        outcome.history.len(),
        tcfg.seed,
        last.train_loss,
        last.mean_sum_rate
    );
    if outcome.skipped_steps > 0 {
        println!("skipped {} non-finite optimizer steps", outcome.skipped_steps);
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_eval(
    cfg: &HarnessConfig,
    checkpoint: &Path,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Error> {
    ensure_out_dir(out)?;
    let model = load_checkpoint(checkpoint)?;
    model.check_compatible(&cfg.system)?;
    let spec = ExperimentSpec {
        methods: Method::ALL.to_vec(),
        sweep: SweepVar::M,
        values: vec![cfg.system.antennas_per_bs as f64],
        trials: trials.unwrap_or(500),
        seed: resolve_seed(seed, 0)?,
    };
    let rows = run_experiment(&spec, &cfg.system, Some(&model))?;
    print_rows(&rows);
    write_results_csv(&rows, &out.join("eval.csv"))?;
    write_results_json(
        &ExperimentReport {
            spec: &spec,
            base_config: &cfg.system,
            rows: &rows,
        },
        &out.join("eval.json"),
    )?;
    Ok(())
}

fn cmd_sweep(
    cfg: &HarnessConfig,
    seed: Option<u64>,
    trials: Option<usize>,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<(), Error> {
    ensure_out_dir(out)?;
    let mut spec = cfg
        .experiment
        .clone()
        .ok_or_else(|| Error::Config("config has no `experiment` section".into()))?;
    spec.seed = resolve_seed(seed, spec.seed)?;
    if let Some(t) = trials {
        spec.trials = t;
    }
    let model = match checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let rows = run_experiment(&spec, &cfg.system, model.as_ref())?;
    print_rows(&rows);
    write_results_csv(&rows, &out.join("results.csv"))?;
    write_results_json(
        &ExperimentReport {
            spec: &spec,
            base_config: &cfg.system,
            rows: &rows,
        },
        &out.join("results.json"),
    )?;
    Ok(())
}

fn cmd_baseline(
    cfg: &HarnessConfig,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    trace: bool,
) -> Result<(), Error> {
    ensure_out_dir(out)?;
    let seed = resolve_seed(seed, 0)?;
    let trials = trials.unwrap_or(100);
    let system: &SystemConfig = &cfg.system;

    let mut rates = Vec::with_capacity(trials);
    let mut iterations = Vec::with_capacity(trials);
    let mut trace_rows: Vec<TraceRow> = Vec::new();
    for t in 0..trials {
        let mut rng = SimRng::from_seed(seed).fork(t as u64);
        let real = sample_realization(system, &mut rng);
        let v = cfmimo::beamform::random_irs_phases(system.irs_elements, &mut rng);
        let mut entries = Vec::new();
        let outcome = cfmimo::fp_baseline::ao_solve(
            &real,
            &v,
            system,
            trace.then_some(&mut entries),
        )?;
        rates.push(outcome.sum_rate_bits);
        iterations.push(outcome.iterations as f64);
        if trace {
            for e in entries {
                trace_rows.push(TraceRow {
                    trial: t,
                    outer_iteration: e.outer_iteration,
                    stage: match e.stage {
                        cfmimo::fp_baseline::FpStage::Alpha => "alpha",
                        cfmimo::fp_baseline::FpStage::Beta => "beta",
                        cfmimo::fp_baseline::FpStage::Power => "power",
                    },
                    surrogate_nats: e.surrogate_nats,
                });
            }
        }
    }
    let (mean, std) = cfmimo::trainer::mean_and_std(&rates);
    let mean_iters = iterations.iter().sum::<f64>() / iterations.len() as f64;
    println!(
        "baseline over {trials} draws (seed {seed}): mean sum rate {mean:.4} bit/s/Hz (std {std:.4}), mean outer iterations {mean_iters:.1}"
    );
    if trace {
        write_trace_csv(&trace_rows, &out.join("baseline_trace.csv"))?;
        println!("trace: {}", out.join("baseline_trace.csv").display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: Option<u64>) -> Result<(), Error> {
    let seed = resolve_seed(seed, 12)?;
    let base = SystemConfig::default();
    let cfg = SystemConfig {
        bs_count: 2,
        antennas_per_bs: 2,
        user_count: 2,
        irs_elements: 4,
        bs_positions: base.bs_positions[..2].to_vec(),
        ..base
    };
    let gnn_cfg = GnnConfig {
        layer_count: 2,
        hidden_widths: vec![8, 8],
        controlling_bs: 0,
        feature_scale: 1e6,
    };
    let report = gradient_check(&cfg, &gnn_cfg, seed)?;
    println!(
        "checked {} parameters: max relative error {:.3e} (worst: {})",
        report.params_checked, report.max_rel_error, report.worst_param
    );
    if report.max_rel_error >= 1e-4 {
        return Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} >= 1e-4 at {}",
            report.max_rel_error, report.worst_param
        )));
    }
    println!("gradient check passed");
    Ok(())
}

fn print_rows(rows: &[cfmimo::harness::ResultRow]) {
    for row in rows {
        match (row.feasible, row.mean_sum_rate) {
            (true, Some(mean)) => println!(
                "{:>13}  M={} K={} L={} P={:.1} dBm  rate {:.4} +- {:.4} bit/s/Hz  time {:.3} ms",
                row.method,
                row.m,
                row.k,
                row.l,
                row.p_max_dbm,
                mean,
                row.std_sum_rate.unwrap_or(0.0),
                row.mean_time_ms.unwrap_or(0.0),
            ),
            _ => println!(
                "{:>13}  M={} K={} L={} P={:.1} dBm  infeasible",
                row.method, row.m, row.k, row.l, row.p_max_dbm
            ),
        }
    }
}
