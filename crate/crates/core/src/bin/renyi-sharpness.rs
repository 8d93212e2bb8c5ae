use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use renyi_sharpness::entropy::{
    exact_spectrum, spectrum_entropy, EigPolicy, RenyiOrder, ORACLE_MAX_DIM,
};
use renyi_sharpness::harness::{
    correlate, measure_sharpness, read_results, run_grid, selfcheck, train, write_metrics_csv,
    CorrelateOptions, DataSpec, GridSpec, MeasureConfig, ModelConfig, RunStatus, Target,
    TrainSettings,
};
use renyi_sharpness::linalg::load_matrix;
use renyi_sharpness::network::save_model;
use renyi_sharpness::optim::OptimConfig;
use renyi_sharpness::slq::{estimate_renyi_entropy, Normalization, SlqConfig};
use renyi_sharpness::{Error, Result};

#[derive(Parser)]
#[command(
    name = "renyi-sharpness",
    version,
    about = "Rényi-entropy sharpness of loss Hessians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the Rényi entropy of a symmetric matrix by stochastic Lanczos quadrature.
    Entropy {
        #[arg(long)]
        matrix: PathBuf,
        /// Order α, or "shannon".
        #[arg(long, default_value = "1.5")]
        alpha: RenyiOrder,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 15)]
        lanczos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "clip")]
        policy: EigPolicy,
        /// Return log(ΣA/ΣB)/(1−α) instead of the trace-ratio estimate.
        #[arg(long)]
        paper_ratio: bool,
    },
    /// Exact entropy from a dense eigendecomposition.
    Oracle {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "1.5")]
        alpha: RenyiOrder,
        #[arg(long, default_value = "clip")]
        policy: EigPolicy,
    },
    /// Train one network and write model.json and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and measure every cell of a hyperparameter grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        resume: bool,
    },
    /// Kendall τ between each measure and the generalization target.
    Correlate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "gap")]
        target: Target,
        /// Comma-separated orders to keep.
        #[arg(long, value_delimiter = ',')]
        alpha_list: Option<Vec<f64>>,
        #[arg(long)]
        tau_b: bool,
        /// Also write the table as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the quick invariance and oracle suites.
    Selfcheck,
}

#[derive(Debug, Deserialize, Serialize)]
struct TrainConfig {
    data: DataSpec,
    model: ModelConfig,
    #[serde(default)]
    optim: OptimConfig,
    epochs: usize,
    batch_size: usize,
    #[serde(default)]
    seed: u64,
    /// When present, the trained network is measured and `report.json` written.
    #[serde(default)]
    measure: Option<MeasureConfig>,
}

fn print_json(value: &impl Serialize) -> Result<()> {
    writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(value)?
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Entropy {
            matrix,
            alpha,
            probes,
            lanczos,
            seed,
            policy,
            paper_ratio,
        } => {
            let m = load_matrix(&matrix)?;
            let cfg = SlqConfig {
                probes,
                lanczos_steps: lanczos,
                seed,
                policy,
                normalization: if paper_ratio {
                    Normalization::PooledRatio
                } else {
                    Normalization::TraceRatio
                },
                ..Default::default()
            };
            let est = estimate_renyi_entropy(&m, alpha, &cfg)?;
            print_json(&json!({
                "entropy": est.entropy,
                "sharpness": est.sharpness,
                "stderr": est.entropy_stderr,
                "diagnostics": {
                    "alpha": alpha,
                    "dim": m.dim(),
                    "probes": probes,
                    "lanczos_steps": cfg.steps_for(m.dim()),
                    "policy": policy,
                    "normalization": cfg.normalization,
                    "trace": est.trace,
                    "trace_stderr": est.trace_stderr,
                    "trace_power": est.trace_power,
                    "trace_power_stderr": est.trace_power_stderr,
                    "min_steps_run": est.steps.iter().min(),
                },
            }))?;
        }
        Command::Oracle {
            matrix,
            alpha,
            policy,
        } => {
            let m = load_matrix(&matrix)?;
            let spectrum = exact_spectrum(&m, policy, ORACLE_MAX_DIM)?;
            let entropy = spectrum_entropy(&spectrum, alpha)?;
            print_json(&json!({
                "entropy": entropy,
                "sharpness": -entropy,
                "diagnostics": {
                    "alpha": alpha,
                    "dim": m.dim(),
                    "policy": policy,
                    "trace": spectrum.trace(),
                    "lambda_max": spectrum.eigenvalues().first(),
                    "lambda_min": spectrum.eigenvalues().last(),
                },
            }))?;
        }
        Command::Train { config, out } => {
            let cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
            let (train_set, test_set) = cfg.data.generate()?;
            let spec = cfg.model.spec(train_set.input_dim(), cfg.data.classes)?;
            let settings = TrainSettings {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
            };
            let outcome = train(
                &spec, &train_set, &test_set, &cfg.optim, &settings, cfg.seed,
            )?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("model.json"), save_model(&spec, &outcome.params)?)?;
            write_metrics_csv(&outcome.metrics, fs::File::create(out.join("metrics.csv"))?)?;
            if let RunStatus::Diverged { epoch } = outcome.status {
                eprintln!("training diverged during epoch {epoch}");
                return Ok(ExitCode::from(3));
            }
            if let Some(mcfg) = &cfg.measure {
                let measures = measure_sharpness(&spec, &outcome.params, &train_set, mcfg)?;
                fs::write(
                    out.join("report.json"),
                    serde_json::to_string_pretty(&measures)?,
                )?;
            }
            if let Some(last) = outcome.last() {
                print_json(last)?;
            }
        }
        Command::Grid {
            config,
            out,
            workers,
            resume,
        } => {
            let grid: GridSpec = serde_json::from_str(&fs::read_to_string(&config)?)?;
            let summary = run_grid(&grid, &out, workers, resume)?;
            print_json(&json!({
                "total": summary.total,
                "ran": summary.ran,
                "skipped": summary.skipped,
                "failed": summary.failed,
            }))?;
        }
        Command::Correlate {
            input,
            target,
            alpha_list,
            tau_b,
            json,
        } => {
            let reports = read_results(&input)?;
            let opts = CorrelateOptions {
                tau_b,
                alphas: alpha_list,
            };
            let table = correlate(&reports, target, &opts)?;
            table.write_csv(std::io::stdout().lock())?;
            if let Some(path) = json {
                fs::write(path, serde_json::to_string_pretty(&table)?)?;
            }
            if table.excluded_runs > 0 {
                eprintln!(
                    "{} runs excluded (diverged, failed or unmeasured)",
                    table.excluded_runs
                );
            }
        }
        Command::Selfcheck => {
            let checks = selfcheck();
            let mut ok = true;
            let mut stdout = std::io::stdout().lock();
            for c in &checks {
                writeln!(
                    stdout,
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )?;
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}
