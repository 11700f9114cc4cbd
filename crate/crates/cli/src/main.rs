//! `compdef`: generate models, tune and compile them, profile the simulated
//! kernels, build the attacker's signature database, run the attack and
//! drive whole sweeps.
//!
//! Exit status is 0 on success, 1 for invalid input or usage and 2 for
//! filesystem errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use compdef::attack::{build_signature_db, fidelity, predict_with_weight, DbOptions, SignatureDB};
use compdef::autotuner::tune_model;
use compdef::harness::{
    build_corpus_db, load_victims, report, run_sweep, ExperimentConfig, PredictionFile,
};
use compdef::ir::{generate_model, load_model, save_model, ModelGraph};
use compdef::perfsim::run_inference;
use compdef::schedule::{lower, ScheduleAssignment};
use compdef::sidechannel::{attacker_view, export_trace_csv, parse_trace_csv};
use compdef::{Error, Family, Result};

#[derive(Debug, Parser)]
#[command(
    name = "compdef",
    version,
    about = "Schedule tuning as a defense against kernel side-channel architecture extraction"
)]
struct Cli {
    /// Experiment config supplying device, noise, tuner and corpus settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; a directory for `sweep`. Standard output when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit a builtin model as MGF JSON.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 2)]
        scale: u32,
    },
    /// Tune every workload of a model and write the schedule assignment.
    Compile {
        #[arg(long, value_name = "MGF")]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        trials: u32,
        /// Tuning log (JSON lines). Defaults to `<out stem>.tuning.jsonl` next to `--out`.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Lower a model under a schedule and record one simulated inference as CSV.
    Profile {
        #[arg(long, value_name = "MGF")]
        model: PathBuf,
        /// Schedule assignment from `compile`; library defaults when omitted.
        #[arg(long, value_name = "FILE")]
        schedule: Option<PathBuf>,
        /// Noise level; overrides the config.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Build a signature database from MGF files, or from the config's corpus.
    Buildb {
        #[arg(value_name = "MGF")]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Predict the operator sequence behind a trace.
    Attack {
        #[arg(long, value_name = "CSV")]
        trace: PathBuf,
        #[arg(long, value_name = "FILE")]
        db: PathBuf,
        /// True model; adds a fidelity score to the output.
        #[arg(long, value_name = "MGF")]
        model: Option<PathBuf>,
    },
    /// Run a full trials sweep and write its artifacts and report.
    Sweep,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn load_graph(path: &Path) -> Result<ModelGraph> {
    load_model(&read(path)?)
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn sigma_or(cfg: &ExperimentConfig, sigma: Option<f64>) -> Result<f64> {
    let s = sigma.unwrap_or(cfg.noise_sigma);
    if s.is_finite() && s >= 0.0 {
        Ok(s)
    } else {
        Err(Error::Config(
            "sigma must be a finite non-negative number".into(),
        ))
    }
}

fn default_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.tuning.jsonl"))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Gen { family, scale } => {
            emit(out, &save_model(&generate_model(*family, *scale, seed)?))
        }
        Command::Compile { model, trials, log } => {
            let g = load_graph(model)?;
            let d = cfg.device_profile()?;
            let tuning = tune_model(&g, &d, &cfg.tuner_for(*trials, seed))?;
            emit(out, &tuning.assignment.to_json())?;
            let log = log.clone().or_else(|| out.map(default_log_path));
            match log {
                Some(p) => emit(Some(&p), tuning.log_lines().as_bytes()),
                None => Ok(()),
            }
        }
        Command::Profile {
            model,
            schedule,
            sigma,
        } => {
            let g = load_graph(model)?;
            let d = cfg.device_profile()?;
            let assignment = match schedule {
                Some(p) => ScheduleAssignment::from_json(&read(p)?)?,
                None => ScheduleAssignment::defaults(&g),
            };
            let compiled = lower(&g, &assignment)?;
            let trace = run_inference(&compiled, &d, sigma_or(&cfg, *sigma)?, seed);
            emit(out, &export_trace_csv(&trace))
        }
        Command::Buildb { corpus, sigma } => {
            let d = cfg.device_profile()?;
            let sigma = sigma_or(&cfg, *sigma)?;
            let db = if corpus.is_empty() {
                let cfg = ExperimentConfig {
                    noise_sigma: sigma,
                    ..cfg.clone()
                };
                let victims = load_victims(&cfg)?;
                build_corpus_db(&cfg, &d, &victims)?.0
            } else {
                let graphs: Vec<ModelGraph> = corpus
                    .iter()
                    .map(|p| load_graph(p))
                    .collect::<Result<_>>()?;
                let opts = DbOptions {
                    noise_sigma: sigma,
                    seeds: cfg.corpus.noise_seeds.clone(),
                    tau_quantile: cfg.corpus.tau_quantile,
                };
                build_signature_db(&graphs, &d, &opts)?
            };
            emit(out, &db.to_json())
        }
        Command::Attack { trace, db, model } => {
            let db = SignatureDB::from_json(&read(db)?)?;
            let view = attacker_view(&parse_trace_csv(&read(trace)?)?);
            let p = predict_with_weight(&view, &db, cfg.transition_weight);
            let score = match model {
                Some(m) => Some(fidelity(&p, &load_graph(m)?)?),
                None => None,
            };
            emit(out, &PredictionFile::new(&p, score).to_json())
        }
        Command::Sweep => {
            let mut cfg = cfg;
            if let Some(o) = out {
                cfg.out_dir = o.to_path_buf();
            }
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let r = run_sweep(&cfg)?;
            report(&r, &cfg.out_dir)?;
            eprintln!(
                "wrote {} rows ({} cells) to {}",
                r.rows.len(),
                r.cells.len(),
                cfg.out_dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
