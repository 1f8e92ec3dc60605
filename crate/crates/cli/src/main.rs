//! Pipeline driver.
//!
//! Every subcommand loads the TOML config named by `--config` (the built-in
//! toy preset when omitted), applies its flag overrides, and runs the
//! corresponding stage through the manifest-backed pipeline. Exit codes:
//! 0 success, 1 configuration/validation error, 2 stage failure.
//!
//! When `SUMRANK_CACHE_DIR` is set, a relative output directory is placed
//! under it, so one cache root can hold the artifacts of many configs.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sumrank::config::{load_config, BackendKind, BackendSpec, ConfigError, PipelineConfig, Preset};
use sumrank::pipeline::{
    run_pipeline, Artifacts, PipelineError, RunOptions, SelectionStatsFile, Stage, StageOverrides,
};

const CACHE_DIR_ENV: &str = "SUMRANK_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "sumrank",
    version,
    about = "Candidate-ranking fine-tuning pipeline"
)]
struct Cli {
    /// TOML config file; omitted means the built-in toy preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed from the config.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Worker threads for scorer calls.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    workers: usize,
    /// Re-run stages even when the manifest marks them current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode candidate summaries for the training split.
    Generate {
        /// Training-split JSONL file (overrides the config).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Backend tag; repeat for several backends (toy kind, derived seeds).
        #[arg(long = "backend", value_name = "TAG")]
        backends: Vec<String>,
        /// Decoding preset: toy, xsum, or cnndm.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Output directory for run artifacts.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Attach factuality verdicts and reference-overlap scores to candidates.
    Score {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Build ranked candidate sets from the scored cache.
    Select {
        /// Scored-candidate cache to read instead of this run's artifact.
        #[arg(long, value_name = "PATH")]
        cache: Option<PathBuf>,
        /// Candidates kept per class.
        #[arg(long, value_name = "M")]
        m: Option<i64>,
        /// Selection mode: balanced, all_factcc, or factcc_only.
        #[arg(long, value_name = "MODE")]
        mode: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Fine-tune the backbone on the ranked sets.
    Train {
        /// Ranked training set to read instead of this run's artifact.
        #[arg(long = "training-set", value_name = "PATH")]
        training_set: Option<PathBuf>,
        /// Saved model parameters to start from instead of a seeded init.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Loss and schedule preset: toy, xsum, or cnndm.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate baseline and fine-tuned systems on the test split.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compare the evaluation reports into a side-by-side table.
    Report {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run stages in order (all six when --stages is omitted).
    Run {
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',', value_name = "STAGES")]
        stages: Option<Vec<String>>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Check the config and echo the full effective configuration.
    Validate,
}

enum CliError {
    Validation(String),
    Stage(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => CliError::Validation(c.to_string()),
            other => CliError::Stage(other.to_string()),
        }
    }
}

fn parse_preset(name: &str) -> Result<Preset, CliError> {
    match name {
        "toy" => Ok(Preset::Toy),
        "xsum" => Ok(Preset::Xsum),
        "cnndm" => Ok(Preset::Cnndm),
        other => Err(CliError::Validation(format!(
            "unknown preset `{other}`; expected toy, xsum, or cnndm"
        ))),
    }
}

fn apply_cache_dir(config: &mut PipelineConfig) {
    if config.output_dir.is_relative() {
        if let Some(root) = std::env::var_os(CACHE_DIR_ENV) {
            if !root.is_empty() {
                config.output_dir = PathBuf::from(root).join(&config.output_dir);
            }
        }
    }
}

fn print_selection_stats(config: &PipelineConfig) -> Result<(), CliError> {
    let path = Artifacts::new(&config.output_dir).selection_stats();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Stage(format!("reading {}: {e}", path.display())))?;
    let file: SelectionStatsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Stage(format!("parsing {}: {e}", path.display())))?;
    print!("{}", file.stats.render());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::toy(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut overrides = StageOverrides::default();

    let (stages, out_dir): (Vec<Stage>, Option<PathBuf>) = match cli.command {
        Command::Validate => {
            if cli.config.is_none() {
                config.validate()?;
            }
            print!("{}", config.effective_toml()?);
            return Ok(());
        }
        Command::Generate {
            dataset,
            backends,
            preset,
            out,
        } => {
            if let Some(dataset) = dataset {
                config.data.train = dataset;
            }
            if !backends.is_empty() {
                config.backends = backends
                    .into_iter()
                    .map(|tag| BackendSpec {
                        kind: BackendKind::Toy,
                        tag,
                        seed: None,
                    })
                    .collect();
            }
            if let Some(name) = preset {
                config.decoding = parse_preset(&name)?.config().decoding;
            }
            (vec![Stage::Generate], out)
        }
        Command::Score { out } => (vec![Stage::Score], out),
        Command::Select {
            cache,
            m,
            mode,
            out,
        } => {
            overrides.scored_cache = cache;
            if let Some(m) = m {
                if m < 1 {
                    return Err(CliError::Validation(format!("m must be >= 1, got {m}")));
                }
                config.selection.m = m as usize;
            }
            if let Some(mode) = mode {
                config.selection.mode = mode.parse().map_err(CliError::Validation)?;
            }
            (vec![Stage::Select], out)
        }
        Command::Train {
            training_set,
            model,
            preset,
            out,
        } => {
            overrides.training_set = training_set;
            overrides.init_model = model;
            if let Some(name) = preset {
                let base = parse_preset(&name)?.config();
                config.loss = base.loss;
                config.training = base.training;
            }
            (vec![Stage::Train], out)
        }
        Command::Evaluate { out } => (vec![Stage::Evaluate], out),
        Command::Report { out } => (vec![Stage::Report], out),
        Command::Run { stages, out } => {
            let stages = match stages {
                Some(names) => names
                    .iter()
                    .map(|name| name.trim().parse::<Stage>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Validation(e.to_string()))?,
                None => Stage::ALL.to_vec(),
            };
            (stages, out)
        }
    };
    if let Some(out) = out_dir {
        config.output_dir = out;
    }
    apply_cache_dir(&mut config);

    let options = RunOptions {
        workers: cli.workers.max(1),
        force: cli.force,
        overrides,
    };
    let outcomes = run_pipeline(&config, &stages, &options)?;
    for outcome in &outcomes {
        println!(
            "stage {}: {}",
            outcome.stage,
            if outcome.skipped {
                "up to date (skipped)"
            } else {
                "completed"
            }
        );
    }
    if stages.contains(&Stage::Select) {
        print_selection_stats(&config)?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(CliError::Stage(message)) => {
            eprintln!("error: {message}");
            2
        }
    };
    std::process::exit(code);
}
