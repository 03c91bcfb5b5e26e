mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use cumrisk::env::{generate_episodes, EnvSpec};
use cumrisk::episode::EpisodeSet;
use cumrisk::estimator::Checkpoint;
use cumrisk::evaluation::{
    collision_characteristic, detection_rate, evaluate, oracle_errors, write_characteristic_csv, write_detection_csv,
    write_head_metrics_csv, write_oracle_csv, ReportSummary, REPORT_VERSION,
};
use cumrisk::oracle::{cross_check, dp_cumulative, BRUTE_MAX_HORIZON, BRUTE_MAX_STATES};
use cumrisk::training::{write_metrics_csv, Trainer};

use config::{EvalSection, RunConfig, TrainSection};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Core(#[from] cumrisk::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(cumrisk::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Cumulative collision probability estimation with multi-head TD learning.
#[derive(Debug, Parser)]
#[command(name = "cumrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the fixed policy and write an episode file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the estimator; writes a checkpoint and `<out stem>.metrics.csv`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint, continuing its epoch counter.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the published hyperparameters for the training section.
        #[arg(long)]
        paper_parity: bool,
    },
    /// Score a checkpoint on episodes and write the report tables into a directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional: thresholds/intervals, and a chain env for oracle comparison.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export the exact cumulative table of a chain-world.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also enumerate every path and report the largest deviation.
        #[arg(long)]
        cross_check: bool,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn read_episodes(path: &Path) -> Result<EpisodeSet> {
    let file = File::open(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(EpisodeSet::read_from(BufReader::new(file))?)
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    // a closed pipe downstream is not our failure
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn cmd_gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let env = cfg.env()?;
    let count = cfg.gen.as_ref().ok_or_else(|| CliError::Config("missing [gen] table".into()))?.episodes;
    let (set, summary) = generate_episodes(env, count, seed.unwrap_or(cfg.seed))?;
    let mut w = create(out)?;
    set.write_to(&mut w)?;
    finish(w, out)?;
    print_json(&summary);
    Ok(())
}

fn cmd_train(
    config: &Path,
    episodes: &Path,
    out: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    paper_parity: bool,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let set = read_episodes(episodes)?;
    if let Some(env) = &cfg.env {
        if env.spec_hash() != set.spec_hash {
            return Err(CliError::Config(format!(
                "episode file was generated from spec {}, config describes {}",
                set.spec_hash,
                env.spec_hash()
            )));
        }
    }
    let mut section = cfg.train.clone().unwrap_or_default();
    if paper_parity {
        section.paper_parity();
    }
    let seed = seed.unwrap_or(cfg.seed);
    let metrics_path = out.with_extension("metrics.csv");

    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.spec_hash != set.spec_hash {
                return Err(CliError::Config("checkpoint was trained on episodes from a different spec".into()));
            }
            log::info!("resuming {} at epoch {}", path.display(), ckpt.epoch);
            Trainer::resume(&set.episodes, ckpt, Some(section.epochs))?
        }
        None => {
            let tc = section.to_train_config(set.obs_dim, set.delta_t, seed);
            Trainer::new(&set.episodes, tc)?
        }
    };
    let mut log_rows = Vec::new();
    while !trainer.is_finished() {
        log_rows.push(trainer.run_epoch()?);
        let every = section.checkpoint_every;
        if every > 0 && trainer.epoch() % every == 0 && !trainer.is_finished() {
            trainer.checkpoint(&set.spec_hash).save(out)?;
        }
    }
    trainer.checkpoint(&set.spec_hash).save(out)?;
    let mut w = create(&metrics_path)?;
    write_metrics_csv(&log_rows, trainer.config().horizon.n_heads, &mut w)?;
    finish(w, &metrics_path)?;
    println!("wrote {} and {}", out.display(), metrics_path.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, episodes: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let est = ckpt.estimator()?;
    let set = read_episodes(episodes)?;
    if set.episodes.is_empty() {
        return Err(cumrisk::Error::Empty("episode file holds no episodes".into()).into());
    }
    if set.obs_dim != est.config().input_dim {
        return Err(cumrisk::Error::Dimension { expected: est.config().input_dim, actual: set.obs_dim }.into());
    }
    // score only unseen episodes when the file is the training corpus
    let mut episodes = set.episodes;
    if set.spec_hash == ckpt.spec_hash && !ckpt.heldout_ids.is_empty() {
        episodes.retain(|e| ckpt.heldout_ids.binary_search(&e.id).is_ok());
        log::info!("scoring the {} held-out episodes of the checkpoint", episodes.len());
    } else if set.spec_hash == ckpt.spec_hash {
        log::warn!("checkpoint records no held-out split; scoring every episode");
    }
    if episodes.is_empty() {
        return Err(cumrisk::Error::Empty("no episodes left to score".into()).into());
    }

    let eval = cfg.as_ref().and_then(|c| c.eval.clone()).unwrap_or_default();
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(out.display().to_string(), e))?;
    let path = |name: &str| out.join(name);

    let metrics = evaluate(&episodes, &est);
    let p = path("head_metrics.csv");
    let mut w = create(&p)?;
    write_head_metrics_csv(&metrics, &mut w)?;
    finish(w, &p)?;

    let characteristic = collision_characteristic(&episodes, &est);
    let p = path("characteristic.csv");
    let mut w = create(&p)?;
    write_characteristic_csv(&characteristic, set.delta_t, &mut w)?;
    finish(w, &p)?;

    let detection = detect(&episodes, &est, &eval, set.delta_t)?;
    if let Some(d) = &detection {
        let p = path("detection.csv");
        let mut w = create(&p)?;
        write_detection_csv(d, &mut w)?;
        finish(w, &p)?;
    }

    let mut max_oracle_error = None;
    if let Some(EnvSpec::Chain(spec)) = cfg.as_ref().and_then(|c| c.env.as_ref()) {
        let table = dp_cumulative(spec, est.config().n_heads);
        let rows = oracle_errors(&episodes, &est, &table);
        max_oracle_error = rows.iter().map(|r| r.abs_error()).reduce(f64::max);
        let p = path("oracle_errors.csv");
        let mut w = create(&p)?;
        write_oracle_csv(&rows, &mut w)?;
        finish(w, &p)?;
    }

    let summary = ReportSummary {
        version: REPORT_VERSION,
        episodes: episodes.len(),
        collision_episodes: episodes.iter().filter(|e| e.collided()).count(),
        metrics,
        characteristic_curves: characteristic.curves.len(),
        characteristic_skipped: characteristic.skipped,
        detection,
        max_oracle_error,
    };
    let p = path("summary.json");
    let mut w = create(&p)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(cumrisk::Error::from)?;
    writeln!(w).map_err(|e| CliError::Io(p.display().to_string(), e))?;
    finish(w, &p)?;
    print_json(&summary);
    Ok(())
}

/// Detection table, or `None` when the episodes hold no collision.
fn detect(
    episodes: &[cumrisk::episode::Episode],
    est: &cumrisk::estimator::MultiHeadEstimator,
    eval: &EvalSection,
    delta_t: f64,
) -> Result<Option<cumrisk::evaluation::DetectionTable>> {
    if !episodes.iter().any(|e| e.collided()) {
        log::warn!("no collision episodes; detection table skipped");
        return Ok(None);
    }
    let intervals: Vec<(f64, f64)> = eval.intervals.iter().map(|&[a, b]| (a, b)).collect();
    Ok(Some(detection_rate(episodes, est, &eval.thresholds, &intervals, delta_t)?))
}

fn cmd_oracle(config: &Path, out: &Path, check: bool) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let EnvSpec::Chain(spec) = cfg.env()? else {
        return Err(CliError::Config("oracle needs a chain-world [env]".into()));
    };
    let n_heads = cfg.train.as_ref().map_or(TrainSection::default().n_heads, |t| t.n_heads);
    let table = dp_cumulative(spec, n_heads);
    if check {
        if spec.n_states > BRUTE_MAX_STATES || n_heads > BRUTE_MAX_HORIZON {
            return Err(cumrisk::Error::InstanceTooLarge { states: spec.n_states, horizon: n_heads }.into());
        }
        let worst = cross_check(spec, &table)?;
        println!("cross-check: max |dp - enumeration| = {worst:e}");
    }
    let mut w = create(out)?;
    table.write_csv(&mut w)?;
    finish(w, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => cmd_gen(&config, &out, seed),
        Command::Train { config, episodes, out, checkpoint, seed, paper_parity } => {
            cmd_train(&config, &episodes, &out, checkpoint.as_deref(), seed, paper_parity)
        }
        Command::Eval { checkpoint, episodes, out, config } => cmd_eval(&checkpoint, &episodes, &out, config.as_deref()),
        Command::Oracle { config, out, cross_check } => cmd_oracle(&config, &out, cross_check),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
