use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stnp_core::anp::{AnpModel, Footprint};
use stnp_core::config::RunConfig;
use stnp_core::evalcal::{predict_grid, write_grid, write_reports, Method, GRID_CSV};
use stnp_core::pipeline::{checkpoint_name, fit_method, run, train_log_name, write_train_log, Fitted, RunPaths};
use stnp_core::synthworld::{read_dataset, write_dataset, World};
use stnp_core::Error;

const DATASET_CSV: &str = "dataset.csv";
const DATASET_CONF: &str = "dataset.conf";
const CHECKPOINT_DIR: &str = "checkpoints";
const LOG_DIR: &str = "logs";

#[derive(Parser)]
#[command(name = "stnp", version, about = "Synthetic biomass world, ANP and quantile baselines, calibration reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `run.out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `world.seed` for synth and `run.seed` otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one method on the training view of one partition seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// anp, qrf or gbq.
        #[arg(long)]
        method: String,
    },
    /// Fit (or reuse checkpoints for) every method and seed, then write the reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory with existing checkpoints; defaults to `<out>/checkpoints`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Seeds evaluated concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Gridded μ/σ export from an ANP checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn setup(common: &Common, synth: bool) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::load(&common.config).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Config(format!("{} line {line}: {msg}", common.config.display())),
        other => other,
    })?;
    if let Some(s) = common.seed {
        if synth {
            cfg.world.seed = s;
        } else {
            cfg.base_seed = s;
        }
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    cfg.out_dir = out.clone();
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Vec<Footprint>, Error> {
    let fps = read_dataset(path, &cfg.world.period()?)?;
    if let Some(f) = fps.iter().find(|f| f.embed_dim() != cfg.world.embed_dim) {
        return Err(Error::Format(format!(
            "dataset embedding width {} differs from world.embed_dim {}",
            f.embed_dim(),
            cfg.world.embed_dim
        )));
    }
    Ok(fps)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common } => {
            let (cfg, out) = setup(&common, true)?;
            let sample = World::new(cfg.world.clone())?.sample_footprints()?;
            write_dataset(&sample.footprints, &out.join(DATASET_CSV))?;
            fs::write(out.join(DATASET_CONF), cfg.to_text())?;
            for (tile, year, n) in &sample.sparse_tiles {
                eprintln!("warning: tile {tile} has {n} footprints in {year}");
            }
            eprintln!("wrote {} footprints to {}", sample.footprints.len(), out.join(DATASET_CSV).display());
        }
        Command::Train { common, dataset, method } => {
            let (cfg, out) = setup(&common, false)?;
            let method: Method = method.parse()?;
            let fps = load_dataset(&cfg, &dataset)?;
            let seed = cfg.base_seed;
            let mut log = Vec::new();
            let fitted = fit_method(&cfg, &fps, method, seed, |l| {
                eprintln!("{l}");
                log.push(l);
            })?;
            let echo = cfg.echo();
            fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
            let path = out.join(CHECKPOINT_DIR).join(checkpoint_name(method, seed));
            fitted.save(&path, &echo)?;
            if !log.is_empty() {
                fs::create_dir_all(out.join(LOG_DIR))?;
                write_train_log(&out.join(LOG_DIR).join(train_log_name(method, seed)), &log, &echo)?;
            }
            eprintln!("wrote {}", path.display());
        }
        Command::Eval {
            common,
            dataset,
            checkpoints,
            jobs,
        } => {
            let (cfg, out) = setup(&common, false)?;
            let fps = load_dataset(&cfg, &dataset)?;
            let ckpt = checkpoints.unwrap_or_else(|| out.join(CHECKPOINT_DIR));
            fs::create_dir_all(&ckpt)?;
            fs::create_dir_all(out.join(LOG_DIR))?;
            let outcome = run(
                &cfg,
                &fps,
                jobs,
                &RunPaths {
                    checkpoints: Some(ckpt),
                    logs: Some(out.join(LOG_DIR)),
                },
            )?;
            let echo: BTreeMap<String, String> = cfg.echo();
            write_reports(&out, &outcome.summaries, &echo)?;
            for s in &outcome.summaries {
                for e in &s.seeds {
                    let r = &e.report;
                    eprintln!(
                        "{} seed {}: n={} log_r2={:.3} cov1={:.3} cov2={:.3} z_mean={:.3} z_std={:.3}",
                        s.method, e.seed, r.n, r.log_r2, r.cov1, r.cov2, r.z_mean, r.z_std
                    );
                }
            }
        }
        Command::Predict {
            common,
            dataset,
            checkpoint,
        } => {
            let (cfg, out) = setup(&common, false)?;
            let fps = load_dataset(&cfg, &dataset)?;
            let params = match Fitted::load(&checkpoint)? {
                Fitted::Anp(p) => p,
                other => {
                    return Err(Error::Config(format!(
                        "predict needs an ANP checkpoint, {} holds {}",
                        checkpoint.display(),
                        other.method()
                    )))
                }
            };
            let world = World::new(cfg.world.clone())?;
            let model = AnpModel::new(params);
            let cells = predict_grid(&model, &world, &fps, &cfg.grid, cfg.model.latent_samples, cfg.base_seed)?;
            write_grid(&out.join(GRID_CSV), &cells, &cfg.echo())?;
            eprintln!("wrote {} grid cells to {}", cells.len(), out.join(GRID_CSV).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
