//! Command implementations behind the `mtml` binary.
//!
//! Four subcommands: `generate` a synthetic dataset, `train` the two-phase
//! pipeline, `eval` a checkpoint on a dataset, `dynamics` for the per-round
//! association table. Flags override the config file; the effective config
//! is echoed next to every output.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::association::write_association_dump;
use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::eval::{
    association_dynamics_report, dynamics_table, eval_table, evaluate, split_probe_gallery,
    write_dynamics_csv, write_eval_csv,
};
use crate::model::{init_params, load_checkpoint, save_checkpoint};
use crate::trainer::{initial_association, pretrain_mt, train_mtml_iteration, write_metrics_csv};

#[derive(Debug, Parser)]
#[command(
    name = "mtml",
    version,
    about = "Per-camera identity learning with self-discovered cross-camera associations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera dataset file.
    Generate {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path; defaults to `paths.dataset` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the generation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train: per-camera pretraining, then association-driven iterations.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; defaults to `paths.dataset` in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory; defaults to `paths.run_dir` in the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Ablation arm: skip association and the assigned-label loss.
        #[arg(long)]
        mt_only: bool,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint: probe/gallery retrieval on a dataset file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to `<paths.run_dir>/final.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset file; defaults to `paths.dataset` in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory; defaults to `<paths.run_dir>/eval`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the probe fraction.
        #[arg(long)]
        probe_fraction: Option<f64>,
    },
    /// Summarize a run's association dumps into a per-round table.
    Dynamics {
        /// A training run's output directory.
        #[arg(long)]
        run_dir: PathBuf,
        /// Where to write the CSV; defaults to `<run_dir>/dynamics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.paths.dataset.clone());
            run_generate(&cfg, &out)
        }
        Command::Train {
            config,
            dataset,
            out_dir,
            mt_only,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if mt_only {
                cfg.train.mt_only = true;
            }
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out_dir = out_dir.unwrap_or_else(|| cfg.paths.run_dir.clone());
            run_train(&cfg, &dataset, &out_dir)
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            out_dir,
            probe_fraction,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(f) = probe_fraction {
                cfg.eval.probe_fraction = f;
            }
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.run_dir.join("final.ckpt"));
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out_dir = out_dir.unwrap_or_else(|| cfg.paths.run_dir.join("eval"));
            run_eval(&cfg, &checkpoint, &dataset, &out_dir)
        }
        Command::Dynamics { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("dynamics.csv"));
            run_dynamics(&run_dir, &out)
        }
    }
}

pub fn run_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = generate_synthetic(&cfg.synth_config())?;
    save_dataset(&dataset, out)?;
    cfg.save(&sibling_config_path(out))?;
    println!(
        "generated {} cameras, {} features, {} samples -> {}",
        dataset.num_cameras,
        dataset.feature_dim,
        dataset.total_samples(),
        out.display()
    );
    for view in &dataset.cameras {
        println!(
            "  camera {}: {} identities, {} samples",
            view.camera_id,
            view.num_identities,
            view.samples.len()
        );
    }
    Ok(())
}

fn sibling_config_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    out.with_file_name(format!("{stem}.config.toml"))
}

pub fn run_train(cfg: &RunConfig, dataset_path: &Path, out_dir: &Path) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    std::fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.toml"))?;

    let model_config = cfg.model_config(dataset.feature_dim, dataset.head_sizes());
    let train_config = cfg.train_config();
    let params = init_params(&model_config)?;

    println!(
        "pretraining: {} epochs on {} samples across {} cameras",
        train_config.pretrain_epochs,
        dataset.total_samples(),
        dataset.num_cameras
    );
    let mut state = pretrain_mt(&dataset, params, &train_config)?;
    let mut last_good = out_dir.join("pretrain.ckpt");
    save_checkpoint(&state.params, &last_good)?;

    initial_association(&dataset, &mut state, &train_config)?;
    if !train_config.mt_only {
        println!(
            "initial association: {} pairs",
            state.multilabels.pair_count()
        );
    }
    for round in 1..=train_config.ml_iterations {
        if let Err(e) = train_mtml_iteration(&dataset, &mut state, &train_config, round) {
            write_metrics_csv(&state.history, &out_dir.join("metrics.csv"))?;
            eprintln!(
                "iteration {round} failed; resume from last good checkpoint {}",
                last_good.display()
            );
            return Err(e);
        }
        last_good = out_dir.join(format!("iteration_{round:03}.ckpt"));
        save_checkpoint(&state.params, &last_good)?;
        if let Some(last) = state.association_log.last() {
            let precision = match last.precision {
                Some(p) => format!("{p:.4}"),
                None => "-".into(),
            };
            println!(
                "iteration {round}: {} pairs, precision {precision}",
                last.pair_count
            );
        } else {
            println!("iteration {round}: association disabled");
        }
    }
    save_checkpoint(&state.params, &out_dir.join("final.ckpt"))?;
    write_metrics_csv(&state.history, &out_dir.join("metrics.csv"))?;
    if !train_config.mt_only {
        let rows: Vec<_> = state
            .association_log
            .iter()
            .flat_map(|r| r.rows.iter().cloned())
            .collect();
        write_association_dump(&rows, &out_dir.join("associations.csv"))?;
    }
    println!("run artifacts in {}", out_dir.display());
    Ok(())
}

pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(dataset_path)?;
    if params.config.input_dim != dataset.feature_dim {
        return Err(Error::IncompatibleArtifacts(format!(
            "checkpoint expects {}-dimensional inputs, dataset provides {}",
            params.config.input_dim, dataset.feature_dim
        )));
    }
    let problem = split_probe_gallery(
        &dataset,
        &params,
        cfg.eval.probe_fraction,
        cfg.eval.split_seed,
    )?;
    let report = evaluate(&problem, &cfg.eval.ranks)?;
    std::fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.toml"))?;
    write_eval_csv(&report, &out_dir.join("eval.csv"))?;
    print!("{}", eval_table(&report));
    println!("report in {}", out_dir.join("eval.csv").display());
    Ok(())
}

pub fn run_dynamics(run_dir: &Path, out: &Path) -> Result<()> {
    let dump = run_dir.join("associations.csv");
    if !dump.exists() {
        return Err(Error::Parse {
            line: 0,
            message: format!("no association dump at {}", dump.display()),
        });
    }
    let rows = crate::association::read_association_dump(&dump)?;
    let summaries = association_dynamics_report(&rows);
    write_dynamics_csv(&summaries, out)?;
    print!("{}", dynamics_table(&summaries));
    Ok(())
}
