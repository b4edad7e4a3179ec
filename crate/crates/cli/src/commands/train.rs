use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use lungsed::audio::AnnotatedRecording;
use lungsed::features::{featurize_cached, FeatureExtractor};
use lungsed::model::{save_with_metadata, MultiBranchTCN};
use lungsed::train::{train, LabelledRecording, TrainHistory};

use crate::io::{create_dir, echo_config, load_config, load_corpus, write_file};
use crate::{with_workers, CliError, Result, RunConfig, CHECKPOINT_FILE, HISTORY_FILE};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured task.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Without it, the last `val_fraction` of the training recordings is
    /// held out.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Extra `key=value` settings applied after the configuration file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: TrainHistory,
    pub config: RunConfig,
    pub model: MultiBranchTCN,
}

/// Featurizes recordings in parallel, preserving their order.
pub(crate) fn prepare(cfg: &RunConfig, recs: &[AnnotatedRecording], workers: usize) -> Result<Vec<LabelledRecording>> {
    let extractor = FeatureExtractor::new(cfg.features.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let task = cfg.task();
    with_workers(workers, || {
        recs.par_iter()
            .map(|rec| {
                let windows = match &cfg.cache_dir {
                    Some(dir) => featurize_cached(&extractor, &rec.clip, &rec.id, dir),
                    None => extractor.featurize_clip(&rec.clip, &rec.id),
                }
                .map_err(|e| CliError::data(&rec.id, e))?;
                Ok(LabelledRecording::from_windows(rec, &extractor, task, windows))
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Trains on a manifest and writes the checkpoint, `history.csv` and the
/// effective configuration.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut overrides = args.overrides.clone();
    if let Some(t) = &args.task {
        overrides.push(format!("task={t}"));
    }
    let cfg = load_config(args.config.as_deref(), &overrides)?;
    let mut train_recs = load_corpus(&args.train_manifest)?;
    let val_recs = match &args.val_manifest {
        Some(p) => load_corpus(p)?,
        None => {
            if train_recs.len() < 2 {
                return Err(CliError::Data(format!(
                    "{}: at least two recordings are needed to hold out a validation split",
                    args.train_manifest.display()
                )));
            }
            let held = ((train_recs.len() as f64 * cfg.val_fraction).ceil() as usize).clamp(1, train_recs.len() - 1);
            train_recs.split_off(train_recs.len() - held)
        }
    };
    let train_set = prepare(&cfg, &train_recs, args.workers)?;
    let val_set = prepare(&cfg, &val_recs, args.workers)?;
    let epochs = cfg.train.epochs;
    let (model, history) = train(&cfg.model_config(), &train_set, &val_set, &cfg.train, |e| {
        eprintln!(
            "epoch {}/{epochs}: train_loss {:.6} val_loss {:.6} val_f1 {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_f1
        );
    })?;

    create_dir(&args.out)?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    let metadata = BTreeMap::from([
        ("config".to_string(), cfg.to_text()),
        ("task".to_string(), cfg.task().to_string()),
        ("selected_epoch".to_string(), history.selected_epoch.to_string()),
    ]);
    save_with_metadata(&model, &checkpoint, &metadata).map_err(|e| CliError::data(checkpoint.display(), e))?;
    write_file(&args.out.join(HISTORY_FILE), history.to_csv())?;
    echo_config(&args.out, &cfg)?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        config: cfg,
        model,
    })
}
