use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use lungsed::audio::{write_annotations, EventInterval};
use lungsed::eval::threshold;
use lungsed::features::FeatureExtractor;
use lungsed::model::MultiBranchTCN;
use lungsed::train::{events_from_probs, predict_features, WindowPrediction};

use crate::io::{create_dir, echo_config, load_model, load_wav, write_file};
use crate::{with_workers, CliError, Result, RunConfig};

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One or more WAV files.
    #[arg(long, required = true, num_args = 1..)]
    pub wav: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPrediction {
    pub recording_id: String,
    pub windows: Vec<WindowPrediction>,
    pub events: Vec<EventInterval>,
}

#[derive(Serialize)]
struct ProbabilityRow<'a> {
    recording_id: &'a str,
    window: usize,
    start_s: f64,
    prob: f64,
    decision: u8,
}

/// Scores one recording: features, per-window probabilities, events.
pub(crate) fn predict_one(
    model: &MultiBranchTCN,
    extractor: &FeatureExtractor,
    cfg: &RunConfig,
    wav: &std::path::Path,
) -> Result<RecordingPrediction> {
    let rec = load_wav(wav)?;
    let windows = extractor
        .featurize_clip(&rec.clip, &rec.id)
        .map_err(|e| CliError::data(wav.display(), e))?;
    let preds = predict_features(model, &windows).map_err(CliError::from)?;
    let pairs: Vec<(f64, f64)> = preds.iter().map(|w| (w.start_s, w.prob)).collect();
    let f = &cfg.features;
    let events = events_from_probs(&pairs, rec.clip.duration_s(), f.win_s, f.hop_s, cfg.task()).map_err(CliError::from)?;
    Ok(RecordingPrediction {
        recording_id: rec.id,
        windows: preds,
        events,
    })
}

/// Writes `{id}.probs.jsonl` (one row per window) and `{id}.events.jsonl`
/// (annotation format) for every WAV.
pub fn cmd_predict(args: &PredictArgs) -> Result<Vec<RecordingPrediction>> {
    let (model, cfg) = load_model(&args.model)?;
    let extractor = FeatureExtractor::new(cfg.features.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let results = with_workers(args.workers, || {
        args.wav
            .par_iter()
            .map(|w| predict_one(&model, &extractor, &cfg, w))
            .collect::<Result<Vec<_>>>()
    })??;
    create_dir(&args.out)?;
    for r in &results {
        let mut rows = String::new();
        for (i, w) in r.windows.iter().enumerate() {
            let row = ProbabilityRow {
                recording_id: &r.recording_id,
                window: i,
                start_s: w.start_s,
                prob: w.prob,
                decision: threshold(w.prob),
            };
            writeln!(rows, "{}", serde_json::to_string(&row).expect("row serializes")).expect("string write");
        }
        write_file(&args.out.join(format!("{}.probs.jsonl", r.recording_id)), rows)?;
        let events = args.out.join(format!("{}.events.jsonl", r.recording_id));
        write_annotations(&events, &r.recording_id, &r.events).map_err(|e| CliError::Data(e.to_string()))?;
    }
    echo_config(&args.out, &cfg)?;
    Ok(results)
}
