use std::path::PathBuf;

use clap::Args;

use lungsed::features::FeatureExtractor;
use lungsed::interpret::{interpretation_report, InterpretError, InterpretationReport};

use crate::io::{create_dir, echo_config, load_model, load_wav, write_file};
use crate::{CliError, Result};

#[derive(Debug, Clone, Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    /// Zero-based window index.
    #[arg(long)]
    pub window: usize,
    /// Share of cells kept in the salient mask; defaults to the configured
    /// value.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Path points; defaults to the configured value.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `{id}.{window}.report.json` and one CSV per matrix.
pub fn cmd_interpret(args: &InterpretArgs) -> Result<InterpretationReport> {
    let (model, mut cfg) = load_model(&args.model)?;
    if let Some(p) = args.fraction {
        cfg.salient_fraction = p;
    }
    if let Some(s) = args.steps {
        cfg.ig_steps = s;
    }
    cfg.validate()?;
    let rec = load_wav(&args.wav)?;
    let extractor = FeatureExtractor::new(cfg.features.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let windows = extractor
        .featurize_clip(&rec.clip, &rec.id)
        .map_err(|e| CliError::data(args.wav.display(), e))?;
    let report =
        interpretation_report(&model, &windows, args.window, cfg.salient_fraction, cfg.ig_steps).map_err(|e| match e {
            InterpretError::BadWindow { .. } | InterpretError::BadFraction(_) | InterpretError::ZeroSteps => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        })?;
    create_dir(&args.out)?;
    write_file(
        &args.out.join(format!("{}.{}.report.json", report.recording_id, report.window_index)),
        report.to_json(),
    )?;
    for (name, body) in report.csv_files() {
        write_file(&args.out.join(name), body)?;
    }
    echo_config(&args.out, &cfg)?;
    Ok(report)
}
