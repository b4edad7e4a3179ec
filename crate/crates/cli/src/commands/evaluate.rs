use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;

use lungsed::audio::{task_events, Task};
use lungsed::eval::{match_and_score, RecordingScore, ScoreReport};

use crate::io::{create_dir, read_event_sets, write_file};
use crate::{CliError, Result};

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Predicted events: an annotation file or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth events: an annotation file or a directory of them.
    #[arg(long)]
    pub truth: PathBuf,
    /// Task whose labels are scored; inferred from the predictions when
    /// they carry a single label.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Scores every recording found on either side and writes
/// `metrics.json` and `metrics.csv`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<ScoreReport> {
    let pred = read_event_sets(&args.pred)?;
    let truth = read_event_sets(&args.truth)?;
    let task: Task = match &args.task {
        Some(t) => t.parse().map_err(|e| CliError::Usage(format!("--task: {e}")))?,
        None => {
            let labels: BTreeSet<&str> = pred.values().flatten().map(|e| e.label.as_str()).collect();
            match labels.into_iter().collect::<Vec<_>>().as_slice() {
                [one] => one.parse().map_err(|e| CliError::Usage(format!("cannot infer task: {e}")))?,
                _ => return Err(CliError::Usage("cannot infer the task from the predictions; pass --task".into())),
            }
        }
    };
    let ids: BTreeSet<&String> = pred.keys().chain(truth.keys()).collect();
    let mut per = Vec::with_capacity(ids.len());
    for id in ids {
        let gt = task_events(truth.get(id).map_or(&[][..], Vec::as_slice), task);
        let p = task_events(pred.get(id).map_or(&[][..], Vec::as_slice), task);
        let metrics = match_and_score(&gt, &p).map_err(|e| CliError::data(id, e))?;
        per.push(RecordingScore {
            recording_id: id.clone(),
            metrics,
        });
    }
    let report = ScoreReport::new(per);
    create_dir(&args.out)?;
    write_file(&args.out.join("metrics.json"), report.to_json())?;
    write_file(&args.out.join("metrics.csv"), report.to_csv())?;
    Ok(report)
}
