use std::path::PathBuf;

use clap::Args;
use sha2::{Digest, Sha256};

use lungsed::audio::synth::{CorpusManifest, ManifestEntry};
use lungsed::audio::{synthesize_recording, write_annotations, write_wav, Scenario};
use lungsed::seed::{stream_rng, substream};

use crate::io::{create_dir, write_file};
use crate::{CliError, Result};

/// Manifest file written by `synth`.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Seconds per recording.
    #[arg(long, default_value_t = 20.0)]
    pub duration: f64,
    /// Chance that an inhalation carries a wheeze.
    #[arg(long)]
    pub wheeze_prob: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub manifest: PathBuf,
    /// SHA-256 over the manifest and every file it names, in order.
    pub digest: String,
    pub recordings: usize,
}

/// Writes `count` recordings as `{id}.wav` plus `{id}.jsonl` annotations and
/// a JSON manifest.
pub fn cmd_synth(args: &SynthArgs) -> Result<SynthOutcome> {
    if !(args.duration >= 1.0) {
        return Err(CliError::Usage(format!(
            "--duration {} is shorter than one 1 s window",
            args.duration
        )));
    }
    create_dir(&args.out)?;
    let mut scenario_rng = stream_rng(args.seed, "synth");
    let mut hasher = Sha256::new();
    let mut recordings = Vec::with_capacity(args.count);
    let mut payload = Vec::new();
    for i in 0..args.count {
        let mut scenario = Scenario::for_corpus(&mut scenario_rng, args.duration);
        if let Some(p) = args.wheeze_prob {
            scenario.wheeze_prob = p;
        }
        let seed = substream(args.seed, &format!("synth/{i}"));
        let rec = synthesize_recording(seed, &scenario).map_err(|e| CliError::Usage(e.to_string()))?;
        let wav = PathBuf::from(format!("{}.wav", rec.id));
        let annotations = PathBuf::from(format!("{}.jsonl", rec.id));
        write_wav(&args.out.join(&wav), &rec.clip).map_err(|e| CliError::Data(e.to_string()))?;
        write_annotations(&args.out.join(&annotations), &rec.id, &rec.events)
            .map_err(|e| CliError::Data(e.to_string()))?;
        payload.push(args.out.join(&wav));
        payload.push(args.out.join(&annotations));
        recordings.push(ManifestEntry {
            id: rec.id,
            seed,
            scenario,
            wav,
            annotations,
        });
    }
    let manifest = CorpusManifest {
        seed: args.seed,
        recordings,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = args.out.join(MANIFEST_FILE);
    write_file(&path, &text)?;
    hasher.update(text.as_bytes());
    for p in &payload {
        hasher.update(std::fs::read(p).map_err(|e| CliError::data(p.display(), e))?);
    }
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    write_file(&args.out.join("manifest.sha256"), format!("{digest}  {MANIFEST_FILE}\n"))?;
    Ok(SynthOutcome {
        manifest: path,
        digest,
        recordings: manifest.recordings.len(),
    })
}
