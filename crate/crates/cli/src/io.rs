use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lungsed::audio::synth::CorpusManifest;
use lungsed::audio::{read_annotations, read_wav, AnnotatedRecording, EventInterval};
use lungsed::model::{load_with_metadata, MultiBranchTCN};

use crate::{CliError, Result, RunConfig, CONFIG_FILE};

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::data(path.display(), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())
}

/// Loads a run configuration file, if any, and applies `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    RunConfig::parse(&text, overrides)
}

pub fn read_manifest(path: &Path) -> Result<(CorpusManifest, PathBuf)> {
    let text = read_text(path)?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))?;
    let base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
    Ok((manifest, base))
}

/// Every recording of a manifest with its annotations, in manifest order.
pub fn load_corpus(path: &Path) -> Result<Vec<AnnotatedRecording>> {
    let (manifest, base) = read_manifest(path)?;
    manifest
        .recordings
        .iter()
        .map(|entry| {
            let clip = read_wav(&base.join(&entry.wav)).map_err(|e| CliError::Data(e.to_string()))?;
            let mut notes =
                read_annotations(&base.join(&entry.annotations)).map_err(|e| CliError::Data(e.to_string()))?;
            let rec = AnnotatedRecording {
                id: entry.id.clone(),
                clip,
                events: notes.remove(&entry.id).unwrap_or_default(),
            };
            rec.validate().map_err(|e| CliError::data(&entry.id, e))?;
            Ok(rec)
        })
        .collect()
}

/// Reads a WAV as an unannotated recording named after its file stem.
pub fn load_wav(path: &Path) -> Result<AnnotatedRecording> {
    let clip = read_wav(path).map_err(|e| CliError::Data(e.to_string()))?;
    let id = path
        .file_stem()
        .map_or_else(|| "recording".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(AnnotatedRecording {
        id,
        clip,
        events: Vec::new(),
    })
}

/// A checkpoint with the run configuration stored beside its weights.
pub fn load_model(path: &Path) -> Result<(MultiBranchTCN, RunConfig)> {
    let (model, meta) = load_with_metadata(path).map_err(|e| CliError::data(path.display(), e))?;
    let cfg = match meta.get("config") {
        Some(text) => RunConfig::parse(text, &[])?,
        None => RunConfig {
            model: model.config.clone(),
            ..RunConfig::default()
        },
    };
    Ok((model, cfg))
}

/// Events from one annotation file or from every `*.jsonl` file of a
/// directory except `*.probs.jsonl`, keyed by recording id.
pub fn read_event_sets(path: &Path) -> Result<BTreeMap<String, Vec<EventInterval>>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::data(path.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned());
                name.ends_with(".jsonl") && !name.ends_with(".probs.jsonl")
            })
            .collect();
        files.sort();
        files
    } else if path.exists() {
        vec![path.to_path_buf()]
    } else {
        return Err(CliError::Data(format!("{}: no such file or directory", path.display())));
    };
    let mut out: BTreeMap<String, Vec<EventInterval>> = BTreeMap::new();
    for f in files {
        for (id, events) in read_annotations(&f).map_err(|e| CliError::Data(e.to_string()))? {
            out.entry(id).or_default().extend(events);
        }
    }
    Ok(out)
}
