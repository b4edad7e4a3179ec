//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. `preset` selects the
//! base values (`paper`, the default, or `desk`: 30 epochs at lr 1e-3) and
//! is applied before every other key regardless of position. Later keys win.

use std::fmt::Write as _;
use std::path::PathBuf;

use lungsed::audio::Task;
use lungsed::features::FeatureConfig;
use lungsed::model::{FusionMode, ModelConfig};
use lungsed::train::TrainConfig;

use crate::CliError;

/// Every accepted key with its meaning, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "paper | desk; base values applied before all other keys"),
    ("seed", "master seed for init, shuffle, augment and synth sub-streams"),
    ("task", "inhalation | exhalation | cas | das | wheeze | crackle"),
    ("epochs", "training epochs"),
    ("lr", "Adam learning rate"),
    ("batch_size", "windows per mini-batch"),
    ("augment", "true | false; time/frequency masking of training windows"),
    ("augment_prob", "probability of applying each mask family"),
    ("freq_mask_min", "smallest frequency mask width in columns"),
    ("freq_mask_max", "largest frequency mask width in columns"),
    ("time_mask_min", "smallest time mask width in frames"),
    ("time_mask_max", "largest time mask width in frames"),
    ("log_every", "progress line period in epochs; 0 is silent"),
    ("val_fraction", "share of training recordings held out when no validation manifest is given"),
    ("branches", "number of encoder branches"),
    ("layers", "residual layers per branch"),
    ("filters", "channels per branch"),
    ("kernel", "dilated convolution width"),
    ("dilation_bases", "comma list, one base per branch"),
    ("classifier_hidden", "comma list of classifier widths, ending in 1"),
    ("fusion", "time_concat | feature_concat"),
    ("sample_rate_hz", "analysis sample rate"),
    ("highpass_hz", "high-pass cutoff"),
    ("highpass_order", "Butterworth order"),
    ("win_s", "window length in seconds"),
    ("hop_s", "window hop in seconds"),
    ("frame_s", "frame length in seconds"),
    ("step_s", "frame step in seconds"),
    ("n_filters", "mel filters"),
    ("f_lo", "lowest mel edge in Hz"),
    ("f_hi", "highest mel edge in Hz"),
    ("n_mfcc", "cepstral coefficients kept"),
    ("delta_span", "regression half-width for deltas"),
    ("energy_floor", "floor applied before the log"),
    ("ig_steps", "integrated-gradient path points"),
    ("salient_fraction", "share of cells kept in the salient mask"),
    ("cache_dir", "feature cache directory; empty disables caching"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub val_fraction: f64,
    pub ig_steps: usize,
    pub salient_fraction: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_preset("paper").expect("known preset")
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {value:?}")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn for_preset(name: &str) -> Result<Self, CliError> {
        let train = match name {
            "paper" => TrainConfig::default(),
            "desk" => TrainConfig::desk_scale(),
            other => return Err(usage(format!("unknown preset {other:?}"))),
        };
        Ok(Self {
            preset: name.to_string(),
            model: ModelConfig::default(),
            train,
            features: FeatureConfig::default(),
            val_fraction: 0.1,
            ig_steps: 128,
            salient_fraction: 0.05,
            cache_dir: None,
        })
    }

    /// Parses `text` and then `overrides`, each `key=value`.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            pairs.push(split_pair(line).map_err(|e| usage(format!("config line {}: {e}", i + 1)))?);
        }
        for o in overrides {
            pairs.push(split_pair(o).map_err(|e| usage(format!("override {o:?}: {e}")))?);
        }
        let preset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map_or("paper", |(_, v)| v.as_str());
        let mut cfg = Self::for_preset(preset)?;
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (m, t, f) = (&mut self.model, &mut self.train, &mut self.features);
        match key {
            "seed" => t.seed = num(key, value)?,
            "task" => t.task = value.parse().map_err(|e| usage(format!("task: {e}")))?,
            "epochs" => t.epochs = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "augment" => t.augment_enabled = num(key, value)?,
            "augment_prob" => t.augment.apply_prob = num(key, value)?,
            "freq_mask_min" => t.augment.freq_width.0 = num(key, value)?,
            "freq_mask_max" => t.augment.freq_width.1 = num(key, value)?,
            "time_mask_min" => t.augment.time_width.0 = num(key, value)?,
            "time_mask_max" => t.augment.time_width.1 = num(key, value)?,
            "log_every" => t.log_every = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "branches" => m.branches = num(key, value)?,
            "layers" => m.layers_per_branch = num(key, value)?,
            "filters" => m.filters = num(key, value)?,
            "kernel" => m.kernel = num(key, value)?,
            "dilation_bases" => m.dilation_bases = list(key, value)?,
            "classifier_hidden" => m.classifier_hidden = list(key, value)?,
            "fusion" => m.fusion = value.parse().map_err(|e| usage(format!("fusion: {e}")))?,
            "sample_rate_hz" => f.sample_rate_hz = num(key, value)?,
            "highpass_hz" => f.highpass_hz = num(key, value)?,
            "highpass_order" => f.highpass_order = num(key, value)?,
            "win_s" => f.win_s = num(key, value)?,
            "hop_s" => f.hop_s = num(key, value)?,
            "frame_s" => f.frame_s = num(key, value)?,
            "step_s" => f.step_s = num(key, value)?,
            "n_filters" => f.n_filters = num(key, value)?,
            "f_lo" => f.f_lo = num(key, value)?,
            "f_hi" => f.f_hi = num(key, value)?,
            "n_mfcc" => f.n_mfcc = num(key, value)?,
            "delta_span" => f.delta_span = num(key, value)?,
            "energy_floor" => f.energy_floor = num(key, value)?,
            "ig_steps" => self.ig_steps = num(key, value)?,
            "salient_fraction" => self.salient_fraction = num(key, value)?,
            "cache_dir" => self.cache_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut model = self.model.clone();
        model.input_dim = self.features.feature_dim();
        model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        lungsed::features::FeatureExtractor::new(self.features.clone()).map_err(|e| usage(e.to_string()))?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(usage(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if self.ig_steps == 0 {
            return Err(usage("ig_steps must be at least 1".into()));
        }
        if !(self.salient_fraction > 0.0 && self.salient_fraction <= 1.0) {
            return Err(usage(format!("salient_fraction must lie in (0, 1], got {}", self.salient_fraction)));
        }
        Ok(())
    }

    /// Model configuration with the input width taken from the features.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.features.feature_dim(),
            ..self.model.clone()
        }
    }

    /// Every key with its effective value; parsing the result reproduces
    /// this configuration.
    pub fn to_text(&self) -> String {
        let (m, t, f) = (&self.model, &self.train, &self.features);
        let value = |key: &str| -> String {
            match key {
                "preset" => self.preset.clone(),
                "seed" => t.seed.to_string(),
                "task" => t.task.to_string(),
                "epochs" => t.epochs.to_string(),
                "lr" => t.lr.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "augment" => t.augment_enabled.to_string(),
                "augment_prob" => t.augment.apply_prob.to_string(),
                "freq_mask_min" => t.augment.freq_width.0.to_string(),
                "freq_mask_max" => t.augment.freq_width.1.to_string(),
                "time_mask_min" => t.augment.time_width.0.to_string(),
                "time_mask_max" => t.augment.time_width.1.to_string(),
                "log_every" => t.log_every.to_string(),
                "val_fraction" => self.val_fraction.to_string(),
                "branches" => m.branches.to_string(),
                "layers" => m.layers_per_branch.to_string(),
                "filters" => m.filters.to_string(),
                "kernel" => m.kernel.to_string(),
                "dilation_bases" => join(&m.dilation_bases),
                "classifier_hidden" => join(&m.classifier_hidden),
                "fusion" => m.fusion.to_string(),
                "sample_rate_hz" => f.sample_rate_hz.to_string(),
                "highpass_hz" => f.highpass_hz.to_string(),
                "highpass_order" => f.highpass_order.to_string(),
                "win_s" => f.win_s.to_string(),
                "hop_s" => f.hop_s.to_string(),
                "frame_s" => f.frame_s.to_string(),
                "step_s" => f.step_s.to_string(),
                "n_filters" => f.n_filters.to_string(),
                "f_lo" => f.f_lo.to_string(),
                "f_hi" => f.f_hi.to_string(),
                "n_mfcc" => f.n_mfcc.to_string(),
                "delta_span" => f.delta_span.to_string(),
                "energy_floor" => f.energy_floor.to_string(),
                "ig_steps" => self.ig_steps.to_string(),
                "salient_fraction" => self.salient_fraction.to_string(),
                "cache_dir" => self
                    .cache_dir
                    .as_ref()
                    .map_or(String::new(), |p| p.display().to_string()),
                other => unreachable!("key {other} listed in KEYS"),
            }
        };
        let mut out = String::from("# effective run configuration\n");
        for (key, doc) in KEYS {
            writeln!(out, "# {doc}\n{key} = {}", value(key)).expect("string write");
        }
        out
    }

    /// Task the configuration trains for.
    pub fn task(&self) -> Task {
        self.train.task
    }

    pub fn fusion(&self) -> FusionMode {
        self.model.fusion
    }
}

fn split_pair(line: &str) -> Result<(String, String), String> {
    let (k, v) = line.split_once('=').ok_or_else(|| "expected key = value".to_string())?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.lr, 1e-5);
        assert_eq!(RunConfig::parse(&cfg.to_text(), &[]).unwrap(), cfg);
    }

    #[test]
    fn preset_applies_first_and_overrides_win() {
        let cfg = RunConfig::parse("epochs = 5\npreset = desk\n", &["lr=0.01".into()]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.lr), (5, 0.01));
        assert!(cfg.to_text().contains("\nlr = 0.01\n"));
        let desk = RunConfig::parse("preset=desk", &[]).unwrap();
        assert_eq!((desk.train.epochs, desk.train.lr), (30, 1e-3));
        assert_eq!(RunConfig::parse(&desk.to_text(), &[]).unwrap(), desk);
    }

    #[test]
    fn lists_and_enums_parse() {
        let cfg = RunConfig::parse(
            "branches = 1\ndilation_bases = 3\nfusion = feature_concat\ntask = wheeze\ncache_dir = /tmp/x",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.model.dilation_bases, vec![3]);
        assert_eq!(cfg.fusion(), FusionMode::FeatureConcat);
        assert_eq!(cfg.task(), Task::Wheeze);
        assert_eq!(cfg.cache_dir, Some(PathBuf::from("/tmp/x")));
        assert_eq!(RunConfig::parse(&cfg.to_text(), &[]).unwrap(), cfg);
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        for text in ["nonsense", "colour = red", "epochs = many", "preset = huge", "batch_size = 0", "branches = 2"] {
            assert!(matches!(RunConfig::parse(text, &[]), Err(CliError::Usage(_))), "{text}");
        }
    }
}
