//! Pipeline configuration: one TOML file controls every stage.
//!
//! Every field has a default, so an empty file is a valid config and a file
//! may override any subset. Unknown keys are rejected rather than ignored;
//! a typo must fail loudly instead of silently running with defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::FrameSpec;
use crate::cqt::CqtParams;
use crate::midi::midi_to_freq;
use crate::model::{AdamHyper, Architecture, TrainConfig};
use crate::synth::{SongSpec, SynthParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioSection {
    pub sample_rate: u32,
    pub frame_len: usize,
    /// Frames whose sample standard deviation falls below this are silent.
    pub silence_threshold: f64,
}

impl Default for AudioSection {
    fn default() -> Self {
        AudioSection {
            sample_rate: 44100,
            frame_len: 2756,
            silence_threshold: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqtSection {
    pub f_min: f64,
    pub bins_per_octave: u32,
    pub n_bins: u32,
    pub max_kernel_len: usize,
}

impl Default for CqtSection {
    fn default() -> Self {
        let d = CqtParams::default();
        CqtSection {
            f_min: d.f_min,
            bins_per_octave: d.bins_per_octave,
            n_bins: d.n_bins,
            max_kernel_len: d.max_kernel_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_harmonics: u32,
    pub tau_ref: f64,
    pub f_ref: f64,
    pub alpha: f64,
    pub attack: f64,
    pub release: f64,
    pub master_peak: f64,
    pub event_durations: Vec<f64>,
    pub velocity: u8,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        let s = SongSpec::default();
        SynthSection {
            n_harmonics: p.n_harmonics,
            tau_ref: p.tau_ref,
            f_ref: p.f_ref,
            alpha: p.alpha,
            attack: p.attack,
            release: p.release,
            master_peak: p.master_peak,
            event_durations: s.event_dur_choices,
            velocity: s.velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Songs in the train+validation corpus (split downstream by song).
    pub train_songs: usize,
    /// Songs in the held-out test corpus.
    pub test_songs: usize,
    pub song_duration: f64,
    /// Song i is generated from base_seed + i.
    pub base_seed: u64,
    /// Test song i is generated from base_seed + test_seed_offset + i,
    /// keeping the two corpora disjoint for any sane corpus size.
    pub test_seed_offset: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            train_songs: 40,
            test_songs: 8,
            song_duration: 30.0,
            base_seed: 42,
            test_seed_offset: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv1_kernel: usize,
    pub conv1_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_filters: usize,
    pub pool_width: usize,
    pub dense_units: usize,
    pub output_bins: usize,
    pub dropout: f32,
    pub input_gain: f32,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = Architecture::default();
        ModelSection {
            conv1_kernel: a.conv1_kernel,
            conv1_filters: a.conv1_filters,
            conv2_kernel: a.conv2_kernel,
            conv2_filters: a.conv2_filters,
            pool_width: a.pool_width,
            dense_units: a.dense_units,
            output_bins: a.output_bins,
            dropout: a.dropout,
            input_gain: a.input_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Share of corpus songs assigned to training; the rest validate.
    pub train_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.eps,
            threshold: t.threshold,
            seed: t.seed,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Drop silent frames from training and testing data.
    pub v2: bool,
    /// Write a piano-roll SVG per evaluated song.
    pub svg: bool,
    /// Record wall-clock seconds in the history; off makes reruns
    /// byte-identical.
    pub record_timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            v2: false,
            svg: false,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub audio: AudioSection,
    pub cqt: CqtSection,
    pub synth: SynthSection,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub run: RunSection,
}

impl PipelineConfig {
    /// Full-size corpus preset; the defaults are the shrunk desk profile
    /// with identical ratios.
    pub fn paper_scale() -> Self {
        PipelineConfig {
            corpus: CorpusSection {
                train_songs: 830,
                test_songs: 166,
                song_duration: 180.0,
                ..CorpusSection::default()
            },
            ..PipelineConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.audio.frame_len == 0 || self.audio.sample_rate == 0 {
            return bad("audio.frame_len and audio.sample_rate must be positive".into());
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction < 1.0) {
            return bad(format!(
                "train.train_fraction must lie strictly between 0 and 1, got {}",
                self.train.train_fraction
            ));
        }
        if !(self.corpus.song_duration > 0.0) {
            return bad(format!(
                "corpus.song_duration must be positive, got {}",
                self.corpus.song_duration
            ));
        }
        if self.synth.event_durations.is_empty()
            || self.synth.event_durations.iter().any(|&d| !(d > 0.0))
        {
            return bad("synth.event_durations must be non-empty and positive".into());
        }
        if self.synth.velocity == 0 {
            return bad("synth.velocity must be at least 1".into());
        }
        if !(self.train.threshold > 0.0 && self.train.threshold < 1.0) {
            return bad(format!(
                "train.threshold must lie strictly between 0 and 1, got {}",
                self.train.threshold
            ));
        }
        self.architecture()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            frame_len: self.audio.frame_len,
            sample_rate: self.audio.sample_rate,
        }
    }

    pub fn cqt_params(&self) -> CqtParams {
        CqtParams {
            f_min: self.cqt.f_min,
            bins_per_octave: self.cqt.bins_per_octave,
            n_bins: self.cqt.n_bins,
            sample_rate: self.audio.sample_rate,
            max_kernel_len: self.cqt.max_kernel_len,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            n_harmonics: self.synth.n_harmonics,
            tau_ref: self.synth.tau_ref,
            f_ref: self.synth.f_ref,
            alpha: self.synth.alpha,
            attack: self.synth.attack,
            release: self.synth.release,
            master_peak: self.synth.master_peak,
        }
    }

    /// Song recipe for one corpus entry; the caller supplies the per-song
    /// seed.
    pub fn song_spec(&self, seed: u64) -> SongSpec {
        SongSpec {
            duration: self.corpus.song_duration,
            event_dur_choices: self.synth.event_durations.clone(),
            velocity: self.synth.velocity,
            seed,
        }
    }

    /// Network shape; the input width always tracks the CQT bin count.
    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_bins: self.cqt.n_bins as usize,
            conv1_kernel: self.model.conv1_kernel,
            conv1_filters: self.model.conv1_filters,
            conv2_kernel: self.model.conv2_kernel,
            conv2_filters: self.model.conv2_filters,
            pool_width: self.model.pool_width,
            dense_units: self.model.dense_units,
            output_bins: self.model.output_bins,
            dropout: self.model.dropout,
            input_gain: self.model.input_gain,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            adam: AdamHyper {
                lr: self.train.learning_rate,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.epsilon,
            },
            threshold: self.train.threshold,
            seed: self.train.seed,
            record_timing: self.run.record_timing,
        }
    }
}

/// Default reference pitch for the lowest CQT band, kept next to the config
/// so a dumped file documents where the number comes from.
pub fn default_f_min() -> f64 {
    midi_to_freq(36)
}
