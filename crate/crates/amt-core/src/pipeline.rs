//! Stage orchestration behind the command-line interface. Each stage reads
//! and writes a shared on-disk layout rooted at one output directory:
//!
//! ```text
//! out/
//!   train/   song_<i>.{wav,mid,cqtf,lblf,kept} + manifest.tsv + index.tsv
//!   test/    same layout, disjoint generation seeds
//!   model.amtm  history.csv  report.tsv  rolls/<song>.svg
//! ```
//!
//! With timing recording disabled, every artifact is a pure function of the
//! config, so two runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{filter_silent, frame_signal, read_wav, AudioError};
use crate::config::{ConfigError, PipelineConfig};
use crate::cqt::{build_kernels, cqt_matrix, read_features, write_features, CqtError, CqtMatrix};
use crate::dataset::{
    read_kept, read_labels, reconcile, write_kept, write_labels, DatasetError, DatasetIndex,
    IndexEntry, LABEL_BINS,
};
use crate::eval::{render_pianoroll, time_inference, EvalError, EvalReport, PianoRollStyle};
use crate::midi::{events_to_labels, parse_midi, LabelMatrix, MidiError, PitchRange};
use crate::model::{
    load_model, predict, save_model, train, CheckpointError, Dataset, ModelError, TrainError,
};
use crate::synth::{generate_corpus, read_manifest, ManifestRow, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline I/O failed")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Cqt(#[from] CqtError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input: {0} (run the earlier stages first)")]
    MissingInput(PathBuf),
    #[error("cannot split songs: {0}")]
    EmptySplit(&'static str),
    #[error("kept index {index} out of range for {song} with {frames} frames")]
    KeptOutOfRange {
        song: String,
        index: usize,
        frames: usize,
    },
}

/// Fixed file layout under one output root.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputLayout { root: root.into() }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn test_dir(&self) -> PathBuf {
        self.root.join("test")
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join("model.amtm")
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.tsv")
    }

    pub fn roll_dir(&self) -> PathBuf {
        self.root.join("rolls")
    }
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.tsv")
}

fn index_path(dir: &Path) -> PathBuf {
    dir.join("index.tsv")
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput(path))
    }
}

#[derive(Debug)]
pub struct GenSummary {
    pub train: Vec<ManifestRow>,
    pub test: Vec<ManifestRow>,
}

/// Renders the training corpus and a held-out test corpus. Test songs draw
/// their seeds from a far offset so the two corpora never share a sequence.
pub fn run_gen(cfg: &PipelineConfig, out: &OutputLayout) -> Result<GenSummary, PipelineError> {
    let params = cfg.synth_params();
    let sr = cfg.audio.sample_rate;
    let train = generate_corpus(
        cfg.corpus.train_songs,
        &cfg.song_spec(cfg.corpus.base_seed),
        &params,
        sr,
        &out.train_dir(),
    )?;
    let test_seed = cfg.corpus.base_seed.wrapping_add(cfg.corpus.test_seed_offset);
    let test = generate_corpus(
        cfg.corpus.test_songs,
        &cfg.song_spec(test_seed),
        &params,
        sr,
        &out.test_dir(),
    )?;
    Ok(GenSummary { train, test })
}

#[derive(Debug)]
pub struct ExtractSummary {
    pub train: DatasetIndex,
    pub test: DatasetIndex,
    /// Note events outside the 72-pitch label range (none for generated
    /// corpora; nonzero only for foreign MIDI files).
    pub dropped_events: usize,
}

/// Computes spectral features and labels for both corpus directories.
pub fn run_extract(
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<ExtractSummary, PipelineError> {
    let bank = build_kernels(&cfg.cqt_params())?;
    let (train, dropped_train) = extract_dir(cfg, &bank, &out.train_dir())?;
    let (test, dropped_test) = extract_dir(cfg, &bank, &out.test_dir())?;
    Ok(ExtractSummary {
        train,
        test,
        dropped_events: dropped_train + dropped_test,
    })
}

fn extract_dir(
    cfg: &PipelineConfig,
    bank: &crate::cqt::KernelBank,
    dir: &Path,
) -> Result<(DatasetIndex, usize), PipelineError> {
    let rows = read_manifest(&require(manifest_path(dir))?)?;
    let spec = cfg.frame_spec();
    let range = PitchRange::default();
    let mut entries = Vec::with_capacity(rows.len());
    let mut dropped_total = 0usize;
    for row in rows {
        let stem = row
            .wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("song_{}", row.index));
        let buf = read_wav(&dir.join(&row.wav))?;
        let features = cqt_matrix(&buf, &spec, bank)?;
        let events = parse_midi(&fs::read(dir.join(&row.midi))?)?;
        let (labels, dropped) = events_to_labels(&events, spec.frame_dur(), &range);
        dropped_total += dropped;
        let (features, labels) = reconcile(&features, &labels);
        let frames = features.frames();
        let kept: Vec<usize> = if cfg.run.v2 {
            let audio_frames = frame_signal(&buf, &spec);
            filter_silent(&audio_frames[..frames], cfg.audio.silence_threshold)?.kept
        } else {
            (0..frames).collect()
        };
        let feat_name = format!("{stem}.cqtf");
        let label_name = format!("{stem}.lblf");
        let kept_name = format!("{stem}.kept");
        write_features(&dir.join(&feat_name), &features)?;
        write_labels(&dir.join(&label_name), &labels)?;
        write_kept(&dir.join(&kept_name), &kept)?;
        entries.push(IndexEntry {
            song: stem,
            features: feat_name.into(),
            labels: label_name.into(),
            kept: kept_name.into(),
            frames,
            kept_count: kept.len(),
        });
    }
    let index = DatasetIndex { entries };
    index.write(&index_path(dir))?;
    Ok((index, dropped_total))
}

/// Shuffles song indices and cuts at floor(n * fraction), clamped so both
/// sides stay non-empty. The shuffle stream is seed + 3; streams seed
/// through seed + 2 belong to the training loop.
fn song_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(3)));
    let cut = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let val = order.split_off(cut);
    (order, val)
}

fn load_split(
    dir: &Path,
    index: &DatasetIndex,
    ids: &[usize],
    input_bins: usize,
) -> Result<Dataset<f32>, PipelineError> {
    let mut xs: Vec<f32> = Vec::new();
    let mut ys: Vec<f32> = Vec::new();
    let mut rows = 0usize;
    for &i in ids {
        let e = &index.entries[i];
        let features = read_features(&dir.join(&e.features))?;
        let labels = read_labels(&dir.join(&e.labels))?;
        if features.bins() != input_bins {
            return Err(ModelError::ShapeMismatch {
                expected: input_bins,
                got: features.bins(),
            }
            .into());
        }
        let frames = features.frames().min(labels.frames());
        for &k in &read_kept(&dir.join(&e.kept))? {
            if k >= frames {
                return Err(PipelineError::KeptOutOfRange {
                    song: e.song.clone(),
                    index: k,
                    frames,
                });
            }
            xs.extend_from_slice(features.row(k));
            ys.extend(labels.row(k).iter().map(|&b| b as f32));
            rows += 1;
        }
    }
    let x = Array2::from_shape_vec((rows, input_bins), xs).expect("row-major features");
    let y = Array2::from_shape_vec((rows, LABEL_BINS), ys).expect("row-major labels");
    Ok(Dataset::new(x, y)?)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub train_songs: usize,
    pub val_songs: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub epochs: usize,
    pub best_val_acc: f64,
    pub seconds: f64,
}

/// Splits the extracted training corpus by song, trains, and writes the
/// checkpoint and history CSV.
pub fn run_train(cfg: &PipelineConfig, out: &OutputLayout) -> Result<TrainSummary, PipelineError> {
    let dir = out.train_dir();
    let index = DatasetIndex::read(&require(index_path(&dir))?)?;
    let n = index.entries.len();
    if n < 2 {
        return Err(PipelineError::EmptySplit(
            "need at least two songs to hold one out for validation",
        ));
    }
    let (train_ids, val_ids) = song_split(n, cfg.train.train_fraction, cfg.train.seed);
    let input_bins = cfg.architecture().input_bins;
    let train_set = load_split(&dir, &index, &train_ids, input_bins)?;
    let val_set = load_split(&dir, &index, &val_ids, input_bins)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(PipelineError::EmptySplit(
            "a split ended up with zero kept frames",
        ));
    }

    let started = Instant::now();
    let (params, history) = train::<f32>(&cfg.architecture(), &train_set, &val_set, &cfg.train_config())?;
    let seconds = if cfg.run.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    save_model(&out.model_path(), &params, None)?;
    fs::write(out.history_path(), history.to_csv())?;
    let best_val_acc = history
        .epochs
        .iter()
        .map(|e| e.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainSummary {
        train_songs: train_ids.len(),
        val_songs: val_ids.len(),
        train_frames: train_set.len(),
        val_frames: val_set.len(),
        epochs: history.epochs.len(),
        best_val_acc,
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SongScore {
    pub song: String,
    pub frames: usize,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct EvalSummary {
    pub report: EvalReport,
    /// Subset accuracy an all-silent predictor would score on the same
    /// frames: the fraction whose truth row is entirely empty.
    pub baseline_accuracy: f64,
    pub per_song: Vec<SongScore>,
    pub svg_count: usize,
}

/// Scores the checkpoint against the extracted test corpus and writes the
/// report TSV. Inference is timed on a two-minute feature block: a real
/// test song when one is long enough, otherwise test frames tiled to the
/// required length.
pub fn run_eval(cfg: &PipelineConfig, out: &OutputLayout) -> Result<EvalSummary, PipelineError> {
    let (params, _) = load_model::<f32>(&require(out.model_path())?)?;
    let dir = out.test_dir();
    let index = DatasetIndex::read(&require(index_path(&dir))?)?;
    let threshold = cfg.train.threshold;
    let input_bins = params.arch.input_bins;

    let mut agg_pred: Vec<u8> = Vec::new();
    let mut agg_truth: Vec<u8> = Vec::new();
    let mut agg_rows = 0usize;
    let mut empty_truth_rows = 0usize;
    let mut per_song = Vec::with_capacity(index.entries.len());
    let mut svg_count = 0usize;
    let mut timing_rows: Vec<f32> = Vec::new();
    let frames_2min = (120.0 / cfg.frame_spec().frame_dur()).ceil() as usize;
    let mut timing_done = false;

    if cfg.run.svg {
        fs::create_dir_all(out.roll_dir())?;
    }

    for e in &index.entries {
        let features = read_features(&dir.join(&e.features))?;
        let labels = read_labels(&dir.join(&e.labels))?;
        if features.bins() != input_bins {
            return Err(ModelError::ShapeMismatch {
                expected: input_bins,
                got: features.bins(),
            }
            .into());
        }
        let frames = features.frames().min(labels.frames());

        // A single song covering two minutes becomes the timing input.
        if !timing_done && features.frames() >= frames_2min {
            timing_rows.clear();
            timing_rows.extend_from_slice(
                &features.as_slice()[..frames_2min * input_bins],
            );
            timing_done = true;
        } else if !timing_done && timing_rows.len() < frames_2min * input_bins {
            timing_rows.extend_from_slice(features.as_slice());
        }

        let kept = read_kept(&dir.join(&e.kept))?;
        let mut kept_feat: Vec<f32> = Vec::with_capacity(kept.len() * input_bins);
        let mut kept_truth: Vec<u8> = Vec::with_capacity(kept.len() * LABEL_BINS);
        for &k in &kept {
            if k >= frames {
                return Err(PipelineError::KeptOutOfRange {
                    song: e.song.clone(),
                    index: k,
                    frames,
                });
            }
            kept_feat.extend_from_slice(features.row(k));
            kept_truth.extend_from_slice(labels.row(k));
        }
        let kept_feat = CqtMatrix::from_rows(kept.len(), input_bins, kept_feat);
        let truth = LabelMatrix::from_rows(kept.len(), LABEL_BINS, kept_truth);
        let pred = predict(&params, &kept_feat, threshold)?;

        let accuracy = crate::eval::subset_accuracy(&pred, &truth)?;
        per_song.push(SongScore {
            song: e.song.clone(),
            frames: kept.len(),
            accuracy,
        });
        empty_truth_rows += truth.rows().filter(|r| r.iter().all(|&b| b == 0)).count();
        agg_pred.extend_from_slice(pred.as_bytes());
        agg_truth.extend_from_slice(truth.as_bytes());
        agg_rows += kept.len();

        if cfg.run.svg {
            render_pianoroll(
                &pred,
                &truth,
                &PianoRollStyle::default(),
                &out.roll_dir().join(format!("{}.svg", e.song)),
            )?;
            svg_count += 1;
        }
    }

    if timing_rows.is_empty() {
        return Err(PipelineError::EmptySplit("test corpus has no frames"));
    }
    // Tile short corpora up to the two-minute mark.
    let mut block = timing_rows.clone();
    while block.len() < frames_2min * input_bins {
        let missing = frames_2min * input_bins - block.len();
        let take = missing.min(timing_rows.len());
        block.extend_from_slice(&timing_rows[..take]);
    }
    block.truncate(frames_2min * input_bins);
    let timing_feat = CqtMatrix::from_rows(frames_2min, input_bins, block);
    let (_, seconds) = time_inference(&params, &timing_feat, threshold)?;
    let inference_seconds = if cfg.run.record_timing { seconds } else { 0.0 };

    let agg_pred = LabelMatrix::from_rows(agg_rows, LABEL_BINS, agg_pred);
    let agg_truth = LabelMatrix::from_rows(agg_rows, LABEL_BINS, agg_truth);
    let report = EvalReport::from_matrices(&agg_pred, &agg_truth, inference_seconds)?;
    let baseline_accuracy = if agg_rows == 0 {
        1.0
    } else {
        empty_truth_rows as f64 / agg_rows as f64
    };

    let mut text = report.to_tsv();
    text.push_str(&format!("baseline_accuracy\t{baseline_accuracy}\n"));
    text.push_str(&format!("n_songs\t{}\n", per_song.len()));
    for s in &per_song {
        text.push_str(&format!("{}_frames\t{}\n", s.song, s.frames));
        text.push_str(&format!("{}_accuracy\t{}\n", s.song, s.accuracy));
    }
    fs::write(out.report_path(), text)?;

    Ok(EvalSummary {
        report,
        baseline_accuracy,
        per_song,
        svg_count,
    })
}

#[derive(Debug)]
pub struct TranscribeSummary {
    pub frames: usize,
    pub active_cells: usize,
    pub labels_path: PathBuf,
    pub svg_path: Option<PathBuf>,
}

/// Full pipeline on one WAV file: features, prediction, label file, and an
/// optional piano roll. With no ground truth every predicted cell renders
/// in the agreement color.
pub fn run_transcribe(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    wav: &Path,
    out_labels: &Path,
    out_svg: Option<&Path>,
) -> Result<TranscribeSummary, PipelineError> {
    let (params, _) = load_model::<f32>(&require(checkpoint.to_path_buf())?)?;
    let buf = read_wav(&require(wav.to_path_buf())?)?;
    let bank = build_kernels(&cfg.cqt_params())?;
    let features = cqt_matrix(&buf, &cfg.frame_spec(), &bank)?;
    let pred = predict(&params, &features, cfg.train.threshold)?;
    write_labels(out_labels, &pred)?;
    if let Some(svg) = out_svg {
        render_pianoroll(&pred, &pred, &PianoRollStyle::default(), svg)?;
    }
    Ok(TranscribeSummary {
        frames: pred.frames(),
        active_cells: pred.as_bytes().iter().map(|&b| b as usize).sum(),
        labels_path: out_labels.to_path_buf(),
        svg_path: out_svg.map(Path::to_path_buf),
    })
}
