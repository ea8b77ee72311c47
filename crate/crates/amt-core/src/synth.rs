//! Additive piano-like synthesis and randomized corpus generation.
//!
//! Notes are sums of eight harmonics with 1/h amplitude rolloff under an
//! exponential decay whose time constant shrinks with pitch, so low notes
//! ring out while high notes die quickly. Songs tile uniformly sampled
//! events (single notes and a fixed 13-chord vocabulary) back to back, and
//! the corpus writer emits paired WAV + MIDI plus a seed manifest that is
//! sufficient to regenerate every file bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{write_wav, AudioBuffer};
use crate::midi::{midi_to_freq, write_midi, NoteEvent, NoteEventList};

/// Lowest and highest playable MIDI pitch (C2..=B7), matching the label range.
pub const PITCH_LOW: u8 = 36;
pub const PITCH_HIGH: u8 = 107;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("note duration must be positive (got {0})")]
    NonpositiveDuration(f64),
    #[error("pitch {0} outside playable range {PITCH_LOW}..={PITCH_HIGH}")]
    PitchOutOfRange(i32),
    #[error("corpus I/O failed")]
    Io(#[from] std::io::Error),
    #[error("corpus audio write failed")]
    Audio(#[from] crate::audio::AudioError),
    #[error("manifest line {0} is malformed")]
    BadManifest(usize),
}

/// Named chord shape as semitone offsets from the root; offset 0 is always
/// present and offsets stay within one octave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordType {
    pub name: &'static str,
    pub intervals: &'static [u8],
}

/// The thirteen chord shapes in the event vocabulary, in fixed order.
pub fn standard_chords() -> Vec<ChordType> {
    vec![
        ChordType { name: "major", intervals: &[0, 4, 7] },
        ChordType { name: "minor", intervals: &[0, 3, 7] },
        ChordType { name: "dom7", intervals: &[0, 4, 7, 10] },
        ChordType { name: "min7", intervals: &[0, 3, 7, 10] },
        ChordType { name: "maj7", intervals: &[0, 4, 7, 11] },
        ChordType { name: "fifth", intervals: &[0, 7] },
        ChordType { name: "maj6", intervals: &[0, 4, 7, 9] },
        ChordType { name: "min6", intervals: &[0, 3, 7, 9] },
        ChordType { name: "dim", intervals: &[0, 3, 6] },
        ChordType { name: "sus2", intervals: &[0, 2, 7] },
        ChordType { name: "sus4", intervals: &[0, 5, 7] },
        ChordType { name: "aug", intervals: &[0, 4, 8] },
        ChordType { name: "aug7", intervals: &[0, 4, 8, 10] },
    ]
}

/// Synthesis controls. `decay_tau` gives tau_ref * (f_ref / f0)^alpha
/// seconds, strictly decreasing in f0.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_harmonics: u32,
    pub tau_ref: f64,
    pub f_ref: f64,
    pub alpha: f64,
    pub attack: f64,
    pub release: f64,
    pub master_peak: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_harmonics: 8,
            tau_ref: 1.0,
            f_ref: 440.0,
            alpha: 0.7,
            attack: 0.005,
            release: 0.05,
            master_peak: 0.9,
        }
    }
}

impl SynthParams {
    pub fn decay_tau(&self, f0: f64) -> f64 {
        self.tau_ref * (self.f_ref / f0).powf(self.alpha)
    }
}

/// Random-song controls: total length, the duration menu events draw from,
/// and the seed that makes the draw sequence reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct SongSpec {
    pub duration: f64,
    pub event_dur_choices: Vec<f64>,
    pub velocity: u8,
    pub seed: u64,
}

impl Default for SongSpec {
    fn default() -> Self {
        SongSpec {
            duration: 180.0,
            event_dur_choices: vec![0.25, 0.5, 1.0],
            velocity: 96,
            seed: 0,
        }
    }
}

/// Pitches of a chord rooted at `root`, erroring if any tone leaves the
/// playable range.
pub fn chord_pitches(root: u8, chord: &ChordType) -> Result<Vec<u8>, SynthError> {
    let mut pitches = Vec::with_capacity(chord.intervals.len());
    for &i in chord.intervals {
        let p = root as i32 + i as i32;
        if !(PITCH_LOW as i32..=PITCH_HIGH as i32).contains(&p) {
            return Err(SynthError::PitchOutOfRange(p));
        }
        pitches.push(p as u8);
    }
    Ok(pitches)
}

/// Every playable event: the 72 single notes in ascending order, then each
/// chord shape in vocabulary order at every root that keeps all tones in
/// range, roots ascending. 900 entries for the standard vocabulary.
pub fn event_vocabulary(chords: &[ChordType]) -> Vec<Vec<u8>> {
    let mut vocab: Vec<Vec<u8>> =
        (PITCH_LOW..=PITCH_HIGH).map(|p| vec![p]).collect();
    for chord in chords {
        let max = *chord.intervals.iter().max().expect("nonempty intervals");
        for root in PITCH_LOW..=PITCH_HIGH - max {
            vocab.push(chord_pitches(root, chord).expect("root kept in range"));
        }
    }
    vocab
}

fn render_with_release(
    pitch: u8,
    dur: f64,
    release: f64,
    params: &SynthParams,
    sr: u32,
) -> Result<Vec<f32>, SynthError> {
    if dur <= 0.0 {
        return Err(SynthError::NonpositiveDuration(dur));
    }
    let f0 = midi_to_freq(pitch);
    let tau = params.decay_tau(f0);
    let nyquist = sr as f64 / 2.0;
    let body = (dur * sr as f64).round() as usize;
    let tail = (release * sr as f64).round() as usize;
    let mut out = vec![0.0f32; body + tail];
    for (n, sample) in out.iter_mut().enumerate() {
        let t = n as f64 / sr as f64;
        let mut acc = 0.0f64;
        for h in 1..=params.n_harmonics as u64 {
            let fh = h as f64 * f0;
            if fh >= nyquist {
                break;
            }
            acc += (std::f64::consts::TAU * fh * t).sin() / h as f64;
        }
        let mut env = (-t / tau).exp();
        if t < params.attack {
            env *= t / params.attack;
        }
        if n >= body {
            env *= 1.0 - (t - dur) / release;
        }
        *sample = (acc * env) as f32;
    }
    Ok(out)
}

/// One note as raw samples: `round(dur * sr)` of them, silent at t = 0
/// because of the linear attack ramp, harmonics at or above Nyquist skipped.
pub fn render_note(
    pitch: u8,
    dur: f64,
    params: &SynthParams,
    sr: u32,
) -> Result<Vec<f32>, SynthError> {
    render_with_release(pitch, dur, 0.0, params, sr)
}

/// Mixes every event additively at its onset and rescales the mix so the
/// peak magnitude equals `master_peak`. Each note keeps sounding for
/// `release` seconds past its offset under a linear fade, the way a damper
/// stops a string rather than a gate.
pub fn render_events(
    list: &NoteEventList,
    params: &SynthParams,
    sr: u32,
) -> Result<AudioBuffer, SynthError> {
    let mut mix: Vec<f64> = Vec::new();
    for e in &list.events {
        let dur = e.offset - e.onset;
        if dur <= 0.0 {
            continue;
        }
        let note = render_with_release(e.pitch, dur, params.release, params, sr)?;
        let start = (e.onset * sr as f64).round() as usize;
        if mix.len() < start + note.len() {
            mix.resize(start + note.len(), 0.0);
        }
        for (j, &s) in note.iter().enumerate() {
            mix[start + j] += s as f64;
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    let scale = if peak > 0.0 { params.master_peak / peak } else { 0.0 };
    let samples = mix.iter().map(|&s| (s * scale) as f32).collect();
    Ok(AudioBuffer { samples, sample_rate: sr })
}

/// Draws events uniformly from the vocabulary with uniform durations from
/// the menu, tiling them end to end and truncating the last at `duration`.
/// Identical seeds give identical songs.
pub fn generate_song(spec: &SongSpec, chords: &[ChordType]) -> NoteEventList {
    let vocab = event_vocabulary(chords);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut events = Vec::new();
    let mut cursor = 0.0f64;
    while cursor < spec.duration {
        let pitches = &vocab[rng.random_range(0..vocab.len())];
        let dur = spec.event_dur_choices[rng.random_range(0..spec.event_dur_choices.len())];
        let offset = (cursor + dur).min(spec.duration);
        for &pitch in pitches {
            events.push(NoteEvent {
                pitch,
                onset: cursor,
                offset,
                velocity: spec.velocity,
            });
        }
        cursor += dur;
    }
    NoteEventList::new(events)
}

/// One corpus entry: which file pair belongs to which seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub seed: u64,
    pub wav: PathBuf,
    pub midi: PathBuf,
    pub duration: f64,
}

/// Renders `n_songs` songs into `out_dir` as `song_<i>.wav` + `song_<i>.mid`
/// with per-song seed `spec.seed + i`, and writes `manifest.tsv` describing
/// them. Returns the manifest rows with paths relative to `out_dir`.
pub fn generate_corpus(
    n_songs: usize,
    spec: &SongSpec,
    params: &SynthParams,
    sr: u32,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, SynthError> {
    fs::create_dir_all(out_dir)?;
    let chords = standard_chords();
    let mut rows = Vec::with_capacity(n_songs);
    for i in 0..n_songs {
        let song_spec = SongSpec { seed: spec.seed + i as u64, ..spec.clone() };
        let events = generate_song(&song_spec, &chords);
        let wav_name = PathBuf::from(format!("song_{i}.wav"));
        let midi_name = PathBuf::from(format!("song_{i}.mid"));
        let audio = render_events(&events, params, sr)?;
        write_wav(&out_dir.join(&wav_name), &audio)?;
        fs::write(out_dir.join(&midi_name), write_midi(&events))?;
        rows.push(ManifestRow {
            index: i,
            seed: song_spec.seed,
            wav: wav_name,
            midi: midi_name,
            duration: spec.duration,
        });
    }
    let mut manifest = fs::File::create(out_dir.join("manifest.tsv"))?;
    writeln!(manifest, "index\tseed\twav\tmidi\tduration")?;
    for row in &rows {
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}",
            row.index,
            row.seed,
            row.wav.display(),
            row.midi.display(),
            row.duration
        )?;
    }
    Ok(rows)
}

/// Reads back a `manifest.tsv` written by [`generate_corpus`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, SynthError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(SynthError::BadManifest(lineno + 1));
        }
        let bad = || SynthError::BadManifest(lineno + 1);
        rows.push(ManifestRow {
            index: fields[0].parse().map_err(|_| bad())?,
            seed: fields[1].parse().map_err(|_| bad())?,
            wav: PathBuf::from(fields[2]),
            midi: PathBuf::from(fields[3]),
            duration: fields[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
