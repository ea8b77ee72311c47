//! Polyphonic piano transcription pipeline.
//!
//! The crate covers the full loop for frame-wise multi-pitch detection on
//! synthetic piano audio:
//!
//! * [`synth`] renders additive piano-like tones and generates seeded
//!   WAV + MIDI corpora,
//! * [`audio`] reads and writes 16-bit mono PCM and slices signals into
//!   fixed-length frames,
//! * [`midi`] parses and writes standard MIDI files and converts note events
//!   into per-frame pitch activation labels,
//! * [`cqt`] computes constant-Q spectra, one row per frame,
//! * [`model`] holds a small 1-D convolutional network with hand-written
//!   backpropagation and Adam, trained to predict the 72 pitch activations
//!   of each frame,
//! * [`eval`] scores predictions (exact-row subset accuracy, per-pitch
//!   confusion counts) and renders error piano rolls as SVG,
//! * [`pipeline`] wires the stages into the `gen`, `extract`, `train`,
//!   `eval` and `transcribe` commands exposed by the `amt` binary.
//!
//! All randomness flows through explicitly seeded ChaCha generators; a fixed
//! seed reproduces corpora, initial weights, and training trajectories
//! byte for byte on the same platform.

pub mod audio;
pub mod config;
pub mod cqt;
pub mod dataset;
pub mod eval;
pub mod midi;
pub mod model;
pub mod pipeline;
pub mod synth;
