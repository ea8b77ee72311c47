//! Frame-wise transcription scoring and piano-roll rendering.
//!
//! A frame counts as correct only when its entire predicted activation row
//! equals the ground truth exactly; partial credit is reported separately
//! through per-pitch confusion counts and micro-averaged precision, recall,
//! and F1, never folded into the accuracy number.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::cqt::CqtMatrix;
use crate::midi::{LabelMatrix, PitchRange};
use crate::model::{predict, ModelError, ModelParams, Real};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "prediction is {pred_frames}x{pred_bins} but truth is {truth_frames}x{truth_bins}"
    )]
    DimensionMismatch {
        pred_frames: usize,
        pred_bins: usize,
        truth_frames: usize,
        truth_bins: usize,
    },
    #[error("piano roll I/O failed")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_dims(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<(), EvalError> {
    if pred.frames() != truth.frames() || pred.bins() != truth.bins() {
        return Err(EvalError::DimensionMismatch {
            pred_frames: pred.frames(),
            pred_bins: pred.bins(),
            truth_frames: truth.frames(),
            truth_bins: truth.bins(),
        });
    }
    Ok(())
}

/// Fraction of frames whose full activation row matches exactly.
/// An empty matrix scores 1.0 (no frame is wrong).
pub fn subset_accuracy(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<f64, EvalError> {
    check_dims(pred, truth)?;
    if pred.frames() == 0 {
        return Ok(1.0);
    }
    let exact = pred
        .rows()
        .zip(truth.rows())
        .filter(|(p, t)| p == t)
        .count();
    Ok(exact as f64 / pred.frames() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PitchCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

/// Per-pitch confusion counts over all frames. A cell is a true positive
/// when both matrices are active, a false positive when only the prediction
/// is, and a false negative when only the truth is; inactive agreement is
/// not counted anywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_pitch: Vec<PitchCounts>,
}

impl ConfusionCounts {
    pub fn totals(&self) -> PitchCounts {
        let mut sum = PitchCounts::default();
        for p in &self.per_pitch {
            sum.true_pos += p.true_pos;
            sum.false_pos += p.false_pos;
            sum.false_neg += p.false_neg;
        }
        sum
    }

    /// Micro-averaged precision; 0 when nothing was predicted positive.
    pub fn micro_precision(&self) -> f64 {
        let t = self.totals();
        let denom = t.true_pos + t.false_pos;
        if denom == 0 {
            0.0
        } else {
            t.true_pos as f64 / denom as f64
        }
    }

    /// Micro-averaged recall; 0 when the truth has no positives.
    pub fn micro_recall(&self) -> f64 {
        let t = self.totals();
        let denom = t.true_pos + t.false_neg;
        if denom == 0 {
            0.0
        } else {
            t.true_pos as f64 / denom as f64
        }
    }

    /// Harmonic mean of micro precision and recall; 0 when both are 0.
    pub fn micro_f1(&self) -> f64 {
        let p = self.micro_precision();
        let r = self.micro_recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

pub fn confusion_counts(
    pred: &LabelMatrix,
    truth: &LabelMatrix,
) -> Result<ConfusionCounts, EvalError> {
    check_dims(pred, truth)?;
    let mut per_pitch = vec![PitchCounts::default(); pred.bins()];
    for (p_row, t_row) in pred.rows().zip(truth.rows()) {
        for (bin, (&p, &t)) in p_row.iter().zip(t_row).enumerate() {
            match (p != 0, t != 0) {
                (true, true) => per_pitch[bin].true_pos += 1,
                (true, false) => per_pitch[bin].false_pos += 1,
                (false, true) => per_pitch[bin].false_neg += 1,
                (false, false) => {}
            }
        }
    }
    Ok(ConfusionCounts { per_pitch })
}

/// Rendering parameters for the piano-roll SVG. The three class colors are
/// fixed defaults so renders of the same matrices are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRollStyle {
    /// Pixels per frame along the horizontal axis.
    pub cell_width: f64,
    /// Pixels per pitch along the vertical axis.
    pub cell_height: f64,
    /// Space reserved on the left for octave labels.
    pub label_margin: f64,
    /// Padding on the remaining three sides.
    pub pad: f64,
    pub tp_color: &'static str,
    pub fn_color: &'static str,
    pub fp_color: &'static str,
}

impl Default for PianoRollStyle {
    fn default() -> Self {
        PianoRollStyle {
            cell_width: 4.0,
            cell_height: 6.0,
            label_margin: 36.0,
            pad: 4.0,
            tp_color: "#006400",
            fn_color: "#32CD32",
            fp_color: "#DC143C",
        }
    }
}

/// Builds the piano-roll SVG document. Pitch runs vertically with the lowest
/// bin at the bottom, frames run horizontally. Every rectangle in the output
/// is a classified cell (true positive, false positive, or false negative);
/// grid decorations use line and text elements only, so the rectangle count
/// equals the confusion total by construction.
pub fn pianoroll_svg(
    pred: &LabelMatrix,
    truth: &LabelMatrix,
    style: &PianoRollStyle,
) -> Result<String, EvalError> {
    check_dims(pred, truth)?;
    let frames = pred.frames();
    let bins = pred.bins();
    let (cw, ch) = (style.cell_width, style.cell_height);
    let left = style.label_margin;
    let top = style.pad;
    let grid_w = frames as f64 * cw;
    let grid_h = bins as f64 * ch;
    let width = left + grid_w + style.pad;
    let height = top + grid_h + style.pad;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );

    // Grid border.
    for (x1, y1, x2, y2) in [
        (left, top, left + grid_w, top),
        (left, top + grid_h, left + grid_w, top + grid_h),
        (left, top, left, top + grid_h),
        (left + grid_w, top, left + grid_w, top + grid_h),
    ] {
        let _ = writeln!(
            svg,
            r##"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#888888" stroke-width="1"/>"##
        );
    }

    // One horizontal rule and label at the bottom edge of each C's cell.
    let range = PitchRange::default();
    for bin in 0..bins {
        let pitch = range.low as usize + bin;
        if pitch % 12 != 0 {
            continue;
        }
        let y = top + (bins - bin) as f64 * ch;
        let octave = pitch / 12 - 1;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y}" x2="{x2}" y2="{y}" stroke="#cccccc" stroke-width="1"/>"##,
            x2 = left + grid_w
        );
        let yt = y - 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="2" y="{yt}" font-family="monospace" font-size="10">C{octave}</text>"#
        );
    }

    for t in 0..frames {
        for b in 0..bins {
            let fill = match (pred.get(t, b), truth.get(t, b)) {
                (true, true) => style.tp_color,
                (true, false) => style.fp_color,
                (false, true) => style.fn_color,
                (false, false) => continue,
            };
            let x = left + t as f64 * cw;
            let y = top + (bins - 1 - b) as f64 * ch;
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}"/>"#
            );
        }
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_pianoroll(
    pred: &LabelMatrix,
    truth: &LabelMatrix,
    style: &PianoRollStyle,
    out: &Path,
) -> Result<(), EvalError> {
    let svg = pianoroll_svg(pred, truth, style)?;
    fs::write(out, svg)?;
    Ok(())
}

/// Runs prediction under a monotonic wall clock. The matrix is exactly what
/// [`predict`] returns; only the seconds vary between runs.
pub fn time_inference<F: Real>(
    params: &ModelParams<F>,
    features: &CqtMatrix,
    threshold: f64,
) -> Result<(LabelMatrix, f64), EvalError> {
    let started = Instant::now();
    let labels = predict(params, features, threshold)?;
    Ok((labels, started.elapsed().as_secs_f64()))
}

/// Scoring summary for one prediction/truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub subset_accuracy: f64,
    pub confusion: ConfusionCounts,
    pub inference_seconds: f64,
}

impl EvalReport {
    pub fn from_matrices(
        pred: &LabelMatrix,
        truth: &LabelMatrix,
        inference_seconds: f64,
    ) -> Result<EvalReport, EvalError> {
        Ok(EvalReport {
            n_samples: pred.frames(),
            subset_accuracy: subset_accuracy(pred, truth)?,
            confusion: confusion_counts(pred, truth)?,
            inference_seconds,
        })
    }

    /// Flat `key<TAB>value` serialization, one line per entry, scalars first
    /// and then the per-pitch counts in ascending pitch order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_samples\t{}", self.n_samples);
        let _ = writeln!(out, "subset_accuracy\t{}", self.subset_accuracy);
        let _ = writeln!(out, "micro_precision\t{}", self.confusion.micro_precision());
        let _ = writeln!(out, "micro_recall\t{}", self.confusion.micro_recall());
        let _ = writeln!(out, "micro_f1\t{}", self.confusion.micro_f1());
        let _ = writeln!(out, "inference_seconds\t{}", self.inference_seconds);
        let range = PitchRange::default();
        for (bin, c) in self.confusion.per_pitch.iter().enumerate() {
            let pitch = range.low as usize + bin;
            let _ = writeln!(out, "pitch_{pitch}_tp\t{}", c.true_pos);
            let _ = writeln!(out, "pitch_{pitch}_fp\t{}", c.false_pos);
            let _ = writeln!(out, "pitch_{pitch}_fn\t{}", c.false_neg);
        }
        out
    }
}
