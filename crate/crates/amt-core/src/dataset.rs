//! On-disk dataset layout: binary label files, kept-frame index files, and
//! the per-corpus index TSV that ties a song's artifacts together.
//!
//! Labels are stored as magic `LBLF`, a little-endian u32 frame count, and
//! one byte per cell in row-major order. The pitch width is fixed at 72;
//! the format carries no bin count, so writers enforce it.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::cqt::CqtMatrix;
use crate::midi::LabelMatrix;

pub const LABEL_MAGIC: &[u8; 4] = b"LBLF";
pub const LABEL_BINS: usize = 72;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset I/O failed")]
    Io(#[from] std::io::Error),
    #[error("not a label file (bad magic)")]
    BadMagic,
    #[error("label file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("label file has trailing bytes after the last row")]
    TrailingData,
    #[error("label matrix is {0} bins wide, the file format holds exactly {LABEL_BINS}")]
    WrongBins(usize),
    #[error("kept-frame file line {0} is not a strictly increasing frame index")]
    BadKeptLine(usize),
    #[error("index line {0} is malformed")]
    BadIndexLine(usize),
}

pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<(), DatasetError> {
    if labels.bins() != LABEL_BINS {
        return Err(DatasetError::WrongBins(labels.bins()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(LABEL_MAGIC)?;
    w.write_u32::<LittleEndian>(labels.frames() as u32)?;
    w.write_all(labels.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelMatrix, DatasetError> {
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DatasetError::Truncated("magic"))?;
    if &magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let frames = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DatasetError::Truncated("frame count"))? as usize;
    let mut data = vec![0u8; frames * LABEL_BINS];
    r.read_exact(&mut data)
        .map_err(|_| DatasetError::Truncated("rows"))?;
    if !r.is_empty() {
        return Err(DatasetError::TrailingData);
    }
    Ok(LabelMatrix::from_rows(frames, LABEL_BINS, data))
}

/// Writes kept frame indices as text, one per line. The v1 pipeline writes
/// the full 0..T range so every song ships the same set of files in either
/// mode.
pub fn write_kept(path: &Path, kept: &[usize]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for &i in kept {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_kept(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut kept = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let idx: usize = line
            .trim()
            .parse()
            .map_err(|_| DatasetError::BadKeptLine(n + 1))?;
        if kept.last().is_some_and(|&prev| idx <= prev) {
            return Err(DatasetError::BadKeptLine(n + 1));
        }
        kept.push(idx);
    }
    Ok(kept)
}

/// Truncates a feature/label pair to the shorter of the two frame counts so
/// every remaining row has a partner.
pub fn reconcile(features: &CqtMatrix, labels: &LabelMatrix) -> (CqtMatrix, LabelMatrix) {
    let t = features.frames().min(labels.frames());
    (features.truncated(t), labels.truncated(t))
}

/// One song's artifacts, with paths relative to the index file's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub song: String,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub kept: PathBuf,
    /// Reconciled frame count shared by the feature and label files.
    pub frames: usize,
    pub kept_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
}

const INDEX_HEADER: &str = "song\tfeatures\tlabels\tkept\tframes\tkept_count";

impl DatasetIndex {
    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.frames).sum()
    }

    pub fn total_kept(&self) -> usize {
        self.entries.iter().map(|e| e.kept_count).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(INDEX_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.song,
                e.features.display(),
                e.labels.display(),
                e.kept.display(),
                e.frames,
                e.kept_count
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == INDEX_HEADER => {}
            _ => return Err(DatasetError::BadIndexLine(1)),
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            let [song, features, labels, kept, frames, kept_count] = cols[..] else {
                return Err(DatasetError::BadIndexLine(n + 1));
            };
            let frames = frames
                .parse()
                .map_err(|_| DatasetError::BadIndexLine(n + 1))?;
            let kept_count = kept_count
                .parse()
                .map_err(|_| DatasetError::BadIndexLine(n + 1))?;
            entries.push(IndexEntry {
                song: song.to_string(),
                features: PathBuf::from(features),
                labels: PathBuf::from(labels),
                kept: PathBuf::from(kept),
                frames,
                kept_count,
            });
        }
        Ok(DatasetIndex { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}
