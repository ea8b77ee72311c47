//! Constant-Q spectral features on a log-frequency axis.
//!
//! Bin k is centered at f_min * 2^(k/B) and analyzed with a window of
//! N_k = ceil(Q * sr / f_k) samples, so every bin sees the same number of
//! cycles and resolution is constant in pitch rather than in Hz. Two
//! evaluation paths exist on purpose: `cqt_direct` computes the windowed
//! sums from scratch per call and serves as the reference, while `cqt_fast`
//! reuses a prebuilt kernel bank. Both read context from the full signal
//! around a frame center and treat samples beyond either end as zero.
//!
//! Feature matrices persist in a small binary format: magic "CQTF",
//! version, row and column counts as u32, then row-major f32, all
//! little-endian.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::audio::{AudioBuffer, FrameSpec};

const FEATURE_MAGIC: &[u8; 4] = b"CQTF";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CqtError {
    #[error("longest kernel needs {len} samples, over the {cap} cap")]
    KernelTooLong { len: usize, cap: usize },
    #[error("bin center {freq:.2} Hz reaches Nyquist {nyquist:.2} Hz")]
    BandAboveNyquist { freq: f64, nyquist: f64 },
    #[error("kernel bank built for {bank} Hz but signal is {buf} Hz")]
    SampleRateMismatch { bank: u32, buf: u32 },
    #[error("feature file I/O failed")]
    Io(#[from] std::io::Error),
    #[error("not a feature file (bad magic)")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("feature file truncated in {0}")]
    Truncated(&'static str),
}

/// Transform geometry. Defaults cover C2..B7 at three bins per semitone.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtParams {
    pub f_min: f64,
    pub bins_per_octave: u32,
    pub n_bins: u32,
    pub sample_rate: u32,
    /// Upper bound on N_0; build_kernels refuses geometries beyond it.
    pub max_kernel_len: usize,
}

impl Default for CqtParams {
    fn default() -> Self {
        CqtParams {
            f_min: crate::midi::midi_to_freq(36),
            bins_per_octave: 36,
            n_bins: 216,
            sample_rate: 44100,
            max_kernel_len: 1 << 18,
        }
    }
}

impl CqtParams {
    /// Quality factor 1 / (2^(1/B) - 1): cycles per analysis window.
    pub fn q(&self) -> f64 {
        1.0 / ((1.0 / self.bins_per_octave as f64).exp2() - 1.0)
    }

    pub fn center_freq(&self, bin: u32) -> f64 {
        self.f_min * (bin as f64 / self.bins_per_octave as f64).exp2()
    }

    pub fn window_len(&self, bin: u32) -> usize {
        (self.q() * self.sample_rate as f64 / self.center_freq(bin)).ceil() as usize
    }
}

/// Reference transform at one center, by direct summation. Out-of-range
/// window samples read as zero.
pub fn cqt_direct(signal: &[f32], center: i64, params: &CqtParams) -> Vec<f64> {
    let q = params.q();
    let mut out = Vec::with_capacity(params.n_bins as usize);
    for k in 0..params.n_bins {
        let nk = params.window_len(k);
        let start = center - (nk / 2) as i64;
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for n in 0..nk {
            let idx = start + n as i64;
            let x = if (0..signal.len() as i64).contains(&idx) {
                signal[idx as usize] as f64
            } else {
                0.0
            };
            let w = 0.5 * (1.0 - (TAU * n as f64 / nk as f64).cos());
            let (s, c) = (TAU * q * n as f64 / nk as f64).sin_cos();
            re += x * w * c;
            im -= x * w * s;
        }
        out.push(re.hypot(im) / nk as f64);
    }
    out
}

struct Kernel {
    // Windowed complex exponential, conjugated, split into parts:
    // re[n] = w[n] cos(theta_n), im[n] = -w[n] sin(theta_n).
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Immutable bank of precomputed kernels for one parameter set.
pub struct KernelBank {
    params: CqtParams,
    kernels: Vec<Kernel>,
}

/// Builds the kernel bank, validating that the top bin stays below Nyquist
/// and the bottom bin's window fits the configured cap.
pub fn build_kernels(params: &CqtParams) -> Result<KernelBank, CqtError> {
    let nyquist = params.sample_rate as f64 / 2.0;
    let top = params.center_freq(params.n_bins - 1);
    if top >= nyquist {
        return Err(CqtError::BandAboveNyquist { freq: top, nyquist });
    }
    let n0 = params.window_len(0);
    if n0 > params.max_kernel_len {
        return Err(CqtError::KernelTooLong { len: n0, cap: params.max_kernel_len });
    }
    let q = params.q();
    let mut kernels = Vec::with_capacity(params.n_bins as usize);
    for k in 0..params.n_bins {
        let nk = params.window_len(k);
        let mut re = Vec::with_capacity(nk);
        let mut im = Vec::with_capacity(nk);
        for n in 0..nk {
            let w = 0.5 * (1.0 - (TAU * n as f64 / nk as f64).cos());
            let (s, c) = (TAU * q * n as f64 / nk as f64).sin_cos();
            re.push(w * c);
            im.push(-(w * s));
        }
        kernels.push(Kernel { re, im });
    }
    Ok(KernelBank { params: params.clone(), kernels })
}

impl KernelBank {
    pub fn params(&self) -> &CqtParams {
        &self.params
    }

    pub fn kernel_len(&self, bin: usize) -> usize {
        self.kernels[bin].re.len()
    }
}

/// Transform at one center using the precomputed bank. Matches
/// [`cqt_direct`] to within 1e-6 relative error per bin.
pub fn cqt_fast(signal: &[f32], center: i64, bank: &KernelBank) -> Vec<f64> {
    let len = signal.len() as i64;
    let mut out = Vec::with_capacity(bank.kernels.len());
    for kernel in &bank.kernels {
        let nk = kernel.re.len();
        let start = center - (nk / 2) as i64;
        // Clip the window to the signal; everything outside contributes 0.
        let lo = start.max(0);
        let hi = (start + nk as i64).min(len);
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        if lo < hi {
            let x = &signal[lo as usize..hi as usize];
            let off = (lo - start) as usize;
            for ((&xi, kr), ki) in x
                .iter()
                .zip(&kernel.re[off..off + x.len()])
                .zip(&kernel.im[off..off + x.len()])
            {
                re += xi as f64 * kr;
                im += xi as f64 * ki;
            }
        }
        out.push(re.hypot(im) / nk as f64);
    }
    out
}

/// Frame-by-bin magnitude matrix, row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtMatrix {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
}

impl CqtMatrix {
    pub fn from_rows(frames: usize, bins: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * bins, "feature payload size mismatch");
        CqtMatrix { frames, bins, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn get(&self, t: usize, k: usize) -> f32 {
        self.data[t * self.bins + k]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copy of the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> CqtMatrix {
        let frames = frames.min(self.frames);
        CqtMatrix {
            frames,
            bins: self.bins,
            data: self.data[..frames * self.bins].to_vec(),
        }
    }
}

/// One CQT row per frame, centered mid-frame, with context drawn from the
/// whole signal. Row count equals the frame count of `spec` over `buf`.
pub fn cqt_matrix(
    buf: &AudioBuffer,
    spec: &FrameSpec,
    bank: &KernelBank,
) -> Result<CqtMatrix, CqtError> {
    if buf.sample_rate != bank.params.sample_rate {
        return Err(CqtError::SampleRateMismatch {
            bank: bank.params.sample_rate,
            buf: buf.sample_rate,
        });
    }
    let frames = spec.frame_count(buf.samples.len());
    let bins = bank.params.n_bins as usize;
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let center = (t * spec.frame_len + spec.frame_len / 2) as i64;
        let row = cqt_fast(&buf.samples, center, bank);
        data.extend(row.into_iter().map(|m| m as f32));
    }
    Ok(CqtMatrix { frames, bins, data })
}

/// Max-pools a bin row down to semitones: groups of `bins_per_semitone`
/// adjacent bins collapse to their maximum.
pub fn pool_semitones(row: &[f64], bins_per_semitone: usize) -> Vec<f64> {
    row.chunks(bins_per_semitone)
        .map(|g| g.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn write_features(path: &Path, m: &CqtMatrix) -> Result<(), CqtError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(m.frames as u32)?;
    w.write_u32::<LittleEndian>(m.bins as u32)?;
    for &v in &m.data {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<CqtMatrix, CqtError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CqtError::Truncated("header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(CqtError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| CqtError::Truncated("header"))?;
    if version != FEATURE_VERSION {
        return Err(CqtError::UnsupportedVersion(version));
    }
    let frames = r.read_u32::<LittleEndian>().map_err(|_| CqtError::Truncated("header"))? as usize;
    let bins = r.read_u32::<LittleEndian>().map_err(|_| CqtError::Truncated("header"))? as usize;
    let mut data = vec![0f32; frames * bins];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| CqtError::Truncated("payload"))?;
    Ok(CqtMatrix { frames, bins, data })
}
