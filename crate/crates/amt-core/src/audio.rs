//! WAV input and output plus frame segmentation.
//!
//! Only 16-bit mono PCM is supported. Samples live in `[-1.0, 1.0]`:
//! reading divides each `i16` by 32767 (the one value that maps outside,
//! -32768, is clamped), writing quantizes with `round(s * 32767)`. Reading a
//! file produced by [`write_wav`] therefore returns the quantized samples
//! exactly, and a write/read cycle never moves a sample by more than half a
//! quantization step.

use std::fs;
use std::io;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use thiserror::Error;

/// Scale factor between normalized samples and 16-bit PCM codes.
const PCM_SCALE: f64 = 32767.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error")]
    Io(#[from] io::Error),
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("missing required chunk {0:?}")]
    MissingChunk(&'static str),
    #[error("unsupported audio format code {0} (only PCM = 1)")]
    UnsupportedFormat(u16),
    #[error("unsupported channel count {0} (only mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0} (only 16)")]
    UnsupportedBitDepth(u16),
    #[error("frame is empty")]
    EmptyFrame,
}

/// Mono audio signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioBuffer { samples, sample_rate }
    }

    /// Signal length in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Frame geometry used when slicing a signal for feature extraction.
///
/// The defaults (2756 samples at 44100 Hz) give frames of just under
/// 62.5 ms, and every stage of the pipeline derives its frame count from
/// this one pair of numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub sample_rate: u32,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec { frame_len: 2756, sample_rate: 44100 }
    }
}

impl FrameSpec {
    pub fn new(frame_len: usize, sample_rate: u32) -> Self {
        FrameSpec { frame_len, sample_rate }
    }

    /// Seconds covered by one frame.
    pub fn frame_dur(&self) -> f64 {
        self.frame_len as f64 / self.sample_rate as f64
    }

    /// Number of frames a signal of `n_samples` produces. The final partial
    /// frame counts; only an empty signal yields zero.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.frame_len)
    }
}

/// Indices of frames that survived a filter, together with how many frames
/// existed before filtering. `kept` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameIndexSet {
    pub kept: Vec<usize>,
    pub total: usize,
}

/// Reads a 16-bit mono PCM WAV file.
pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes)
}

/// Decodes WAV bytes. Chunks other than `fmt ` and `data` are skipped, so
/// files with LIST/INFO metadata still load.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotRiff);
    }
    let mut pos = 12usize;
    let mut sample_rate: Option<u32> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = LittleEndian::read_u32(&bytes[pos + 4..pos + 8]) as usize;
        pos += 8;
        if pos + size > bytes.len() {
            return Err(AudioError::Truncated("chunk body"));
        }
        let body = &bytes[pos..pos + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Truncated("fmt chunk"));
                }
                let format = LittleEndian::read_u16(&body[0..2]);
                if format != 1 {
                    return Err(AudioError::UnsupportedFormat(format));
                }
                let channels = LittleEndian::read_u16(&body[2..4]);
                if channels != 1 {
                    return Err(AudioError::UnsupportedChannels(channels));
                }
                sample_rate = Some(LittleEndian::read_u32(&body[4..8]));
                let bits = LittleEndian::read_u16(&body[14..16]);
                if bits != 16 {
                    return Err(AudioError::UnsupportedBitDepth(bits));
                }
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunk bodies are word aligned; odd sizes carry a pad byte.
        pos += size + (size & 1);
    }
    let sample_rate = sample_rate.ok_or(AudioError::MissingChunk("fmt "))?;
    let data = data.ok_or(AudioError::MissingChunk("data"))?;
    let mut samples = Vec::with_capacity(data.len() / 2);
    for pair in data.chunks_exact(2) {
        let code = LittleEndian::read_i16(pair);
        samples.push(((code as f64 / PCM_SCALE) as f32).clamp(-1.0, 1.0));
    }
    Ok(AudioBuffer { samples, sample_rate })
}

/// Writes a canonical 44-byte-header WAV file (PCM, mono, 16-bit). The file
/// size is exactly 44 + 2 * samples bytes.
pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<(), AudioError> {
    fs::write(path, encode_wav(buf))?;
    Ok(())
}

/// Encodes a buffer as WAV bytes; see [`write_wav`].
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let n = buf.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &buf.samples {
        let code = (s as f64 * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&code.to_le_bytes());
    }
    out
}

/// Slices a signal into non-overlapping frames of `spec.frame_len` samples.
/// The final frame is zero-padded to full length; an empty signal gives an
/// empty list.
pub fn frame_signal(buf: &AudioBuffer, spec: &FrameSpec) -> Vec<Vec<f32>> {
    let n_frames = spec.frame_count(buf.samples.len());
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * spec.frame_len;
        let end = (start + spec.frame_len).min(buf.samples.len());
        let mut frame = Vec::with_capacity(spec.frame_len);
        frame.extend_from_slice(&buf.samples[start..end]);
        frame.resize(spec.frame_len, 0.0);
        frames.push(frame);
    }
    frames
}

/// Population standard deviation of a frame, accumulated in f64.
pub fn frame_std(frame: &[f32]) -> Result<f64, AudioError> {
    if frame.is_empty() {
        return Err(AudioError::EmptyFrame);
    }
    let n = frame.len() as f64;
    let mean = frame.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = frame.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Keeps the frames whose standard deviation reaches `threshold`; frames
/// strictly below it are dropped. Thresholds at or below zero keep
/// everything.
pub fn filter_silent(frames: &[Vec<f32>], threshold: f64) -> Result<FrameIndexSet, AudioError> {
    let mut kept = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        if frame_std(frame)? >= threshold {
            kept.push(i);
        }
    }
    Ok(FrameIndexSet { kept, total: frames.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn buffer(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, 44100)
    }

    #[test]
    fn header_only_file_reads_empty() {
        let buf = buffer(vec![]);
        let bytes = encode_wav(&buf);
        assert_eq!(bytes.len(), 44);
        let back = decode_wav(&bytes).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.sample_rate, 44100);
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let buf = buffer(vec![0.25; 1000]);
        write_wav(&path, &buf).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 44 + 2 * 1000);
    }

    #[test]
    fn quantized_round_trip_is_identity() {
        // Once a buffer has been through one write/read cycle its samples
        // sit on the 16-bit grid, and further cycles must not move them.
        let raw = buffer(vec![0.1, -0.9, 0.33333, 1.0, -1.0, 0.0, 0.70710677]);
        let once = decode_wav(&encode_wav(&raw)).unwrap();
        let twice = decode_wav(&encode_wav(&once)).unwrap();
        assert_eq!(once.samples, twice.samples);
        for (a, b) in raw.samples.iter().zip(&once.samples) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn full_scale_codes_survive() {
        let buf = buffer(vec![1.0, -1.0]);
        let back = decode_wav(&encode_wav(&buf)).unwrap();
        assert_eq!(back.samples, vec![1.0, -1.0]);
    }

    #[test]
    fn out_of_range_samples_clamp() {
        let buf = buffer(vec![1.5, -2.0]);
        let back = decode_wav(&encode_wav(&buf)).unwrap();
        assert_eq!(back.samples, vec![1.0, -1.0]);
    }

    #[test]
    fn float_format_code_is_rejected() {
        let mut bytes = encode_wav(&buffer(vec![0.0; 4]));
        // Format code lives at offset 20 in the canonical header; 3 = IEEE float.
        bytes[20] = 3;
        match decode_wav(&bytes) {
            Err(AudioError::UnsupportedFormat(3)) => {}
            other => panic!("expected UnsupportedFormat(3), got {other:?}"),
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let mut bytes = encode_wav(&buffer(vec![0.0; 4]));
        bytes[22] = 2;
        assert!(matches!(decode_wav(&bytes), Err(AudioError::UnsupportedChannels(2))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_wav(&buffer(vec![0.0; 4]));
        bytes[0] = b'X';
        assert!(matches!(decode_wav(&bytes), Err(AudioError::NotRiff)));
        let short = [0u8; 10];
        assert!(matches!(decode_wav(&short), Err(AudioError::NotRiff)));
    }

    #[test]
    fn truncated_data_chunk_is_rejected() {
        let bytes = encode_wav(&buffer(vec![0.5; 100]));
        assert!(matches!(decode_wav(&bytes[..150]), Err(AudioError::Truncated(_))));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        // RIFF + fmt + a LIST chunk + data.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        for v in [1u16, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        for v in [2u16, 16] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(b"abc\0"); // odd size incl. pad byte
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&16384i16.to_le_bytes());
        let buf = decode_wav(&bytes).unwrap();
        assert_eq!(buf.sample_rate, 22050);
        assert_eq!(buf.samples.len(), 1);
    }

    #[test]
    fn frame_counts() {
        let spec = FrameSpec::default();
        assert!((spec.frame_dur() - 0.0625).abs() < 1e-4);
        // 8268 = 3 * 2756 splits exactly.
        assert_eq!(spec.frame_count(8268), 3);
        assert_eq!(spec.frame_count(0), 0);
        assert_eq!(spec.frame_count(1), 1);
        // Three minutes of audio.
        assert_eq!(spec.frame_count(7_938_000), 2881);
    }

    #[test]
    fn final_frame_is_zero_padded() {
        let spec = FrameSpec::default();
        let buf = buffer((0..5000).map(|i| (i as f32 + 1.0) / 5000.0).collect());
        let frames = frame_signal(&buf, &spec);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].len(), 2756);
        assert_eq!(&frames[0][..], &buf.samples[..2756]);
        assert_eq!(&frames[1][..5000 - 2756], &buf.samples[2756..]);
        assert!(frames[1][5000 - 2756..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_multiple_has_no_padding() {
        let spec = FrameSpec::default();
        let buf = buffer(vec![0.5; 8268]);
        let frames = frame_signal(&buf, &spec);
        assert_eq!(frames.len(), 3);
        assert!(frames[2].iter().all(|&x| x == 0.5));
    }

    #[test]
    fn std_of_flat_frames_is_zero() {
        assert_eq!(frame_std(&[0.0; 64]).unwrap(), 0.0);
        assert_eq!(frame_std(&[0.5; 64]).unwrap(), 0.0);
    }

    #[test]
    fn std_of_alternating_unit_frame_is_one() {
        let frame: Vec<f32> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(frame_std(&frame).unwrap(), 1.0);
    }

    #[test]
    fn std_of_full_scale_sine_is_inverse_sqrt_two() {
        // 28 whole cycles inside one frame keep the mean at zero and the
        // mean square at exactly one half.
        let n = 2756;
        let frame: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 28.0 * i as f64 / n as f64).sin() as f32)
            .collect();
        assert!((frame_std(&frame).unwrap() - 0.7071067811865476).abs() < 1e-3);
    }

    #[test]
    fn empty_frame_errors() {
        assert!(matches!(frame_std(&[]), Err(AudioError::EmptyFrame)));
    }

    #[test]
    fn filter_keeps_frames_at_threshold() {
        // std of [c, -c, c, -c] is exactly c, so a threshold of c keeps it.
        let on = vec![0.5f32, -0.5, 0.5, -0.5];
        let set = filter_silent(&[on.clone()], 0.5).unwrap();
        assert_eq!(set.kept, vec![0]);
        let set = filter_silent(&[on], 0.5 + 1e-12).unwrap();
        assert!(set.kept.is_empty());
        assert_eq!(set.total, 1);
    }

    #[test]
    fn filter_separates_silence_from_signal() {
        let silent = vec![0.0f32; 16];
        let quiet = vec![0.000_004f32, -0.000_004, 0.000_004, -0.000_004]; // std 4e-6
        let loud = vec![0.5f32, -0.5, 0.5, -0.5];
        let frames = vec![silent, loud.clone(), quiet, loud];
        let set = filter_silent(&frames, 0.00001).unwrap();
        assert_eq!(set.kept, vec![1, 3]);
        assert_eq!(set.total, 4);
    }

    proptest! {
        #[test]
        fn frames_concatenate_back_to_signal(
            samples in proptest::collection::vec(-1.0f32..1.0, 0..400),
            frame_len in 1usize..64,
        ) {
            let buf = buffer(samples.clone());
            let spec = FrameSpec::new(frame_len, 44100);
            let frames = frame_signal(&buf, &spec);
            let flat: Vec<f32> = frames.into_iter().flatten().collect();
            prop_assert_eq!(&flat[..samples.len()], &samples[..]);
            prop_assert!(flat[samples.len()..].iter().all(|&x| x == 0.0));
        }

        #[test]
        fn raising_threshold_only_shrinks_kept(
            samples in proptest::collection::vec(-1.0f32..1.0, 32..128),
            lo in 0.0f64..0.4,
            hi in 0.4f64..1.0,
        ) {
            let buf = buffer(samples);
            let frames = frame_signal(&buf, &FrameSpec::new(8, 44100));
            let a = filter_silent(&frames, lo).unwrap();
            let b = filter_silent(&frames, hi).unwrap();
            prop_assert!(b.kept.iter().all(|i| a.kept.contains(i)));
        }

        #[test]
        fn std_scales_with_amplitude(
            samples in proptest::collection::vec(-1.0f32..1.0, 2..256),
            log2_scale in -6i32..6,
        ) {
            // Power-of-two scales multiply each sample exactly, isolating
            // the equivariance of the statistic from storage rounding.
            let scale = (log2_scale as f64).exp2() as f32;
            let base = frame_std(&samples).unwrap();
            let scaled: Vec<f32> = samples.iter().map(|&x| x * scale).collect();
            let got = frame_std(&scaled).unwrap();
            let want = base * scale as f64;
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
        }

        #[test]
        fn write_read_stays_within_one_code(
            samples in proptest::collection::vec(-1.0f32..=1.0, 0..200),
        ) {
            let buf = buffer(samples.clone());
            let back = decode_wav(&encode_wav(&buf)).unwrap();
            prop_assert_eq!(back.samples.len(), samples.len());
            for (a, b) in samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32767.0);
            }
        }
    }
}
