//! Model checkpoints.
//!
//! Layout, all little-endian: magic "AMTM", version u32, eight u32
//! architecture dims (input_bins, conv1_kernel, conv1_filters,
//! conv2_kernel, conv2_filters, pool_width, dense_units, output_bins),
//! f32 dropout, f32 input_gain, u64 init seed, u32 flags (bit 0 = optimizer
//! state present), then the eight parameter tensors as raw f32 in
//! declaration order. When optimizer state is present: u64 step count,
//! then first-moment tensors, then second-moment tensors, same order.
//! Tensors are f32 on disk, so an f32 model round-trips bit for bit.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::adam::AdamState;
use super::{Architecture, ModelError, ModelParams, Real, TensorSet};

const MAGIC: &[u8; 4] = b"AMTM";
const VERSION: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed")]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated in {0}")]
    Truncated(&'static str),
    #[error("checkpoint has trailing bytes")]
    TrailingData,
    #[error("checkpoint architecture is invalid")]
    BadArchitecture(#[from] ModelError),
}

fn write_tensors<F: Real, W: Write>(
    w: &mut W,
    tensors: &TensorSet<F>,
) -> Result<(), CheckpointError> {
    for field in tensors.fields() {
        for &v in field {
            w.write_f32::<LittleEndian>(v.to_f32().unwrap())?;
        }
    }
    Ok(())
}

fn read_tensors<F: Real, R: Read>(
    r: &mut R,
    arch: &Architecture,
) -> Result<TensorSet<F>, CheckpointError> {
    let mut buf = vec![0f32; arch.param_count()];
    r.read_f32_into::<LittleEndian>(&mut buf)
        .map_err(|_| CheckpointError::Truncated("tensor data"))?;
    let values: Vec<F> = buf.into_iter().map(|v| F::from_f32(v).unwrap()).collect();
    Ok(TensorSet::unflatten(arch, &values))
}

/// Writes the model, and the optimizer state when given, so a training run
/// can resume exactly.
pub fn save_model<F: Real>(
    path: &Path,
    params: &ModelParams<F>,
    state: Option<&AdamState<F>>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let a = &params.arch;
    for dim in [
        a.input_bins,
        a.conv1_kernel,
        a.conv1_filters,
        a.conv2_kernel,
        a.conv2_filters,
        a.pool_width,
        a.dense_units,
        a.output_bins,
    ] {
        w.write_u32::<LittleEndian>(dim as u32)?;
    }
    w.write_f32::<LittleEndian>(a.dropout)?;
    w.write_f32::<LittleEndian>(a.input_gain)?;
    w.write_u64::<LittleEndian>(params.seed)?;
    w.write_u32::<LittleEndian>(if state.is_some() { FLAG_OPTIMIZER } else { 0 })?;
    write_tensors(&mut w, &params.tensors)?;
    if let Some(s) = state {
        w.write_u64::<LittleEndian>(s.step)?;
        write_tensors(&mut w, &s.m)?;
        write_tensors(&mut w, &s.v)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back; the architecture comes from the file, not the
/// caller. Rejects unknown versions, short files, and trailing garbage.
pub fn load_model<F: Real>(
    path: &Path,
) -> Result<(ModelParams<F>, Option<AdamState<F>>), CheckpointError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated("header"))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| CheckpointError::Truncated("header"))?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r
            .read_u32::<LittleEndian>()
            .map_err(|_| CheckpointError::Truncated("architecture"))? as usize;
    }
    let dropout = r
        .read_f32::<LittleEndian>()
        .map_err(|_| CheckpointError::Truncated("architecture"))?;
    let input_gain = r
        .read_f32::<LittleEndian>()
        .map_err(|_| CheckpointError::Truncated("architecture"))?;
    let seed = r
        .read_u64::<LittleEndian>()
        .map_err(|_| CheckpointError::Truncated("architecture"))?;
    let flags = r
        .read_u32::<LittleEndian>()
        .map_err(|_| CheckpointError::Truncated("architecture"))?;
    let arch = Architecture {
        input_bins: dims[0],
        conv1_kernel: dims[1],
        conv1_filters: dims[2],
        conv2_kernel: dims[3],
        conv2_filters: dims[4],
        pool_width: dims[5],
        dense_units: dims[6],
        output_bins: dims[7],
        dropout,
        input_gain,
    };
    arch.validate()?;
    let tensors = read_tensors(&mut r, &arch)?;
    let state = if flags & FLAG_OPTIMIZER != 0 {
        let step = r
            .read_u64::<LittleEndian>()
            .map_err(|_| CheckpointError::Truncated("optimizer state"))?;
        let m = read_tensors(&mut r, &arch)?;
        let v = read_tensors(&mut r, &arch)?;
        Some(AdamState { step, m, v })
    } else {
        None
    };
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(CheckpointError::TrailingData);
    }
    Ok((ModelParams { arch, seed, tensors }, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqt::CqtMatrix;
    use crate::model::adam::{adam_step, AdamHyper};
    use crate::model::{backward, forward, init_model, predict, tiny_arch, random_batch};

    fn trained_model() -> (ModelParams<f32>, AdamState<f32>) {
        let arch = tiny_arch();
        let mut params = init_model::<f32>(&arch, 17).unwrap();
        let mut state = AdamState::new(&arch);
        let (x, y) = random_batch::<f32>(&arch, 8, 18);
        for _ in 0..3 {
            let (_, cache) = forward(&params, &x, None).unwrap();
            let grads = backward(&params, &cache, &y, None);
            adam_step(&mut params.tensors, &grads, &mut state, &AdamHyper::default());
        }
        (params, state)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.amtm");
        let (params, state) = trained_model();

        save_model(&path, &params, None).unwrap();
        let (loaded, no_state) = load_model::<f32>(&path).unwrap();
        assert_eq!(loaded, params);
        assert!(no_state.is_none());

        save_model(&path, &params, Some(&state)).unwrap();
        let (again, with_state) = load_model::<f32>(&path).unwrap();
        assert_eq!(again, params);
        assert_eq!(with_state.unwrap(), state);
    }

    #[test]
    fn predictions_survive_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.amtm");
        let (params, _) = trained_model();
        let features = CqtMatrix::from_rows(
            6,
            params.arch.input_bins,
            (0..6 * params.arch.input_bins)
                .map(|i| (i % 13) as f32 * 0.003)
                .collect(),
        );
        let before = predict(&params, &features, 0.5).unwrap();
        save_model(&path, &params, None).unwrap();
        let (loaded, _) = load_model::<f32>(&path).unwrap();
        let after = predict(&loaded, &features, 0.5).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.amtm");
        let (params, _) = trained_model();
        save_model(&path, &params, None).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'Z';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_model::<f32>(&path), Err(CheckpointError::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[4] = 42;
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(CheckpointError::UnsupportedVersion(42))
        ));

        fs::write(&path, &good[..good.len() - 10]).unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(CheckpointError::Truncated(_))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(CheckpointError::TrailingData)
        ));
    }
}
