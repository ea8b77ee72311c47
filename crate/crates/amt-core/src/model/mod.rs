//! Frame-wise pitch-activation network with hand-rolled backpropagation.
//!
//! The architecture is a 1-D stack over the frequency axis of a single
//! feature frame: log compression, Conv(25, 32) + ReLU + MaxPool(3),
//! Conv(5, 64) + ReLU + MaxPool(3), Dense(256) + ReLU + Dropout(0.25),
//! Dense(72) + Sigmoid. Convolutions run as im2col matrix products.
//! `backward` differentiates exactly the computation `forward` performs,
//! including the dropout mask and the loss clamp, which is what lets the
//! finite-difference tests hold it to 1e-4.
//!
//! Everything is generic over f32/f64: training and checkpoints use f32,
//! while gradient tests instantiate the same code at f64 where
//! finite differences are trustworthy.

pub mod adam;
pub mod checkpoint;
pub mod train;

pub use adam::{adam_step, adam_update, AdamHyper, AdamState};
pub use checkpoint::{load_model, save_model, CheckpointError};
pub use train::{
    dataset_accuracy, dataset_loss, train, Dataset, EpochStats, TrainConfig, TrainHistory,
    TrainError,
};

use ndarray::{Array1, Array2, Axis, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cqt::CqtMatrix;
use crate::midi::LabelMatrix;

/// Probabilities are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] inside the loss;
/// clamped entries contribute zero gradient.
pub const BCE_CLAMP: f64 = 1e-7;

/// Floating scalar the network can run at. f32 is the production and
/// checkpoint type; f64 exists for derivative verification.
pub trait Real: NdFloat + FromPrimitive + ToPrimitive {}
impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for exact-value conversion out of f64 literals.
fn r<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("input width {got} does not match architecture ({expected})")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Layer dimensions plus the two scalar preprocessing knobs. The
/// architecture travels inside checkpoints, so models with different
/// geometry load without recompilation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_bins: usize,
    pub conv1_kernel: usize,
    pub conv1_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_filters: usize,
    pub pool_width: usize,
    pub dense_units: usize,
    pub output_bins: usize,
    pub dropout: f32,
    /// Inputs enter as ln(1 + input_gain * magnitude).
    pub input_gain: f32,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_bins: 216,
            conv1_kernel: 25,
            conv1_filters: 32,
            conv2_kernel: 5,
            conv2_filters: 64,
            pool_width: 3,
            dense_units: 256,
            output_bins: 72,
            dropout: 0.25,
            input_gain: 1000.0,
        }
    }
}

impl Architecture {
    /// Valid (no padding) convolution output lengths; pooling floors, so a
    /// remainder of positions is silently unused.
    pub fn conv1_out(&self) -> usize {
        self.input_bins + 1 - self.conv1_kernel
    }

    pub fn pool1_out(&self) -> usize {
        self.conv1_out() / self.pool_width
    }

    pub fn conv2_out(&self) -> usize {
        self.pool1_out() + 1 - self.conv2_kernel
    }

    pub fn pool2_out(&self) -> usize {
        self.conv2_out() / self.pool_width
    }

    pub fn flat_len(&self) -> usize {
        self.pool2_out() * self.conv2_filters
    }

    pub fn param_count(&self) -> usize {
        self.conv1_kernel * self.conv1_filters
            + self.conv1_filters
            + self.conv2_kernel * self.conv1_filters * self.conv2_filters
            + self.conv2_filters
            + self.flat_len() * self.dense_units
            + self.dense_units
            + self.dense_units * self.output_bins
            + self.output_bins
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.input_bins,
            self.conv1_kernel,
            self.conv1_filters,
            self.conv2_kernel,
            self.conv2_filters,
            self.pool_width,
            self.dense_units,
            self.output_bins,
        ];
        if positive.iter().any(|&d| d == 0) {
            return Err(ModelError::BadArchitecture("zero dimension".into()));
        }
        if self.conv1_kernel > self.input_bins {
            return Err(ModelError::BadArchitecture(
                "first kernel wider than input".into(),
            ));
        }
        if self.conv2_kernel > self.pool1_out() {
            return Err(ModelError::BadArchitecture(
                "second kernel wider than pooled input".into(),
            ));
        }
        if self.pool2_out() == 0 {
            return Err(ModelError::BadArchitecture("second pool empty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadArchitecture("dropout outside [0,1)".into()));
        }
        Ok(())
    }
}

/// All trainable tensors. Weight layouts:
/// conv1_w[k][f], conv2_w[j * conv1_filters + c][f] (position-major input
/// patch), fc1_w[in][out], fc2_w[in][out].
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<F> {
    pub conv1_w: Array2<F>,
    pub conv1_b: Array1<F>,
    pub conv2_w: Array2<F>,
    pub conv2_b: Array1<F>,
    pub fc1_w: Array2<F>,
    pub fc1_b: Array1<F>,
    pub fc2_w: Array2<F>,
    pub fc2_b: Array1<F>,
}

impl<F: Real> TensorSet<F> {
    pub fn zeros(arch: &Architecture) -> Self {
        TensorSet {
            conv1_w: Array2::zeros((arch.conv1_kernel, arch.conv1_filters)),
            conv1_b: Array1::zeros(arch.conv1_filters),
            conv2_w: Array2::zeros((
                arch.conv2_kernel * arch.conv1_filters,
                arch.conv2_filters,
            )),
            conv2_b: Array1::zeros(arch.conv2_filters),
            fc1_w: Array2::zeros((arch.flat_len(), arch.dense_units)),
            fc1_b: Array1::zeros(arch.dense_units),
            fc2_w: Array2::zeros((arch.dense_units, arch.output_bins)),
            fc2_b: Array1::zeros(arch.output_bins),
        }
    }

    /// Tensor data in declaration order. All arrays are standard layout by
    /// construction, so the slices always exist.
    pub fn fields(&self) -> [&[F]; 8] {
        [
            self.conv1_w.as_slice().unwrap(),
            self.conv1_b.as_slice().unwrap(),
            self.conv2_w.as_slice().unwrap(),
            self.conv2_b.as_slice().unwrap(),
            self.fc1_w.as_slice().unwrap(),
            self.fc1_b.as_slice().unwrap(),
            self.fc2_w.as_slice().unwrap(),
            self.fc2_b.as_slice().unwrap(),
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut [F]; 8] {
        [
            self.conv1_w.as_slice_mut().unwrap(),
            self.conv1_b.as_slice_mut().unwrap(),
            self.conv2_w.as_slice_mut().unwrap(),
            self.conv2_b.as_slice_mut().unwrap(),
            self.fc1_w.as_slice_mut().unwrap(),
            self.fc1_b.as_slice_mut().unwrap(),
            self.fc2_w.as_slice_mut().unwrap(),
            self.fc2_b.as_slice_mut().unwrap(),
        ]
    }

    /// Concatenation of every tensor in declaration order.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for f in self.fields() {
            out.extend_from_slice(f);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for the given architecture.
    pub fn unflatten(arch: &Architecture, flat: &[F]) -> Self {
        assert_eq!(flat.len(), arch.param_count(), "parameter vector length");
        let mut set = TensorSet::zeros(arch);
        let mut at = 0;
        for field in set.fields_mut() {
            field.copy_from_slice(&flat[at..at + field.len()]);
            at += field.len();
        }
        set
    }
}

/// Trainable model: geometry, the seed its weights were drawn from, and the
/// tensors themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub arch: Architecture,
    pub seed: u64,
    pub tensors: TensorSet<F>,
}

/// Glorot-uniform weights, zero biases. Values are drawn in f64 and then
/// cast, so the f32 and f64 instantiations of one seed agree exactly.
pub fn init_model<F: Real>(arch: &Architecture, seed: u64) -> Result<ModelParams<F>, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = TensorSet::zeros(arch);
    let bounds = [
        glorot_bound(arch.conv1_kernel, arch.conv1_kernel * arch.conv1_filters),
        0.0,
        glorot_bound(
            arch.conv2_kernel * arch.conv1_filters,
            arch.conv2_kernel * arch.conv2_filters,
        ),
        0.0,
        glorot_bound(arch.flat_len(), arch.dense_units),
        0.0,
        glorot_bound(arch.dense_units, arch.output_bins),
        0.0,
    ];
    for (field, bound) in tensors.fields_mut().into_iter().zip(bounds) {
        for w in field.iter_mut() {
            *w = r((2.0 * rng.random::<f64>() - 1.0) * bound);
        }
    }
    Ok(ModelParams { arch: *arch, seed, tensors })
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Multiplicative dropout mask: each unit is zeroed with probability
/// `arch.dropout` and survivors are scaled by 1/(1-dropout), so the
/// expected activation is unchanged and evaluation needs no rescaling.
pub fn sample_dropout_mask<F: Real>(
    arch: &Architecture,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<F> {
    let p = arch.dropout as f64;
    let keep_scale = r::<F>(1.0 / (1.0 - p));
    let mut mask = Array2::zeros((batch, arch.dense_units));
    for v in mask.iter_mut() {
        *v = if rng.random::<f64>() < p { F::zero() } else { keep_scale };
    }
    mask
}

/// Everything `backward` needs from the matching forward pass.
pub struct ForwardCache<F> {
    batch: usize,
    im2col1: Array2<F>,
    a1: Array2<F>,
    pool1_arg: Vec<u32>,
    im2col2: Array2<F>,
    a2: Array2<F>,
    pool2_arg: Vec<u32>,
    flat: Array2<F>,
    h: Array2<F>,
    h_drop: Array2<F>,
    pub probs: Array2<F>,
}

fn relu_inplace<F: Real>(a: &mut Array2<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Max over non-overlapping windows of `width` positions, channel by
/// channel. Returns the pooled position-major matrix and the winning
/// in-window offsets. Ties go to the earliest position.
fn maxpool<F: Real>(
    a: &Array2<F>,
    batch: usize,
    len: usize,
    channels: usize,
    width: usize,
) -> (Array2<F>, Vec<u32>) {
    let out_len = len / width;
    let mut pooled = Array2::zeros((batch, out_len * channels));
    let mut arg = vec![0u32; batch * out_len * channels];
    for b in 0..batch {
        for p in 0..out_len {
            for c in 0..channels {
                let base = b * len + p * width;
                let mut best = a[[base, c]];
                let mut best_j = 0u32;
                for j in 1..width {
                    let v = a[[base + j, c]];
                    if v > best {
                        best = v;
                        best_j = j as u32;
                    }
                }
                pooled[[b, p * channels + c]] = best;
                arg[(b * out_len + p) * channels + c] = best_j;
            }
        }
    }
    (pooled, arg)
}

/// Forward pass over a batch of raw (linear) feature rows. `dropout` of
/// `None` is evaluation mode; training passes the mask so that `backward`
/// and finite differences see the identical function.
pub fn forward<F: Real>(
    params: &ModelParams<F>,
    x: &Array2<F>,
    dropout: Option<&Array2<F>>,
) -> Result<(Array2<F>, ForwardCache<F>), ModelError> {
    let arch = &params.arch;
    if x.ncols() != arch.input_bins {
        return Err(ModelError::ShapeMismatch {
            expected: arch.input_bins,
            got: x.ncols(),
        });
    }
    let batch = x.nrows();
    let gain = r::<F>(arch.input_gain as f64);
    let compressed = x.mapv(|v| (gain * v).max(F::zero()).ln_1p());

    // Conv 1 as im2col: rows are sliding windows of the compressed frame.
    let (k1, l1, f1) = (arch.conv1_kernel, arch.conv1_out(), arch.conv1_filters);
    let mut im2col1 = Array2::zeros((batch * l1, k1));
    for b in 0..batch {
        let row = compressed.row(b);
        let row = row.as_slice().unwrap();
        for i in 0..l1 {
            im2col1
                .row_mut(b * l1 + i)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&row[i..i + k1]);
        }
    }
    let mut a1 = im2col1.dot(&params.tensors.conv1_w);
    a1 += &params.tensors.conv1_b;
    relu_inplace(&mut a1);

    let (pooled1, pool1_arg) = maxpool(&a1, batch, l1, f1, arch.pool_width);

    // Conv 2: pooled1 is position-major, so each im2col row is one
    // contiguous slice of a pooled row.
    let (k2, l2, f2) = (arch.conv2_kernel, arch.conv2_out(), arch.conv2_filters);
    let mut im2col2 = Array2::zeros((batch * l2, k2 * f1));
    for b in 0..batch {
        let row = pooled1.row(b);
        let row = row.as_slice().unwrap();
        for i in 0..l2 {
            im2col2
                .row_mut(b * l2 + i)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&row[i * f1..(i + k2) * f1]);
        }
    }
    let mut a2 = im2col2.dot(&params.tensors.conv2_w);
    a2 += &params.tensors.conv2_b;
    relu_inplace(&mut a2);

    // Second pool's position-major output is already the flattened vector.
    let (flat, pool2_arg) = maxpool(&a2, batch, l2, f2, arch.pool_width);

    let mut h = flat.dot(&params.tensors.fc1_w);
    h += &params.tensors.fc1_b;
    relu_inplace(&mut h);

    let h_drop = match dropout {
        Some(mask) => {
            assert_eq!(mask.dim(), h.dim(), "dropout mask shape");
            &h * mask
        }
        None => h.clone(),
    };

    let mut logits = h_drop.dot(&params.tensors.fc2_w);
    logits += &params.tensors.fc2_b;
    let probs = logits.mapv(|z| F::one() / (F::one() + (-z).exp()));

    Ok((
        probs.clone(),
        ForwardCache {
            batch,
            im2col1,
            a1,
            pool1_arg,
            im2col2,
            a2,
            pool2_arg,
            flat,
            h,
            h_drop,
            probs,
        },
    ))
}

/// Evaluation-mode probabilities only.
pub fn forward_eval<F: Real>(
    params: &ModelParams<F>,
    x: &Array2<F>,
) -> Result<Array2<F>, ModelError> {
    Ok(forward(params, x, None)?.0)
}

/// Mean binary cross-entropy over every entry, accumulated in f64.
/// Probabilities are clamped away from {0, 1} so the loss stays finite.
pub fn bce_loss<F: Real>(probs: &Array2<F>, labels: &Array2<F>) -> f64 {
    assert_eq!(probs.dim(), labels.dim(), "loss shape");
    let mut total = 0.0f64;
    for (&p, &y) in probs.iter().zip(labels.iter()) {
        let p = p.to_f64().unwrap().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = y.to_f64().unwrap();
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / probs.len() as f64
}

/// Exact gradient of [`bce_loss`] after the paired [`forward`], with
/// respect to every tensor. `dropout` must be the mask the forward saw.
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    cache: &ForwardCache<F>,
    labels: &Array2<F>,
    dropout: Option<&Array2<F>>,
) -> TensorSet<F> {
    let arch = &params.arch;
    assert_eq!(labels.dim(), cache.probs.dim(), "label shape");
    let batch = cache.batch;
    let n = (batch * arch.output_bins) as f64;

    // d loss / d logits. Entries the loss clamp flattened contribute zero.
    let mut d_logits = Array2::zeros(cache.probs.dim());
    for ((d, &p), &y) in d_logits.iter_mut().zip(cache.probs.iter()).zip(labels.iter()) {
        let p64 = p.to_f64().unwrap();
        if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p64) {
            *d = r::<F>((p64 - y.to_f64().unwrap()) / n);
        }
    }

    let mut grads = TensorSet::zeros(arch);
    grads.fc2_w = cache.h_drop.t().dot(&d_logits);
    grads.fc2_b = d_logits.sum_axis(Axis(0));
    let d_h_drop = d_logits.dot(&params.tensors.fc2_w.t());
    let mut d_h = match dropout {
        Some(mask) => &d_h_drop * mask,
        None => d_h_drop,
    };
    // ReLU backward; the kink at exactly zero is assigned slope 0.
    d_h.zip_mut_with(&cache.h, |d, &a| {
        if a <= F::zero() {
            *d = F::zero();
        }
    });

    grads.fc1_w = cache.flat.t().dot(&d_h);
    grads.fc1_b = d_h.sum_axis(Axis(0));
    let d_flat = d_h.dot(&params.tensors.fc1_w.t());

    // Unpool 2: route each pooled gradient to its winning position.
    let (l2, f2) = (arch.conv2_out(), arch.conv2_filters);
    let p2 = arch.pool2_out();
    let mut d_a2 = Array2::zeros((batch * l2, f2));
    for b in 0..batch {
        for p in 0..p2 {
            for c in 0..f2 {
                let j = cache.pool2_arg[(b * p2 + p) * f2 + c] as usize;
                d_a2[[b * l2 + p * arch.pool_width + j, c]] = d_flat[[b, p * f2 + c]];
            }
        }
    }
    d_a2.zip_mut_with(&cache.a2, |d, &a| {
        if a <= F::zero() {
            *d = F::zero();
        }
    });

    grads.conv2_w = cache.im2col2.t().dot(&d_a2);
    grads.conv2_b = d_a2.sum_axis(Axis(0));
    let d_im2col2 = d_a2.dot(&params.tensors.conv2_w.t());

    // Fold im2col rows back onto pooled positions (col2im).
    let (k2, f1) = (arch.conv2_kernel, arch.conv1_filters);
    let p1 = arch.pool1_out();
    let mut d_pooled1 = Array2::<F>::zeros((batch, p1 * f1));
    for b in 0..batch {
        let mut drow = d_pooled1.row_mut(b);
        let drow = drow.as_slice_mut().unwrap();
        for i in 0..l2 {
            let src = d_im2col2.row(i + b * l2);
            let src = src.as_slice().unwrap();
            for (dst, &s) in drow[i * f1..(i + k2) * f1].iter_mut().zip(src) {
                *dst = *dst + s;
            }
        }
    }

    // Unpool 1.
    let l1 = arch.conv1_out();
    let mut d_a1 = Array2::zeros((batch * l1, f1));
    for b in 0..batch {
        for p in 0..p1 {
            for c in 0..f1 {
                let j = cache.pool1_arg[(b * p1 + p) * f1 + c] as usize;
                d_a1[[b * l1 + p * arch.pool_width + j, c]] = d_pooled1[[b, p * f1 + c]];
            }
        }
    }
    d_a1.zip_mut_with(&cache.a1, |d, &a| {
        if a <= F::zero() {
            *d = F::zero();
        }
    });

    grads.conv1_w = cache.im2col1.t().dot(&d_a1);
    grads.conv1_b = d_a1.sum_axis(Axis(0));
    grads
}

/// Thresholded evaluation-mode predictions for a whole feature matrix,
/// activation iff probability strictly exceeds `threshold`.
pub fn predict<F: Real>(
    params: &ModelParams<F>,
    features: &CqtMatrix,
    threshold: f64,
) -> Result<LabelMatrix, ModelError> {
    let arch = &params.arch;
    if features.bins() != arch.input_bins {
        return Err(ModelError::ShapeMismatch {
            expected: arch.input_bins,
            got: features.bins(),
        });
    }
    let thr = r::<F>(threshold);
    let mut labels = LabelMatrix::zeros(features.frames(), arch.output_bins);
    // Bounded batches keep the im2col buffers small.
    let chunk = 256;
    let mut t0 = 0;
    while t0 < features.frames() {
        let t1 = (t0 + chunk).min(features.frames());
        let mut x = Array2::zeros((t1 - t0, arch.input_bins));
        for t in t0..t1 {
            for (k, &v) in features.row(t).iter().enumerate() {
                x[[t - t0, k]] = r::<F>(v as f64);
            }
        }
        let probs = forward_eval(params, &x)?;
        for t in t0..t1 {
            for k in 0..arch.output_bins {
                labels.set(t, k, probs[[t - t0, k]] > thr);
            }
        }
        t0 = t1;
    }
    Ok(labels)
}

/// Small geometry for derivative and trainability tests; 101 parameters.
#[cfg(test)]
pub(crate) fn tiny_arch() -> Architecture {
    Architecture {
        input_bins: 20,
        conv1_kernel: 5,
        conv1_filters: 2,
        conv2_kernel: 3,
        conv2_filters: 3,
        pool_width: 3,
        dense_units: 8,
        output_bins: 4,
        dropout: 0.25,
        input_gain: 1000.0,
    }
}

#[cfg(test)]
pub(crate) fn random_batch<F: Real>(
    arch: &Architecture,
    batch: usize,
    seed: u64,
) -> (Array2<F>, Array2<F>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((batch, arch.input_bins), || {
        r::<F>(rng.random::<f64>() * 0.02)
    });
    let y = Array2::from_shape_simple_fn((batch, arch.output_bins), || {
        r::<F>((rng.random::<f64>() < 0.2) as usize as f64)
    });
    (x, y)
}
