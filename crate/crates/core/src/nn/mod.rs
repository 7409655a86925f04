//! Minimal CPU neural-network substrate: NHWC tensors, a small convolutional
//! classifier with hand-written backward passes, a linear probe used in
//! tests, SGD with momentum and the on-disk parameter container.

mod cnn;
mod container;
mod linear;
mod optim;

pub use cnn::{CnnConfig, SmallCnn};
pub use container::{load_model, save_model, ModelHeader};
pub use linear::LinearModel;
pub use optim::Sgd;

use image::RgbImage;

/// Dense NHWC batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Stacks equally shaped single samples (each `h * w * c` long).
    pub fn stack<'a>(h: usize, w: usize, c: usize, samples: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            assert_eq!(s.len(), h * w * c, "sample shape mismatch");
            data.extend_from_slice(s);
            n += 1;
        }
        Self { n, h, w, c, data }
    }
}

/// Pixel value mapping used for every model input.
pub fn normalize_pixel(v: u8) -> f32 {
    f32::from(v) / 255.0 - 0.5
}

/// HWC float encoding of an RGB image.
pub fn image_to_input(img: &RgbImage) -> Vec<f32> {
    img.as_raw().iter().map(|&v| normalize_pixel(v)).collect()
}

/// Common interface of the classifiers trained here: a feature extractor
/// producing a representation `z` of `feature_dim()` values per sample and a
/// linear head producing two logits. All parameters live in one flat vector.
pub trait Classifier: Clone + Send + Sync {
    type Cache;

    fn params(&self) -> &[f32];
    fn params_mut(&mut self) -> &mut [f32];
    fn feature_dim(&self) -> usize;

    /// Representation `z` (`n x feature_dim`, row-major) plus whatever the
    /// backward pass needs.
    fn extract(&self, input: &Tensor4) -> (Vec<f32>, Self::Cache);

    /// Accumulates extractor parameter gradients given `dL/dz`.
    fn extract_backward(&self, cache: &Self::Cache, dz: &[f32], grads: &mut [f32]);

    /// Head weights (`feature_dim x 2`, row-major) and biases (2).
    fn head_params(&self) -> (&[f32], &[f32]);

    /// Offset of the head weights inside the flat parameter vector; the two
    /// biases follow immediately.
    fn head_offset(&self) -> usize;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn head(&self, z: &[f32], n: usize) -> Vec<f32> {
        let d = self.feature_dim();
        let (w, b) = self.head_params();
        let mut logits = Vec::with_capacity(n * 2);
        for i in 0..n {
            let zi = &z[i * d..(i + 1) * d];
            for k in 0..2 {
                let mut acc = b[k];
                for j in 0..d {
                    acc += zi[j] * w[j * 2 + k];
                }
                logits.push(acc);
            }
        }
        logits
    }

    /// Head gradients are accumulated into `grads`; returns `dL/dz`.
    fn head_backward(&self, z: &[f32], dlogits: &[f32], n: usize, grads: &mut [f32]) -> Vec<f32> {
        let d = self.feature_dim();
        let off = self.head_offset();
        let (w, _) = self.head_params();
        let mut dz = vec![0.0f32; n * d];
        for i in 0..n {
            let zi = &z[i * d..(i + 1) * d];
            let gi = &dlogits[i * 2..i * 2 + 2];
            for j in 0..d {
                grads[off + j * 2] += zi[j] * gi[0];
                grads[off + j * 2 + 1] += zi[j] * gi[1];
                dz[i * d + j] = w[j * 2] * gi[0] + w[j * 2 + 1] * gi[1];
            }
            grads[off + d * 2] += gi[0];
            grads[off + d * 2 + 1] += gi[1];
        }
        dz
    }

    /// Gradient of the logit of `class` with respect to one sample's `z`.
    fn score_grad_z(&self, _z: &[f32], class: usize) -> Vec<f32> {
        let (w, _) = self.head_params();
        (0..self.feature_dim()).map(|j| w[j * 2 + class]).collect()
    }

    fn forward(&self, input: &Tensor4) -> Vec<f32> {
        let (z, _) = self.extract(input);
        self.head(&z, input.n)
    }

    /// Logits from `z` multiplied elementwise by `mask` (same shape as `z`).
    fn masked_forward(&self, z: &[f32], mask: &[f32], n: usize) -> Vec<f32> {
        let zm: Vec<f32> = z.iter().zip(mask).map(|(a, m)| a * m).collect();
        self.head(&zm, n)
    }
}

/// `C = A * B + beta * C` with optional transposes; all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too small"
    );
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe matrices fully inside the asserted slice lengths.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable two-class log-softmax cross-entropy and its gradient
/// with respect to the logits.
pub fn cross_entropy(logits: &[f32], label: usize) -> (f32, [f32; 2]) {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let sum = e0 + e1;
    let lse = m + sum.ln();
    let p = [e0 / sum, e1 / sum];
    let loss = lse - logits[label];
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}

/// Probability of class 1 from two logits.
pub fn positive_probability(logits: &[f32]) -> f32 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}
