use super::{Classifier, Tensor4};

/// Identity feature extractor followed by the linear head: `z` is the
/// flattened input. Used where closed-form gradients are needed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    dim: usize,
    params: Vec<f32>,
}

impl LinearModel {
    /// `weights` is `dim x 2` row-major, followed by the two biases.
    pub fn new(dim: usize, params: Vec<f32>) -> Self {
        assert_eq!(params.len(), dim * 2 + 2, "linear model parameter count");
        Self { dim, params }
    }
}

impl Classifier for LinearModel {
    type Cache = ();

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, input: &Tensor4) -> (Vec<f32>, ()) {
        assert_eq!(input.sample_len(), self.dim, "linear model input size");
        (input.data.clone(), ())
    }

    fn extract_backward(&self, _cache: &(), _dz: &[f32], _grads: &mut [f32]) {}

    fn head_params(&self) -> (&[f32], &[f32]) {
        self.params.split_at(self.dim * 2)
    }

    fn head_offset(&self) -> usize {
        0
    }
}
