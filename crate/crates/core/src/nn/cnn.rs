use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gemm, Classifier, Tensor4};
use crate::seed::rng_from;

/// Three 3x3 conv blocks (conv, bias, ReLU), global average pooling and a
/// linear two-class head. The representation size is the last block's
/// channel count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub channels: [usize; 3],
    pub strides: [usize; 3],
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: [16, 32, 64],
            strides: [2, 2, 2],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayout {
    cin: usize,
    cout: usize,
    stride: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
pub struct SmallCnn {
    config: CnnConfig,
    layers: [ConvLayout; 3],
    head_off: usize,
    params: Vec<f32>,
}

pub struct ConvCache {
    in_shape: (usize, usize, usize, usize),
    cols: Vec<f32>,
    out: Tensor4,
}

pub struct CnnCache {
    convs: Vec<ConvCache>,
}

fn out_dim(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

impl Default for SmallCnn {
    fn default() -> Self {
        Self::new(CnnConfig::default(), 0)
    }
}

impl SmallCnn {
    pub fn new(config: CnnConfig, seed: u64) -> Self {
        let mut layers = [ConvLayout {
            cin: 0,
            cout: 0,
            stride: 1,
            w_off: 0,
            b_off: 0,
        }; 3];
        let mut off = 0;
        let mut cin = config.in_channels;
        for (l, layout) in layers.iter_mut().enumerate() {
            let cout = config.channels[l];
            *layout = ConvLayout {
                cin,
                cout,
                stride: config.strides[l],
                w_off: off,
                b_off: off + 9 * cin * cout,
            };
            off += 9 * cin * cout + cout;
            cin = cout;
        }
        let head_off = off;
        let d = config.channels[2];
        let mut params = vec![0.0f32; head_off + d * 2 + 2];

        let mut rng = rng_from(seed);
        for layout in &layers {
            let fan_in = 9 * layout.cin;
            let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
            for p in &mut params[layout.w_off..layout.b_off] {
                *p = dist.sample(&mut rng);
            }
        }
        let dist = Normal::new(0.0f32, (1.0 / d as f32).sqrt()).expect("valid std");
        for p in &mut params[head_off..head_off + d * 2] {
            *p = dist.sample(&mut rng);
        }
        Self {
            config,
            layers,
            head_off,
            params,
        }
    }

    pub fn from_params(config: CnnConfig, params: Vec<f32>) -> Option<Self> {
        let mut model = Self::new(config, 0);
        if model.params.len() != params.len() {
            return None;
        }
        model.params = params;
        Some(model)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    fn conv_forward(&self, l: usize, x: &Tensor4) -> ConvCache {
        let layer = self.layers[l];
        assert_eq!(x.c, layer.cin, "conv input channels");
        let (n, h, w, cin) = (x.n, x.h, x.w, x.c);
        let s = layer.stride;
        let (ho, wo) = (out_dim(h, s), out_dim(w, s));
        let k = 9 * cin;
        let m = n * ho * wo;
        let mut cols = vec![0.0f32; m * k];
        for ni in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((ni * ho + oy) * wo + ox) * k;
                    for ky in 0..3 {
                        let iy = (oy * s + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * s + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((ni * h + iy as usize) * w + ix as usize) * cin;
                            let dst = row + (ky * 3 + kx) * cin;
                            cols[dst..dst + cin].copy_from_slice(&x.data[src..src + cin]);
                        }
                    }
                }
            }
        }
        let cout = layer.cout;
        let bias = &self.params[layer.b_off..layer.b_off + cout];
        let mut out = Tensor4::zeros(n, ho, wo, cout);
        for row in out.data.chunks_exact_mut(cout) {
            row.copy_from_slice(bias);
        }
        let weights = &self.params[layer.w_off..layer.b_off];
        gemm(m, k, cout, &cols, false, weights, false, 1.0, &mut out.data);
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        ConvCache {
            in_shape: (n, h, w, cin),
            cols,
            out,
        }
    }

    /// `dout` is the gradient w.r.t. the post-ReLU output; it is masked in
    /// place. Returns the input gradient when requested.
    fn conv_backward(
        &self,
        l: usize,
        cache: &ConvCache,
        dout: &mut [f32],
        grads: &mut [f32],
        need_input: bool,
    ) -> Option<Vec<f32>> {
        let layer = self.layers[l];
        let cout = layer.cout;
        for (g, &o) in dout.iter_mut().zip(&cache.out.data) {
            if o <= 0.0 {
                *g = 0.0;
            }
        }
        let (n, h, w, cin) = cache.in_shape;
        let k = 9 * cin;
        let m = dout.len() / cout;
        gemm(
            k,
            m,
            cout,
            &cache.cols,
            true,
            dout,
            false,
            1.0,
            &mut grads[layer.w_off..layer.b_off],
        );
        let db = &mut grads[layer.b_off..layer.b_off + cout];
        for row in dout.chunks_exact(cout) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        if !need_input {
            return None;
        }
        let weights = &self.params[layer.w_off..layer.b_off];
        let mut dcols = vec![0.0f32; m * k];
        gemm(m, cout, k, dout, false, weights, true, 0.0, &mut dcols);
        let s = layer.stride;
        let (ho, wo) = (cache.out.h, cache.out.w);
        let mut dinput = vec![0.0f32; n * h * w * cin];
        for ni in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((ni * ho + oy) * wo + ox) * k;
                    for ky in 0..3 {
                        let iy = (oy * s + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * s + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((ni * h + iy as usize) * w + ix as usize) * cin;
                            let src = row + (ky * 3 + kx) * cin;
                            for c in 0..cin {
                                dinput[dst + c] += dcols[src + c];
                            }
                        }
                    }
                }
            }
        }
        Some(dinput)
    }

    /// Post-ReLU output of conv block `block` (0-based).
    pub fn block_activations(&self, input: &Tensor4, block: usize) -> Tensor4 {
        assert!(block < 3, "the network has three blocks");
        let mut x = self.conv_forward(0, input).out;
        for l in 1..=block {
            x = self.conv_forward(l, &x).out;
        }
        x
    }

    pub fn num_blocks(&self) -> usize {
        3
    }
}

impl Classifier for SmallCnn {
    type Cache = CnnCache;

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn feature_dim(&self) -> usize {
        self.config.channels[2]
    }

    fn extract(&self, input: &Tensor4) -> (Vec<f32>, CnnCache) {
        let c1 = self.conv_forward(0, input);
        let c2 = self.conv_forward(1, &c1.out);
        let c3 = self.conv_forward(2, &c2.out);
        let last = &c3.out;
        let d = last.c;
        let hw = last.h * last.w;
        let inv = 1.0 / hw as f32;
        let mut z = vec![0.0f32; last.n * d];
        for i in 0..last.n {
            let zi = &mut z[i * d..(i + 1) * d];
            for row in last.sample(i).chunks_exact(d) {
                for (a, v) in zi.iter_mut().zip(row) {
                    *a += v;
                }
            }
            for a in zi.iter_mut() {
                *a *= inv;
            }
        }
        (
            z,
            CnnCache {
                convs: vec![c1, c2, c3],
            },
        )
    }

    fn extract_backward(&self, cache: &CnnCache, dz: &[f32], grads: &mut [f32]) {
        let last = &cache.convs[2].out;
        let d = last.c;
        let hw = last.h * last.w;
        let inv = 1.0 / hw as f32;
        let mut dact = vec![0.0f32; last.data.len()];
        for i in 0..last.n {
            let g = &dz[i * d..(i + 1) * d];
            for row in dact[i * hw * d..(i + 1) * hw * d].chunks_exact_mut(d) {
                for (r, v) in row.iter_mut().zip(g) {
                    *r = v * inv;
                }
            }
        }
        let mut d2 = self
            .conv_backward(2, &cache.convs[2], &mut dact, grads, true)
            .expect("input gradient requested");
        let mut d1 = self
            .conv_backward(1, &cache.convs[1], &mut d2, grads, true)
            .expect("input gradient requested");
        self.conv_backward(0, &cache.convs[0], &mut d1, grads, false);
    }

    fn head_params(&self) -> (&[f32], &[f32]) {
        let d = self.feature_dim();
        let w = &self.params[self.head_off..self.head_off + d * 2];
        let b = &self.params[self.head_off + d * 2..self.head_off + d * 2 + 2];
        (w, b)
    }

    fn head_offset(&self) -> usize {
        self.head_off
    }
}
