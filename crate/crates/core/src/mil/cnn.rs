//! Slice feature extractor: a fixed average-pool stem, 3×3 conv blocks
//! (conv, ReLU, 2×2 max-pool), a 1×1 projection to `D` channels with ReLU and
//! global average pooling. Forward passes keep what backprop needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MilError;
use crate::scalar::Real;

/// Layer layout of the feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Side of the square input slices.
    pub input_size: usize,
    /// Average-pooling factor applied before the first convolution.
    pub stem_pool: usize,
    /// Output channels of each 3×3 conv block.
    pub channels: Vec<usize>,
    /// Feature dimension D, the channel count of the final 1×1 projection.
    pub feature_dim: usize,
}

impl ArchSpec {
    /// Default desk-scale backbone: 8→16→32 conv blocks projected to D = 64.
    pub fn toy() -> Self {
        Self { input_size: 224, stem_pool: 8, channels: vec![8, 16, 32], feature_dim: 64 }
    }

    /// Same layout with the ResNet18-sized feature dimension D = 512.
    pub fn full_scale() -> Self {
        Self { feature_dim: 512, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<(), MilError> {
        let bad = |why: &str| Err(MilError::InvalidArch(why.to_string()));
        if self.feature_dim == 0 {
            return bad("feature dimension must be at least 1");
        }
        if self.stem_pool == 0 || self.input_size < self.stem_pool {
            return bad("stem pool must be between 1 and the input size");
        }
        if self.channels.iter().any(|&c| c == 0) {
            return bad("conv blocks need at least one channel");
        }
        if self.final_side() == 0 {
            return bad("input too small for the number of pooling stages");
        }
        Ok(())
    }

    pub fn stem_side(&self) -> usize {
        self.input_size / self.stem_pool
    }

    /// Spatial side of the last conv layer's activation maps.
    pub fn final_side(&self) -> usize {
        self.channels.iter().fold(self.stem_side(), |s, _| s / 2)
    }
}

/// One convolution layer; weights are `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn he_init<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(in_channels, out_channels, kernel);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        c.weights.iter_mut().for_each(|w| *w = T::lit(normal.sample(rng)));
        c
    }
}

/// Same-padded 3×3 (or 1×1) convolution of a `[in][h][w]` tensor.
pub fn conv2d_forward<T: Real>(conv: &Conv<T>, input: &[T], h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let k = conv.kernel;
    let pad = k / 2;
    let mut out = vec![T::zero(); conv.out_channels * plane];
    for co in 0..conv.out_channels {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = conv.bias[co]);
        for ci in 0..conv.in_channels {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = conv.weights[((co * conv.in_channels + ci) * k + ky) * k + kx];
                    let (y0, y1) = valid_range(h, ky, pad);
                    let (x0, x1) = valid_range(w, kx, pad);
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let src = &inp[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                        let dst = &mut o[y * w + x0..y * w + x1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows/cols whose tap `kk` lands inside the input.
#[inline]
fn valid_range(n: usize, kk: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kk);
    let hi = (n + pad).saturating_sub(kk).min(n);
    (lo, hi.max(lo))
}

/// Accumulates weight/bias gradients into `grad` and returns d(input) when asked.
fn conv2d_backward<T: Real>(
    conv: &Conv<T>,
    input: &[T],
    dout: &[T],
    h: usize,
    w: usize,
    grad: &mut Conv<T>,
    want_dinput: bool,
) -> Option<Vec<T>> {
    let plane = h * w;
    let k = conv.kernel;
    let pad = k / 2;
    let mut dinput = want_dinput.then(|| vec![T::zero(); conv.in_channels * plane]);
    for co in 0..conv.out_channels {
        let d = &dout[co * plane..(co + 1) * plane];
        grad.bias[co] += d.iter().copied().sum::<T>();
        for ci in 0..conv.in_channels {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * conv.in_channels + ci) * k + ky) * k + kx;
                    let wt = conv.weights[widx];
                    let (y0, y1) = valid_range(h, ky, pad);
                    let (x0, x1) = valid_range(w, kx, pad);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = y + ky - pad;
                        let s0 = sy * w + x0 + kx - pad;
                        let src = &inp[s0..s0 + (x1 - x0)];
                        let dd = &d[y * w + x0..y * w + x1];
                        for (&a, &b) in src.iter().zip(dd) {
                            acc += a * b;
                        }
                        if let Some(di) = dinput.as_mut() {
                            let dst = &mut di[ci * plane + s0..ci * plane + s0 + (x1 - x0)];
                            for (t, &b) in dst.iter_mut().zip(dd) {
                                *t += wt * b;
                            }
                        }
                    }
                    grad.weights[widx] += acc;
                }
            }
        }
    }
    dinput
}

fn relu_inplace<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

/// 2×2 stride-2 max pooling; returns pooled values and the flat argmax of each.
fn maxpool2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Average pooling of a single-channel f32 slice by an integer factor.
fn stem<T: Real>(slice: &[f32], size: usize, factor: usize) -> Vec<T> {
    let side = size / factor;
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0f64;
            for yy in 0..factor {
                let row = &slice[(y * factor + yy) * size + x * factor..(y * factor + yy) * size + (x + 1) * factor];
                acc += row.iter().map(|&v| v as f64).sum::<f64>();
            }
            out.push(T::lit(acc * norm));
        }
    }
    out
}

/// Activations kept from one slice's forward pass.
#[derive(Debug, Clone)]
pub struct SliceCache<T> {
    /// Input to each conv block (the first is the stem output).
    block_inputs: Vec<Vec<T>>,
    /// Post-ReLU activation of each block before pooling.
    block_acts: Vec<Vec<T>>,
    pool_argmax: Vec<Vec<u32>>,
    block_sides: Vec<usize>,
    /// Input to the 1×1 projection.
    proj_input: Vec<T>,
    /// Post-ReLU maps of the last conv layer, `[D][s][s]`.
    pub last_maps: Vec<T>,
    pub last_side: usize,
}

impl<T: Real> SliceCache<T> {
    /// Fingerprint of the piecewise-linear regime: which units are active and
    /// which input won each max-pool window.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for act in self.block_acts.iter().chain(std::iter::once(&self.last_maps)) {
            for chunk in act.chunks(64) {
                let bits = chunk.iter().enumerate().fold(0u64, |b, (i, &v)| b | (u64::from(v > T::zero()) << i));
                h.write_u64(bits);
            }
        }
        for arg in &self.pool_argmax {
            arg.iter().for_each(|&a| h.write_u32(a));
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    pub arch: ArchSpec,
    pub blocks: Vec<Conv<T>>,
    pub projection: Conv<T>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let mut blocks = Vec::new();
        let mut in_c = 1;
        for &c in &arch.channels {
            blocks.push(Conv::zeros(in_c, c, 3));
            in_c = c;
        }
        Self { arch: arch.clone(), blocks, projection: Conv::zeros(in_c, arch.feature_dim, 1) }
    }

    pub fn init<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Self {
        let mut blocks = Vec::new();
        let mut in_c = 1;
        for &c in &arch.channels {
            blocks.push(Conv::he_init(in_c, c, 3, rng));
            in_c = c;
        }
        Self { arch: arch.clone(), blocks, projection: Conv::he_init(in_c, arch.feature_dim, 1, rng) }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv<T>> {
        self.blocks.iter().chain(std::iter::once(&self.projection))
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv<T>> {
        self.blocks.iter_mut().chain(std::iter::once(&mut self.projection))
    }

    /// h = f(x) for one `size × size` slice, plus the cache for backprop.
    pub fn forward_slice(&self, slice: &[f32]) -> (Vec<T>, SliceCache<T>) {
        let arch = &self.arch;
        let mut side = arch.stem_side();
        let mut x: Vec<T> = stem(slice, arch.input_size, arch.stem_pool);
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_acts = Vec::with_capacity(self.blocks.len());
        let mut pool_argmax = Vec::with_capacity(self.blocks.len());
        let mut block_sides = Vec::with_capacity(self.blocks.len());
        for conv in &self.blocks {
            block_sides.push(side);
            let mut act = conv2d_forward(conv, &x, side, side);
            relu_inplace(&mut act);
            let (pooled, arg) = maxpool2(&act, conv.out_channels, side, side);
            block_inputs.push(std::mem::replace(&mut x, pooled));
            block_acts.push(act);
            pool_argmax.push(arg);
            side /= 2;
        }
        let mut maps = conv2d_forward(&self.projection, &x, side, side);
        relu_inplace(&mut maps);
        let plane = side * side;
        let inv = T::one() / T::lit(plane as f64);
        let h = (0..self.arch.feature_dim)
            .map(|d| maps[d * plane..(d + 1) * plane].iter().copied().sum::<T>() * inv)
            .collect();
        (h, SliceCache { block_inputs, block_acts, pool_argmax, block_sides, proj_input: x, last_maps: maps, last_side: side })
    }

    /// Backprop d(loss)/d(h) of one slice into the parameter gradients.
    pub fn backward_slice(&self, cache: &SliceCache<T>, dh: &[T], grad: &mut FeatureExtractor<T>) {
        let side = cache.last_side;
        let plane = side * side;
        let inv = T::one() / T::lit(plane as f64);
        let mut dmaps = vec![T::zero(); self.arch.feature_dim * plane];
        for d in 0..self.arch.feature_dim {
            let g = dh[d] * inv;
            for (dm, &a) in dmaps[d * plane..(d + 1) * plane].iter_mut().zip(&cache.last_maps[d * plane..]) {
                if a > T::zero() {
                    *dm = g;
                }
            }
        }
        let mut dx = conv2d_backward(
            &self.projection,
            &cache.proj_input,
            &dmaps,
            side,
            side,
            &mut grad.projection,
            !self.blocks.is_empty(),
        );
        for b in (0..self.blocks.len()).rev() {
            let conv = &self.blocks[b];
            let in_side = cache.block_sides[b];
            let act = &cache.block_acts[b];
            let mut dact = vec![T::zero(); act.len()];
            let dpooled = dx.take().expect("gradient flows into every block");
            for (&g, &i) in dpooled.iter().zip(&cache.pool_argmax[b]) {
                if act[i as usize] > T::zero() {
                    dact[i as usize] += g;
                }
            }
            dx = conv2d_backward(conv, &cache.block_inputs[b], &dact, in_side, in_side, &mut grad.blocks[b], b > 0);
        }
    }
}
