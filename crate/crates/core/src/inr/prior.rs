//! Residual-dense convolutional encoder that turns the b=0 image into a
//! per-pixel feature map.
//!
//! Layout: a 3x3 shallow convolution to `channels` maps, `blocks` dense blocks
//! (each `layers_per_block` 3x3 convolutions of `growth` maps over the running
//! concatenation, a 1x1 fusion back to `channels` and a local residual), then a
//! 1x1 global fusion of all block outputs plus a global residual from the
//! shallow features. Tensors are channel-major (`C x H x W`).

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Image2D;
use crate::numerics::ops::gemm;
use crate::numerics::{Activation, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Reflect,
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// When false the feature map is identically zero.
    pub enabled: bool,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth: usize,
    pub channels: usize,
    pub padding: Padding,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { enabled: true, blocks: 3, layers_per_block: 2, growth: 8, channels: 16, padding: Padding::Reflect }
    }
}

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self { channels, width, height, data: vec![0.0; channels * width * height] }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl ConvSpec {
    fn push(layout: &mut Layout, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        let weight = layout.push(alloc::format!("{name}.weight"), c_out * c_in * kernel * kernel, true);
        let bias = layout.push(alloc::format!("{name}.bias"), c_out, true);
        Self { c_in, c_out, kernel, weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSpec {
    pub convs: Vec<ConvSpec>,
    pub fuse: ConvSpec,
}

/// Parameter map of the encoder, relative to the start of its segment run.
#[derive(Debug, Clone)]
pub(crate) struct PriorNet {
    pub config: PriorConfig,
    pub shallow: ConvSpec,
    pub blocks: Vec<BlockSpec>,
    pub global_fuse: ConvSpec,
}

impl PriorNet {
    /// Appends the encoder segments (prefixed `prior.`) to `layout`. Returned
    /// ranges are absolute within `layout`.
    pub fn push_layout(layout: &mut Layout, config: PriorConfig) -> Self {
        let c = config.channels;
        let g = config.growth;
        let shallow = ConvSpec::push(layout, "prior.shallow", 1, c, 3);
        let blocks = (0..config.blocks)
            .map(|d| {
                let convs = (0..config.layers_per_block)
                    .map(|l| ConvSpec::push(layout, &alloc::format!("prior.block{d}.conv{l}"), c + l * g, g, 3))
                    .collect();
                let fuse =
                    ConvSpec::push(layout, &alloc::format!("prior.block{d}.fuse"), c + config.layers_per_block * g, c, 1);
                BlockSpec { convs, fuse }
            })
            .collect();
        let global_fuse = ConvSpec::push(layout, "prior.fuse", config.blocks * c, c, 1);
        Self { config, shallow, blocks, global_fuse }
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        core::iter::once(&self.shallow)
            .chain(self.blocks.iter().flat_map(|b| b.convs.iter().chain(core::iter::once(&b.fuse))))
            .chain(core::iter::once(&self.global_fuse))
    }

    /// Fan-in scaled uniform initialisation of every encoder parameter.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for conv in self.convs() {
            let bound = 1.0 / (conv.fan_in() as f64).sqrt();
            for v in &mut params[conv.weight.start..conv.bias.end] {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }

    fn max_cols(&self) -> usize {
        self.convs().filter(|c| c.kernel == 3).map(|c| c.fan_in()).max().unwrap_or(0)
    }
}

/// Source pixel of each 3x3 tap for every output pixel (`9 x P`).
fn neighbour_map(width: usize, height: usize, padding: Padding) -> Result<Vec<u32>> {
    if padding == Padding::Reflect && (width < 2 || height < 2) {
        return Err(Error::InvalidArgument("reflect padding needs at least 2 pixels per axis"));
    }
    let wrap = |i: isize, n: usize| -> usize {
        let n = n as isize;
        match padding {
            Padding::Circular => i.rem_euclid(n) as usize,
            Padding::Reflect => {
                if i < 0 {
                    (-i) as usize
                } else if i >= n {
                    (2 * (n - 1) - i) as usize
                } else {
                    i as usize
                }
            }
        }
    };
    let p = width * height;
    let mut map = vec![0u32; 9 * p];
    for k in 0..9 {
        let (dy, dx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
        for y in 0..height {
            for x in 0..width {
                let sx = wrap(x as isize + dx, width);
                let sy = wrap(y as isize + dy, height);
                map[k * p + y * width + x] = (sy * width + sx) as u32;
            }
        }
    }
    Ok(map)
}

/// Intermediate tensors kept for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct PriorCache {
    input: Vec<f64>,
    /// Per block: block input followed by each layer's activations.
    dense: Vec<Vec<f64>>,
    /// Per block: activation derivatives of each layer, concatenated.
    derivs: Vec<Vec<f64>>,
    /// Block outputs, concatenated along channels.
    outputs: Vec<f64>,
}

/// Encoder bound to one image size.
#[derive(Debug, Clone)]
pub(crate) struct PriorEval {
    pub net: PriorNet,
    /// Start of the encoder segments in the full parameter vector.
    pub offset: usize,
    width: usize,
    height: usize,
    neighbours: Vec<u32>,
    activation: Activation,
}

impl PriorEval {
    pub fn new(net: PriorNet, offset: usize, width: usize, height: usize, activation: Activation) -> Result<Self> {
        let neighbours = neighbour_map(width, height, net.config.padding)?;
        Ok(Self { net, offset, width, height, neighbours, activation })
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn im2col(&self, input: &[f64], c_in: usize, cols: &mut [f64]) {
        let p = self.pixels();
        for ci in 0..c_in {
            let channel = &input[ci * p..(ci + 1) * p];
            for k in 0..9 {
                let row = &mut cols[(ci * 9 + k) * p..(ci * 9 + k + 1) * p];
                let map = &self.neighbours[k * p..(k + 1) * p];
                for (dst, &src) in row.iter_mut().zip(map) {
                    *dst = channel[src as usize];
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], c_in: usize, out: &mut [f64]) {
        let p = self.pixels();
        for ci in 0..c_in {
            let channel = &mut out[ci * p..(ci + 1) * p];
            for k in 0..9 {
                let row = &cols[(ci * 9 + k) * p..(ci * 9 + k + 1) * p];
                let map = &self.neighbours[k * p..(k + 1) * p];
                for (&v, &src) in row.iter().zip(map) {
                    channel[src as usize] += v;
                }
            }
        }
    }

    /// `out = conv(input) + bias`; `out` is overwritten.
    fn conv_forward(&self, params: &[f64], spec: &ConvSpec, input: &[f64], out: &mut [f64], cols: &mut [f64]) {
        let p = self.pixels();
        let w = &params[spec.weight.clone()];
        let b = &params[spec.bias.clone()];
        for (o, row) in out.chunks_exact_mut(p).enumerate().take(spec.c_out) {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        let k = spec.fan_in();
        if spec.kernel == 3 {
            self.im2col(input, spec.c_in, cols);
            gemm(spec.c_out, k, p, 1.0, w, (k, 1), &cols[..k * p], (p, 1), 1.0, out, (p, 1));
        } else {
            gemm(spec.c_out, k, p, 1.0, w, (k, 1), input, (p, 1), 1.0, out, (p, 1));
        }
    }

    /// Accumulates parameter gradients and adds the input gradient to `d_input`.
    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        params: &[f64],
        spec: &ConvSpec,
        input: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut [f64]>,
        cols: &mut [f64],
        d_cols: &mut [f64],
    ) {
        let p = self.pixels();
        let k = spec.fan_in();
        let w = &params[spec.weight.clone()];
        for (o, row) in d_out.chunks_exact(p).enumerate() {
            grad[spec.bias.start + o] += row.iter().sum::<f64>();
        }
        let dw = &mut grad[spec.weight.clone()];
        if spec.kernel == 3 {
            self.im2col(input, spec.c_in, cols);
            gemm(spec.c_out, p, k, 1.0, d_out, (p, 1), &cols[..k * p], (1, p), 1.0, dw, (k, 1));
            if let Some(d_input) = d_input {
                gemm(k, spec.c_out, p, 1.0, w, (1, k), d_out, (p, 1), 0.0, &mut d_cols[..k * p], (p, 1));
                self.col2im_add(&d_cols[..k * p], spec.c_in, d_input);
            }
        } else {
            gemm(spec.c_out, p, k, 1.0, d_out, (p, 1), input, (1, p), 1.0, dw, (k, 1));
            if let Some(d_input) = d_input {
                gemm(k, spec.c_out, p, 1.0, w, (1, k), d_out, (p, 1), 1.0, d_input, (p, 1));
            }
        }
    }

    /// Feature map (`channels x P`) of `image`; `params` is the full parameter vector.
    pub fn forward(&self, params: &[f64], image: &[f64]) -> (Vec<f64>, PriorCache) {
        let params = &params[self.offset..];
        let p = self.pixels();
        let cfg = &self.net.config;
        let (c, g) = (cfg.channels, cfg.growth);
        let mut cols = vec![0.0; self.net.max_cols() * p];

        let mut shallow = vec![0.0; c * p];
        self.conv_forward(params, &self.net.shallow, image, &mut shallow, &mut cols);

        let mut dense = Vec::with_capacity(cfg.blocks);
        let mut derivs = Vec::with_capacity(cfg.blocks);
        let mut outputs = vec![0.0; cfg.blocks * c * p];
        let mut z = vec![0.0; g * p];
        for (d, block) in self.net.blocks.iter().enumerate() {
            let block_in: &[f64] = if d == 0 { &shallow } else { &outputs[(d - 1) * c * p..d * c * p] };
            let mut buf = vec![0.0; (c + cfg.layers_per_block * g) * p];
            buf[..c * p].copy_from_slice(block_in);
            let mut deriv = vec![0.0; cfg.layers_per_block * g * p];
            for (l, conv) in block.convs.iter().enumerate() {
                let (head, tail) = buf.split_at_mut((c + l * g) * p);
                self.conv_forward(params, conv, head, &mut z, &mut cols);
                self.activation.apply(&z, &mut tail[..g * p], &mut deriv[l * g * p..(l + 1) * g * p]);
            }
            let out = &mut outputs[d * c * p..(d + 1) * c * p];
            self.conv_forward(params, &block.fuse, &buf, out, &mut cols);
            for (o, &x) in out.iter_mut().zip(&buf[..c * p]) {
                *o += x;
            }
            dense.push(buf);
            derivs.push(deriv);
        }

        let mut features = vec![0.0; c * p];
        self.conv_forward(params, &self.net.global_fuse, &outputs, &mut features, &mut cols);
        for (f, &s) in features.iter_mut().zip(&shallow) {
            *f += s;
        }
        let cache = PriorCache { input: image.to_vec(), dense, derivs, outputs };
        (features, cache)
    }

    /// Reverse pass from the feature-map gradient into `grad` (full parameter vector).
    pub fn backward(&self, params: &[f64], cache: &PriorCache, d_features: &[f64], grad: &mut [f64]) {
        let params = &params[self.offset..];
        let grad = &mut grad[self.offset..];
        let p = self.pixels();
        let cfg = &self.net.config;
        let (c, g, blocks) = (cfg.channels, cfg.growth, cfg.blocks);
        let mut cols = vec![0.0; self.net.max_cols() * p];
        let mut d_cols = vec![0.0; self.net.max_cols() * p];

        let mut d_shallow = d_features.to_vec();
        let mut d_outputs = vec![0.0; blocks * c * p];
        self.conv_backward(
            params,
            &self.net.global_fuse,
            &cache.outputs,
            d_features,
            grad,
            Some(&mut d_outputs),
            &mut cols,
            &mut d_cols,
        );

        let mut dz = vec![0.0; g * p];
        for d in (0..blocks).rev() {
            let block = &self.net.blocks[d];
            let buf = &cache.dense[d];
            let deriv = &cache.derivs[d];
            let d_out = d_outputs[d * c * p..(d + 1) * c * p].to_vec();
            let mut d_buf = vec![0.0; buf.len()];
            // local residual
            d_buf[..c * p].copy_from_slice(&d_out);
            self.conv_backward(params, &block.fuse, buf, &d_out, grad, Some(&mut d_buf), &mut cols, &mut d_cols);
            for l in (0..cfg.layers_per_block).rev() {
                let start = (c + l * g) * p;
                for ((dz, &da), &dv) in dz.iter_mut().zip(&d_buf[start..start + g * p]).zip(&deriv[l * g * p..]) {
                    *dz = da * dv;
                }
                let (d_head, _) = d_buf.split_at_mut(start);
                self.conv_backward(
                    params,
                    &block.convs[l],
                    &buf[..start],
                    &dz,
                    grad,
                    Some(d_head),
                    &mut cols,
                    &mut d_cols,
                );
            }
            let target: &mut [f64] =
                if d == 0 { &mut d_shallow } else { &mut d_outputs[(d - 1) * c * p..d * c * p] };
            for (t, v) in target.iter_mut().zip(&d_buf[..c * p]) {
                *t += v;
            }
        }
        self.conv_backward(params, &self.net.shallow, &cache.input, &d_shallow, grad, None, &mut cols, &mut d_cols);
    }
}

/// Standalone encoder: configuration plus its own weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEncoder {
    pub config: PriorConfig,
    pub weights: Vec<f64>,
}

impl PriorEncoder {
    pub fn new<R: Rng + ?Sized>(config: PriorConfig, rng: &mut R) -> Self {
        let mut layout = Layout::new();
        let net = PriorNet::push_layout(&mut layout, config);
        let mut weights = vec![0.0; layout.len()];
        net.init(&mut weights, rng);
        Self { config, weights }
    }

    pub fn parameter_count(config: PriorConfig) -> usize {
        let mut layout = Layout::new();
        PriorNet::push_layout(&mut layout, config);
        layout.len()
    }
}

/// Feature map of the b=0 image; all zeros when the encoder is disabled.
pub fn encode_prior(b0: &Image2D, enc: &PriorEncoder, activation: Activation) -> Result<FeatureMap> {
    let c = enc.config.channels;
    if !enc.config.enabled {
        return Ok(FeatureMap::zeros(c, b0.width, b0.height));
    }
    if let Some(index) = b0.pixels.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { segment: "prior image".into(), index });
    }
    let mut layout = Layout::new();
    let net = PriorNet::push_layout(&mut layout, enc.config);
    if layout.len() != enc.weights.len() {
        return Err(Error::ShapeMismatch { expected: layout.len(), actual: enc.weights.len() });
    }
    let eval = PriorEval::new(net, 0, b0.width, b0.height, activation)?;
    let (data, _) = eval.forward(&enc.weights, &b0.pixels);
    Ok(FeatureMap { channels: c, width: b0.width, height: b0.height, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(padding: Padding, enabled: bool) -> PriorEncoder {
        let config = PriorConfig { padding, enabled, ..PriorConfig::default() };
        PriorEncoder::new(config, &mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn disabled_encoder_returns_zeros() {
        let b0 = Image2D::from_fn(12, 10, |x, y| (x * y) as f64);
        let f = encode_prior(&b0, &encoder(Padding::Reflect, false), Activation::Gelu).unwrap();
        assert_eq!((f.channels, f.width, f.height), (16, 12, 10));
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_image_gives_spatially_constant_features() {
        let b0 = Image2D::zeros(9, 7);
        let f = encode_prior(&b0, &encoder(Padding::Reflect, true), Activation::Gelu).unwrap();
        for c in 0..f.channels {
            let ch = f.channel(c);
            assert!(ch.iter().all(|&v| v == ch[0]), "channel {c} varies");
        }
        assert!(f.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn circular_padding_is_shift_equivariant() {
        let (w, h) = (10, 8);
        let b0 = Image2D::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 5) as f64 * 0.3 + (y as f64).sin());
        let shifted = Image2D::from_fn(w, h, |x, y| b0.get((x + w - 1) % w, y));
        let enc = encoder(Padding::Circular, true);
        let f = encode_prior(&b0, &enc, Activation::Gelu).unwrap();
        let fs = encode_prior(&shifted, &enc, Activation::Gelu).unwrap();
        for c in 0..f.channels {
            for y in 0..h {
                for x in 0..w {
                    assert!((fs.at(c, x, y) - f.at(c, (x + w - 1) % w, y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_matches_input_size() {
        let b0 = Image2D::from_fn(16, 24, |x, _| x as f64);
        let f = encode_prior(&b0, &encoder(Padding::Reflect, true), Activation::Gelu).unwrap();
        assert_eq!(f.data.len(), 16 * 16 * 24);
    }
}
