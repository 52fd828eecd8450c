//! Coordinate network conditioned on a b=0 structural prior (concatenated
//! features) and on the diffusion direction (feature-wise affine modulation).

mod embed;
mod engine;
mod prior;

pub use embed::{fourier_embed, FourierEmbedding};
pub use engine::{DirectionPass, FilmOutput, GridEvaluator, SpatialPass};
pub use prior::{encode_prior, FeatureMap, Padding, PriorConfig, PriorEncoder};

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{check_unit, Image2D};
use crate::numerics::{Activation, Layout, ParamVector};
use crate::tensor::Vec3;
use prior::PriorNet;

/// Architecture and initialisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InrConfig {
    pub spatial_frequencies: usize,
    pub spatial_sigma: f64,
    pub angular_frequencies: usize,
    pub angular_sigma: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub film_hidden: usize,
    pub prior: PriorConfig,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for InrConfig {
    fn default() -> Self {
        Self {
            spatial_frequencies: 64,
            spatial_sigma: 8.0,
            angular_frequencies: 16,
            angular_sigma: 0.25,
            hidden_layers: 4,
            hidden_width: 64,
            film_hidden: 32,
            prior: PriorConfig::default(),
            activation: Activation::Gelu,
            seed: 0,
        }
    }
}

impl InrConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.spatial_frequencies,
            self.angular_frequencies,
            self.hidden_layers,
            self.hidden_width,
            self.film_hidden,
            self.prior.channels,
            self.prior.blocks,
        ];
        if positive.iter().any(|&v| v == 0) {
            return Err(Error::InvalidArgument("network dimensions must be positive"));
        }
        if !(self.spatial_sigma > 0.0 && self.angular_sigma > 0.0) {
            return Err(Error::InvalidArgument("embedding scales must be positive"));
        }
        Ok(())
    }

    /// Trunk input width: spatial embedding plus prior channels.
    pub fn trunk_input(&self) -> usize {
        2 * self.spatial_frequencies + self.prior.channels
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl DenseSpec {
    fn push(layout: &mut Layout, name: &str, n_in: usize, n_out: usize) -> Self {
        let weight = layout.push(alloc::format!("{name}.weight"), n_in * n_out, true);
        let bias = layout.push(alloc::format!("{name}.bias"), n_out, true);
        Self { n_in, n_out, weight, bias }
    }
}

/// Where every network component lives in the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct ParamMap {
    pub spatial_embed: Range<usize>,
    pub angular_embed: Range<usize>,
    pub prior: PriorNet,
    pub prior_range: Range<usize>,
    /// Hidden and output layer of the scale generator.
    pub film_alpha: [DenseSpec; 2],
    pub film_beta: [DenseSpec; 2],
    /// Hidden layers followed by the scalar output layer.
    pub trunk: Vec<DenseSpec>,
}

impl ParamMap {
    pub fn build(cfg: &InrConfig) -> (Layout, Self) {
        let mut layout = Layout::new();
        let spatial_embed = layout.push("embed.spatial", cfg.spatial_frequencies * 2, false);
        let angular_embed = layout.push("embed.angular", cfg.angular_frequencies * 3, false);
        let prior_start = layout.len();
        let prior = PriorNet::push_layout(&mut layout, cfg.prior);
        let prior_range = prior_start..layout.len();
        let film_in = 2 * cfg.angular_frequencies;
        let film_out = cfg.hidden_layers * cfg.hidden_width;
        let film_alpha = [
            DenseSpec::push(&mut layout, "film.alpha.0", film_in, cfg.film_hidden),
            DenseSpec::push(&mut layout, "film.alpha.1", cfg.film_hidden, film_out),
        ];
        let film_beta = [
            DenseSpec::push(&mut layout, "film.beta.0", film_in, cfg.film_hidden),
            DenseSpec::push(&mut layout, "film.beta.1", cfg.film_hidden, film_out),
        ];
        let mut trunk = Vec::with_capacity(cfg.hidden_layers + 1);
        let mut n_in = cfg.trunk_input();
        for l in 0..cfg.hidden_layers {
            trunk.push(DenseSpec::push(&mut layout, &alloc::format!("trunk.{l}"), n_in, cfg.hidden_width));
            n_in = cfg.hidden_width;
        }
        trunk.push(DenseSpec::push(&mut layout, &alloc::format!("trunk.{}", cfg.hidden_layers), n_in, 1));
        let map = Self { spatial_embed, angular_embed, prior, prior_range, film_alpha, film_beta, trunk };
        (layout, map)
    }
}

/// All network parameters together with the b=0 image they are conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct InrModel {
    config: InrConfig,
    params: ParamVector,
    prior_image: Image2D,
}

impl InrModel {
    /// Randomly initialised model; the modulation generators start at the
    /// identity (`alpha = 1`, `beta = 0`).
    pub fn new(config: InrConfig, prior_image: Image2D) -> Result<Self> {
        config.validate()?;
        let (layout, map) = ParamMap::build(&config);
        let mut values = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let spatial = FourierEmbedding::sample(config.spatial_frequencies, 2, config.spatial_sigma, &mut rng)?;
        values[map.spatial_embed.clone()].copy_from_slice(&spatial.matrix);
        let angular = FourierEmbedding::sample(config.angular_frequencies, 3, config.angular_sigma, &mut rng)?;
        values[map.angular_embed.clone()].copy_from_slice(&angular.matrix);

        map.prior.init(&mut values, &mut rng);
        let mut uniform = |values: &mut [f64], spec: &DenseSpec, scale: f64| {
            let bound = scale / (spec.n_in as f64).sqrt();
            for v in &mut values[spec.weight.start..spec.bias.end] {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        uniform(&mut values, &map.film_alpha[0], 1.0);
        uniform(&mut values, &map.film_beta[0], 1.0);
        for spec in &map.trunk {
            uniform(&mut values, spec, 1.0);
        }
        Self::from_params(config, prior_image, values)
    }

    /// Model with explicit parameter values (e.g. restored from a checkpoint).
    pub fn from_params(config: InrConfig, prior_image: Image2D, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, _) = ParamMap::build(&config);
        let params = ParamVector::from_values(Arc::new(layout), values)?;
        Ok(Self { config, params, prior_image })
    }

    pub fn config(&self) -> &InrConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn prior_image(&self) -> &Image2D {
        &self.prior_image
    }

    pub(crate) fn param_map(&self) -> ParamMap {
        ParamMap::build(&self.config).1
    }

    pub fn spatial_embedding(&self) -> FourierEmbedding {
        let map = self.param_map();
        let matrix = self.params.values[map.spatial_embed].to_vec();
        FourierEmbedding { frequencies: self.config.spatial_frequencies, input_dim: 2, sigma: self.config.spatial_sigma, matrix }
    }

    pub fn angular_embedding(&self) -> FourierEmbedding {
        let map = self.param_map();
        let matrix = self.params.values[map.angular_embed].to_vec();
        FourierEmbedding { frequencies: self.config.angular_frequencies, input_dim: 3, sigma: self.config.angular_sigma, matrix }
    }

    pub fn prior_encoder(&self) -> PriorEncoder {
        let map = self.param_map();
        PriorEncoder { config: self.config.prior, weights: self.params.values[map.prior_range].to_vec() }
    }

    /// Copy with every parameter rounded to single precision, matching what a
    /// checkpoint stores.
    pub fn to_storage_precision(&self) -> Self {
        let mut out = self.clone();
        out.params.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        out
    }
}

/// Normalised pixel-centre coordinates in `[-1, 1]^2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<[f64; 2]>,
}

impl CoordGrid {
    pub fn new(width: usize, height: usize) -> Self {
        let mut coords = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                coords.push([pixel_to_coord(x, width), pixel_to_coord(y, height)]);
            }
        }
        Self { width, height, coords }
    }

    /// Grid holding arbitrary points (rendered as a `len x 1` image).
    pub fn from_points(coords: Vec<[f64; 2]>) -> Self {
        Self { width: coords.len(), height: 1, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn pixel_to_coord(i: usize, size: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / size as f64
}

/// Continuous pixel index of a normalised coordinate, clamped to the pixel centres.
fn coord_to_pixel(c: f64, size: usize) -> f64 {
    let i = ((c + 1.0) * size as f64 - 1.0) / 2.0;
    i.clamp(0.0, (size - 1) as f64)
}

/// Bilinear taps `(index, weight)` of a coordinate in a `width x height` map.
pub(crate) fn bilinear_taps(c: [f64; 2], width: usize, height: usize) -> [(usize, f64); 4] {
    let fx = coord_to_pixel(c[0], width);
    let fy = coord_to_pixel(c[1], height);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    [
        (y0 * width + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * width + x1, tx * (1.0 - ty)),
        (y1 * width + x0, (1.0 - tx) * ty),
        (y1 * width + x1, tx * ty),
    ]
}

/// Bilinear sample of every channel at `c`, clamped at the border pixel centres.
pub fn sample_features(fmap: &FeatureMap, c: [f64; 2]) -> Vec<f64> {
    let taps = bilinear_taps(c, fmap.width, fmap.height);
    (0..fmap.channels)
        .map(|ch| {
            let channel = fmap.channel(ch);
            taps.iter().map(|&(i, w)| w * channel[i]).sum()
        })
        .collect()
}

/// `alpha * a + beta`, elementwise.
pub fn film_apply(a: &[f64], alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != a.len() || beta.len() != a.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), actual: alpha.len().max(beta.len()) });
    }
    Ok(a.iter().zip(alpha).zip(beta).map(|((a, s), b)| s * a + b).collect())
}

/// Network output at one coordinate and direction.
pub fn inr_forward(model: &InrModel, c: [f64; 2], g: Vec3) -> Result<f64> {
    let grid = CoordGrid::from_points(vec![c]);
    Ok(render_slice(model, &grid, g)?.pixels[0])
}

/// Evaluates the network on every grid coordinate for direction `g`.
pub fn render_slice(model: &InrModel, grid: &CoordGrid, g: Vec3) -> Result<Image2D> {
    check_unit(&g)?;
    let eval = GridEvaluator::new(model, grid)?;
    let spatial = eval.spatial_forward(&model.params().values, false)?;
    let pixels = eval.render(&model.params().values, &spatial, &g)?;
    Ok(Image2D { width: grid.width, height: grid.height, pixel_size: model.prior_image().pixel_size, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> InrConfig {
        InrConfig {
            spatial_frequencies: 6,
            angular_frequencies: 4,
            hidden_layers: 2,
            hidden_width: 8,
            film_hidden: 5,
            prior: PriorConfig { blocks: 1, layers_per_block: 2, growth: 3, channels: 4, ..PriorConfig::default() },
            seed: 3,
            ..InrConfig::default()
        }
    }

    fn prior_image() -> Image2D {
        Image2D::from_fn(8, 8, |x, y| 0.5 + 0.1 * x as f64 - 0.05 * y as f64)
    }

    #[test]
    fn grid_corners() {
        let grid = CoordGrid::new(4, 8);
        assert_eq!(grid.coords[0], [-0.75, -0.875]);
        assert_eq!(grid.coords[31], [0.75, 0.875]);
    }

    #[test]
    fn sampling_rules() {
        let fmap = FeatureMap { channels: 2, width: 3, height: 2, data: (0..12).map(|v| v as f64).collect() };
        let grid = CoordGrid::new(3, 2);
        // pixel centre (1, 1)
        let centre = sample_features(&fmap, grid.coords[4]);
        assert!((centre[0] - 4.0).abs() < 1e-12 && (centre[1] - 10.0).abs() < 1e-12);
        // midway between (0, 0) and (1, 0)
        let mid = [(grid.coords[0][0] + grid.coords[1][0]) / 2.0, grid.coords[0][1]];
        let v = sample_features(&fmap, mid);
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 6.5).abs() < 1e-12);
        // beyond the corner centre clamps to the corner pixel
        assert_eq!(sample_features(&fmap, [-1.0, -1.0]), vec![0.0, 6.0]);
        assert_eq!(sample_features(&fmap, [1.0, 1.0]), vec![5.0, 11.0]);
    }

    #[test]
    fn film_examples() {
        assert_eq!(film_apply(&[2.0, -3.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![2.0, -3.0]);
        assert_eq!(film_apply(&[0.0, 0.0], &[4.0, 5.0], &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(film_apply(&[2.0, 3.0], &[0.5, 2.0], &[1.0, -1.0]).unwrap(), vec![2.0, 5.0]);
        assert!(film_apply(&[1.0], &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn parameter_layout_is_tiled_and_named() {
        let cfg = small_config();
        let model = InrModel::new(cfg, prior_image()).unwrap();
        let layout = model.params().layout();
        let mut next = 0;
        for s in layout.segments() {
            assert_eq!(s.offset, next);
            next += s.len;
        }
        assert_eq!(next, model.params().len());
        assert!(!layout.get("embed.spatial").unwrap().trainable);
        assert!(!layout.get("embed.angular").unwrap().trainable);
        assert_eq!(layout.get("trunk.0.weight").unwrap().len, cfg.trunk_input() * 8);
        assert_eq!(layout.get("trunk.2.weight").unwrap().len, 8);
        // prior ablation keeps the layout
        let mut off = cfg;
        off.prior.enabled = false;
        let ablated = InrModel::new(off, prior_image()).unwrap();
        assert_eq!(ablated.params().layout(), layout);
    }

    #[test]
    fn zero_trunk_gives_constant_output() {
        let mut model = InrModel::new(small_config(), prior_image()).unwrap();
        let map = model.param_map();
        for spec in &map.trunk {
            for i in spec.weight.clone().chain(spec.bias.clone()) {
                model.params_mut().values[i] = 0.0;
            }
        }
        let out_bias = map.trunk.last().unwrap().bias.start;
        model.params_mut().values[out_bias] = 0.37;
        let g1 = [0.0, 0.6, 0.8];
        let g2 = [1.0, 0.0, 0.0];
        assert_eq!(inr_forward(&model, [0.2, -0.4], g1).unwrap(), 0.37);
        let img = render_slice(&model, &CoordGrid::new(8, 8), g2).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn rendering_is_deterministic() {
        let model = InrModel::new(small_config(), prior_image()).unwrap();
        let grid = CoordGrid::new(8, 8);
        let g = [0.48, 0.6, 0.64];
        assert_eq!(render_slice(&model, &grid, g).unwrap(), render_slice(&model, &grid, g).unwrap());
        assert_eq!(inr_forward(&model, [0.1, 0.3], g).unwrap(), inr_forward(&model, [0.1, 0.3], g).unwrap());
        assert!(matches!(render_slice(&model, &grid, [1.0, 1.0, 0.0]), Err(Error::NonUnitDirection(_))));
    }

    #[test]
    fn identity_modulation_ignores_direction() {
        // fresh models start with zeroed generator output layers
        let model = InrModel::new(small_config(), prior_image()).unwrap();
        let grid = CoordGrid::new(8, 8);
        let a = render_slice(&model, &grid, [0.0, 0.0, 1.0]).unwrap();
        let b = render_slice(&model, &grid, [0.6, 0.0, 0.8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn storage_precision_rounds_parameters() {
        let model = InrModel::new(small_config(), prior_image()).unwrap();
        let stored = model.to_storage_precision();
        for (a, b) in model.params().values.iter().zip(&stored.params().values) {
            assert_eq!(*b, *a as f32 as f64);
        }
    }
}
