//! Thick-slice acquisition forward model: in-plane rotation, slice-axis block
//! averaging and their composition.
//!
//! Images are row-major with `x` along columns and `y` along rows. The slice
//! (thickness) axis is `y`. Rotation is about the image centre
//! `((w - 1) / 2, (h - 1) / 2)` in pixel-index coordinates.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{norm3, Vec3};

/// Row-major 2D image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    /// In-plane pixel size in millimetres.
    pub pixel_size: f64,
    pub pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch { expected: width * height, actual: pixels.len() });
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { segment: "image".into(), index });
        }
        Ok(Self { width, height, pixel_size: 1.0, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixel_size: 1.0, pixels: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, pixel_size: 1.0, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixel_size: 1.0, pixels }
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Self {
        self.pixel_size = pixel_size;
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn dot(&self, other: &Image2D) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| a * b).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Pixels whose centre lies inside the circle inscribed in the image support.
    pub fn inscribed_circle_mask(width: usize, height: usize) -> Vec<bool> {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let r = (width.min(height) as f64 - 1.0) / 2.0;
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                mask.push(dx * dx + dy * dy <= r * r);
            }
        }
        mask
    }
}

/// Slice orientation of one rotating view. A slice axis has no sign, so
/// `theta` is folded into `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAngle {
    pub theta: f64,
    pub source_direction: Vec3,
}

impl ViewAngle {
    pub fn new(theta: f64, source_direction: Vec3) -> Self {
        Self { theta: fold_angle(theta), source_direction }
    }
}

fn fold_angle(theta: f64) -> f64 {
    let t = theta - PI * (theta / PI).floor();
    // can round up to exactly PI for tiny negative inputs
    if t >= PI {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    None,
    #[default]
    Gaussian,
    /// Magnitude of the signal plus complex Gaussian noise.
    Rician,
}

/// Thickness factor and noise settings of a simulated acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub thickness_factor: usize,
    pub noise_sigma: f64,
    pub noise_model: NoiseModel,
    pub rng_seed: u64,
}

impl AcquisitionConfig {
    pub fn noiseless(thickness_factor: usize) -> Self {
        Self { thickness_factor, noise_sigma: 0.0, noise_model: NoiseModel::None, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thickness_factor < 1 {
            return Err(Error::InvalidArgument("thickness factor must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Checks `|g| = 1` within `1e-9`.
pub fn check_unit(g: &Vec3) -> Result<()> {
    let n = norm3(g);
    if (n - 1.0).abs() > 1e-9 || !n.is_finite() {
        return Err(Error::NonUnitDirection(n));
    }
    Ok(())
}

/// Slice orientation from the in-plane projection of a diffusion direction.
/// Directions with a vanishing in-plane component map to `theta = 0`.
pub fn angle_from_direction(g: Vec3) -> Result<ViewAngle> {
    check_unit(&g)?;
    let planar = (g[0] * g[0] + g[1] * g[1]).sqrt();
    let theta = if planar < 1e-6 { 0.0 } else { g[1].atan2(g[0]) };
    Ok(ViewAngle::new(theta, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationDirection {
    Forward,
    Inverse,
}

/// Bilinear in-plane rotation as a sparse linear operator with up to four taps
/// per output pixel. Samples falling outside the support read zero.
#[derive(Debug, Clone)]
pub struct RotationOperator {
    width: usize,
    height: usize,
    // offsets[p]..offsets[p + 1] index the taps of output pixel p
    offsets: Vec<u32>,
    sources: Vec<u32>,
    weights: Vec<f64>,
}

impl RotationOperator {
    /// Operator mapping an image to its content rotated by `theta` about the centre.
    pub fn new(width: usize, height: usize, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let mut offsets = Vec::with_capacity(width * height + 1);
        let mut sources = Vec::with_capacity(4 * width * height);
        let mut weights = Vec::with_capacity(4 * width * height);
        offsets.push(0);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                // inverse map: source = centre + R(-theta) (q - centre)
                let sx = cx + c * dx + s * dy;
                let sy = cy - s * dx + c * dy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let taps = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1.0, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1.0, (1.0 - fx) * fy),
                    (x0 + 1.0, y0 + 1.0, fx * fy),
                ];
                for (tx, ty, w) in taps {
                    if w == 0.0 || tx < 0.0 || ty < 0.0 || tx >= width as f64 || ty >= height as f64 {
                        continue;
                    }
                    sources.push((ty as usize * width + tx as usize) as u32);
                    weights.push(w);
                }
                offsets.push(sources.len() as u32);
            }
        }
        Self { width, height, offsets, sources, weights }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `out = R x`
    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.width * self.height);
        assert_eq!(out.len(), self.width * self.height);
        for (p, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.offsets[p] as usize, self.offsets[p + 1] as usize);
            let mut acc = 0.0;
            for t in a..b {
                acc += self.weights[t] * input[self.sources[t] as usize];
            }
            *o = acc;
        }
    }

    /// `out = R^T y`
    pub fn apply_adjoint(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.width * self.height);
        assert_eq!(out.len(), self.width * self.height);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (p, &v) in input.iter().enumerate() {
            let (a, b) = (self.offsets[p] as usize, self.offsets[p + 1] as usize);
            for t in a..b {
                out[self.sources[t] as usize] += self.weights[t] * v;
            }
        }
    }
}

/// Rotates image content about its centre with bilinear interpolation and zero fill.
pub fn rotate(img: &Image2D, theta: f64, direction: RotationDirection) -> Image2D {
    let angle = match direction {
        RotationDirection::Forward => theta,
        RotationDirection::Inverse => -theta,
    };
    let op = RotationOperator::new(img.width, img.height, angle);
    let mut out = Image2D { pixels: vec![0.0; img.len()], ..img.clone() };
    op.apply(&img.pixels, &mut out.pixels);
    out
}

/// Averages `factor` consecutive rows: the thick-slice integration along `y`.
pub fn downsample_thick(img: &Image2D, factor: usize) -> Result<Image2D> {
    if factor < 1 {
        return Err(Error::InvalidArgument("thickness factor must be at least 1"));
    }
    if img.height % factor != 0 {
        return Err(Error::IndivisibleHeight { height: img.height, factor });
    }
    let mut out = Image2D { height: img.height / factor, pixels: vec![0.0; img.len() / factor], ..img.clone() };
    downsample_rows(&img.pixels, img.width, factor, &mut out.pixels);
    Ok(out)
}

/// Exact adjoint of [`downsample_thick`]: each value divided by `factor`
/// and replicated into `factor` rows.
pub fn upsample_adjoint(img: &Image2D, factor: usize) -> Result<Image2D> {
    if factor < 1 {
        return Err(Error::InvalidArgument("thickness factor must be at least 1"));
    }
    let mut out = Image2D { height: img.height * factor, pixels: vec![0.0; img.len() * factor], ..img.clone() };
    upsample_rows_adjoint(&img.pixels, img.width, factor, &mut out.pixels);
    Ok(out)
}

fn downsample_rows(input: &[f64], width: usize, factor: usize, out: &mut [f64]) {
    let inv = 1.0 / factor as f64;
    for (j, out_row) in out.chunks_exact_mut(width).enumerate() {
        out_row.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..factor {
            let in_row = &input[(j * factor + r) * width..(j * factor + r + 1) * width];
            for (o, v) in out_row.iter_mut().zip(in_row) {
                *o += v;
            }
        }
        out_row.iter_mut().for_each(|v| *v *= inv);
    }
}

fn upsample_rows_adjoint(input: &[f64], width: usize, factor: usize, out: &mut [f64]) {
    let inv = 1.0 / factor as f64;
    for (y, out_row) in out.chunks_exact_mut(width).enumerate() {
        let in_row = &input[(y / factor) * width..(y / factor + 1) * width];
        for (o, v) in out_row.iter_mut().zip(in_row) {
            *o = v * inv;
        }
    }
}

/// Noiseless composite operator `M = D(t_s) o R(theta)` for one view, with its adjoint.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    rotation: RotationOperator,
    factor: usize,
}

impl ForwardModel {
    pub fn new(width: usize, height: usize, view: &ViewAngle, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::InvalidArgument("thickness factor must be at least 1"));
        }
        if height % factor != 0 {
            return Err(Error::IndivisibleHeight { height, factor });
        }
        Ok(Self { rotation: RotationOperator::new(width, height, view.theta), factor })
    }

    pub fn hr_len(&self) -> usize {
        self.rotation.width * self.rotation.height
    }

    pub fn lr_len(&self) -> usize {
        self.hr_len() / self.factor
    }

    pub fn lr_shape(&self) -> (usize, usize) {
        (self.rotation.width, self.rotation.height / self.factor)
    }

    /// `out = M x`; `scratch` holds the rotated HR image.
    pub fn apply(&self, input: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.rotation.apply(input, scratch);
        downsample_rows(scratch, self.rotation.width, self.factor, out);
    }

    /// `out = M^T y`
    pub fn apply_adjoint(&self, input: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        upsample_rows_adjoint(input, self.rotation.width, self.factor, scratch);
        self.rotation.apply_adjoint(scratch, out);
    }

    pub fn apply_image(&self, img: &Image2D) -> Image2D {
        let (w, h) = self.lr_shape();
        let mut scratch = vec![0.0; self.hr_len()];
        let mut out = Image2D { width: w, height: h, pixel_size: img.pixel_size, pixels: vec![0.0; w * h] };
        self.apply(&img.pixels, &mut scratch, &mut out.pixels);
        out
    }
}

/// Adds measurement noise to `img` in place.
pub fn add_noise<R: Rng + ?Sized>(img: &mut Image2D, model: NoiseModel, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    match model {
        NoiseModel::None => {}
        NoiseModel::Gaussian => {
            for v in img.pixels.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n;
            }
        }
        NoiseModel::Rician => {
            for v in img.pixels.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v = (*v + sigma * re).hypot(sigma * im);
            }
        }
    }
}

/// Deterministic noise stream `stream` of the acquisition seeded by `seed`.
pub fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `D(t_s)(R(theta) img) + n`, with noise drawn from stream 0 of `cfg.rng_seed`.
pub fn forward_model(img_hr: &Image2D, view: &ViewAngle, cfg: &AcquisitionConfig) -> Result<Image2D> {
    cfg.validate()?;
    let op = ForwardModel::new(img_hr.width, img_hr.height, view, cfg.thickness_factor)?;
    let mut out = op.apply_image(img_hr);
    add_noise(&mut out, cfg.noise_model, cfg.noise_sigma, &mut noise_rng(cfg.rng_seed, 0));
    Ok(out)
}

/// Minimum number of rotating views with `N >= (pi / 2) t_s`.
pub fn nyquist_views(thickness_factor: usize) -> Result<usize> {
    if thickness_factor < 1 {
        return Err(Error::InvalidArgument("thickness factor must be at least 1"));
    }
    Ok((PI / 2.0 * thickness_factor as f64).ceil() as usize)
}
