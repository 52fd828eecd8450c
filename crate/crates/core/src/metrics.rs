//! Image quality metrics over an evaluation mask.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::Image2D;
use crate::phantom::{HrSliceSet, Split};
use crate::quant::map_nmse;

/// Returned instead of infinity when the error vanishes.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn check_pair(est: &Image2D, reference: &Image2D, mask: &[bool]) -> Result<()> {
    if !est.same_shape(reference) {
        return Err(Error::ShapeMismatch { expected: reference.len(), actual: est.len() });
    }
    if mask.len() != reference.len() {
        return Err(Error::ShapeMismatch { expected: reference.len(), actual: mask.len() });
    }
    Ok(())
}

pub fn psnr(est: &Image2D, reference: &Image2D, data_range: f64, mask: &[bool]) -> Result<f64> {
    check_pair(est, reference, mask)?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((e, r), _) in est.pixels.iter().zip(&reference.pixels).zip(mask).filter(|(_, &m)| m) {
        sum += (e - r) * (e - r);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Mean local SSIM over the windows that fit inside the image and whose
/// centre lies in `mask`.
pub fn ssim(est: &Image2D, reference: &Image2D, data_range: f64, mask: &[bool]) -> Result<f64> {
    check_pair(est, reference, mask)?;
    let (w, h) = (reference.width, reference.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive"));
    }
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let g = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let (mut total, mut count) = (0.0, 0usize);
    for cy in half..h - half {
        for cx in half..w - half {
            if !mask[cy * w + cx] {
                continue;
            }
            let window = || {
                (0..SSIM_WINDOW).flat_map(move |j| {
                    (0..SSIM_WINDOW).map(move |i| ((cy + j - half) * w + (cx + i - half), g[i] * g[j]))
                })
            };
            let (mut mx, mut my) = (0.0, 0.0);
            for (p, wt) in window() {
                mx += wt * est.pixels[p];
                my += wt * reference.pixels[p];
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (p, wt) in window() {
                let dx = est.pixels[p] - mx;
                let dy = reference.pixels[p] - my;
                vx += wt * dx * dx;
                vy += wt * dy * dy;
                cxy += wt * dx * dy;
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

pub fn nmse(est: &Image2D, reference: &Image2D, mask: &[bool]) -> Result<f64> {
    check_pair(est, reference, mask)?;
    map_nmse(&est.pixels, &reference.pixels, mask)
}

/// Object mask eroded by `margin` pixels (square neighbourhood; the image
/// border counts as outside) and intersected with the inscribed circle.
pub fn evaluation_mask(object: &[bool], width: usize, height: usize, margin: usize) -> Vec<bool> {
    let circle = Image2D::inscribed_circle_mask(width, height);
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            if !circle[y * width + x] || y < margin || x < margin || y + margin >= height || x + margin >= width {
                continue;
            }
            out[y * width + x] = (y - margin..=y + margin)
                .all(|yy| (x - margin..=x + margin).all(|xx| object[yy * width + xx]));
        }
    }
    out
}

pub const EVALUATION_MARGIN: usize = 2;

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-direction metrics of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub split: Split,
    pub directions: Vec<usize>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub nmse: Vec<f64>,
    /// NMSE of the DWI / S0 ratio images.
    pub nmse_ratio: Vec<f64>,
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn psnr_summary(&self) -> Summary {
        Summary::of(&self.psnr)
    }

    pub fn ssim_summary(&self) -> Summary {
        Summary::of(&self.ssim)
    }

    pub fn nmse_summary(&self) -> Summary {
        Summary::of(&self.nmse)
    }

    pub fn nmse_ratio_summary(&self) -> Summary {
        Summary::of(&self.nmse_ratio)
    }
}

/// Scores reconstructions of every direction in `split` against the ground
/// truth, inside the evaluation mask derived from the b=0 support.
pub fn evaluate_split(srs: &BTreeMap<usize, Image2D>, gts: &HrSliceSet, split: Split) -> Result<MetricReport> {
    let b0 = &gts.b0;
    let object: Vec<bool> = b0.pixels.iter().map(|&v| v > 0.0).collect();
    let mask = evaluation_mask(&object, b0.width, b0.height, EVALUATION_MARGIN);
    let s0_max = b0.pixels.iter().copied().fold(0.0, f64::max);
    let ratio_mask: Vec<bool> = mask.iter().zip(&b0.pixels).map(|(&m, &s)| m && s >= 0.01 * s0_max).collect();
    let ratio = |img: &Image2D| Image2D {
        pixels: img.pixels.iter().zip(&b0.pixels).map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 }).collect(),
        ..img.clone()
    };

    let indices = match split {
        Split::Train => gts.directions.train_indices(),
        Split::HeldOut => gts.directions.held_out_indices(),
    };
    let mut report = MetricReport {
        split,
        directions: indices.clone(),
        psnr: Vec::new(),
        ssim: Vec::new(),
        nmse: Vec::new(),
        nmse_ratio: Vec::new(),
    };
    for i in indices {
        let est = srs.get(&i).ok_or(Error::MissingDirection(i))?;
        let gt = &gts.dwis[i];
        let (lo, hi) = gt
            .pixels
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
        if !(hi > lo) {
            return Err(Error::EmptyMask);
        }
        report.psnr.push(psnr(est, gt, hi - lo, &mask)?);
        report.ssim.push(ssim(est, gt, hi - lo, &mask)?);
        report.nmse.push(nmse(est, gt, &mask)?);
        report.nmse_ratio.push(nmse(&ratio(est), &ratio(gt), &ratio_mask)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    fn textured(w: usize, h: usize) -> Image2D {
        Image2D::from_fn(w, h, |x, y| 0.3 + 0.2 * ((x * 7 + y * 3) % 11) as f64 / 11.0)
    }

    #[test]
    fn psnr_examples() {
        let r = Image2D::constant(4, 4, 0.5);
        assert_eq!(psnr(&r, &r, 1.0, &all(16)).unwrap(), PSNR_CAP);
        let e = Image2D::constant(4, 4, 0.6);
        assert!((psnr(&e, &r, 1.0, &all(16)).unwrap() - 20.0).abs() < 1e-9);
        let e = Image2D::constant(4, 4, 0.51);
        assert!((psnr(&e, &r, 1.0, &all(16)).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&e, &Image2D::zeros(3, 4), 1.0, &all(16)).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_shift() {
        let x = textured(16, 16);
        assert_eq!(ssim(&x, &x, 1.0, &all(256)).unwrap(), 1.0);
        let (v, c, range) = (0.4, 0.1, 1.0);
        let est = Image2D::constant(16, 16, v + c);
        let reference = Image2D::constant(16, 16, v);
        let c1 = (0.01f64 * range).powi(2);
        let expected = (2.0 * v * (v + c) + c1) / (v * v + (v + c) * (v + c) + c1);
        assert!((ssim(&est, &reference, range, &all(256)).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(ssim(&Image2D::zeros(10, 16), &Image2D::zeros(10, 16), 1.0, &all(160)), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn ssim_negated_zero_mean_patch_is_negative() {
        let x = Image2D::from_fn(11, 11, |x, y| if (x + y) % 2 == 0 { 0.5 } else { -0.5 });
        let neg = Image2D { pixels: x.pixels.iter().map(|v| -v).collect(), ..x.clone() };
        assert!(ssim(&neg, &x, 1.0, &all(121)).unwrap() < 0.0);
    }

    #[test]
    fn nmse_examples() {
        let r = textured(8, 8);
        let m = all(64);
        assert_eq!(nmse(&r, &r, &m).unwrap(), 0.0);
        assert_eq!(nmse(&Image2D::zeros(8, 8), &r, &m).unwrap(), 1.0);
        let scaled = Image2D { pixels: r.pixels.iter().map(|v| 1.1 * v).collect(), ..r.clone() };
        assert!((nmse(&scaled, &r, &m).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(nmse(&r, &Image2D::zeros(8, 8), &m), Err(Error::ZeroReference));
    }

    #[test]
    fn evaluation_mask_erodes() {
        let object = vec![true; 32 * 32];
        let m = evaluation_mask(&object, 32, 32, 2);
        assert_eq!(m, Image2D::inscribed_circle_mask(32, 32).iter().enumerate().map(|(i, &c)| {
            let (x, y) = (i % 32, i / 32);
            c && (2..30).contains(&x) && (2..30).contains(&y)
        }).collect::<Vec<_>>());
        let mut holed = object.clone();
        holed[16 * 32 + 16] = false;
        let m = evaluation_mask(&holed, 32, 32, 2);
        for y in 14..=18 {
            for x in 14..=18 {
                assert!(!m[y * 32 + x]);
            }
        }
        assert!(m[16 * 32 + 19]);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
    }
}
