//! Synthetic ground truth: direction sets, a diffusion-tensor slice phantom,
//! analytic DWI synthesis and the single-view-per-direction acquisition.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    add_noise, angle_from_direction, check_unit, downsample_thick, noise_rng, AcquisitionConfig, ForwardModel, Image2D,
    ViewAngle,
};
use crate::tensor::{dot3, SymTensor3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

/// Unit diffusion-encoding directions on one shell, tagged train / held-out.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    directions: Vec<Vec3>,
    b_value: f64,
    split: Vec<Split>,
}

impl DirectionSet {
    pub fn new(directions: Vec<Vec3>, b_value: f64, split: Vec<Split>) -> Result<Self> {
        if directions.len() != split.len() {
            return Err(Error::ShapeMismatch { expected: directions.len(), actual: split.len() });
        }
        if !(b_value > 0.0 && b_value.is_finite()) {
            return Err(Error::InvalidArgument("b-value must be positive"));
        }
        for g in &directions {
            check_unit(g)?;
        }
        // no duplicate or antipodal pair within 1e-6 rad
        let limit = 1e-6f64.cos();
        for i in 0..directions.len() {
            for j in 0..i {
                if dot3(&directions[i], &directions[j]).abs() > limit {
                    return Err(Error::InvalidArgument("directions must be distinct up to sign"));
                }
            }
        }
        Ok(Self { directions, b_value, split })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn b_value(&self) -> f64 {
        self.b_value
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn direction(&self, index: usize) -> Vec3 {
        self.directions[index]
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    pub fn held_out_indices(&self) -> Vec<usize> {
        self.indices_of(Split::HeldOut)
    }

    fn indices_of(&self, tag: Split) -> Vec<usize> {
        self.split.iter().enumerate().filter(|(_, &s)| s == tag).map(|(i, _)| i).collect()
    }
}

/// `n` directions on a spherical Fibonacci lattice over the upper hemisphere.
///
/// The lattice is fixed by `n`; `seed` only decides which `n_train`
/// directions form the training split.
pub fn fibonacci_directions(n: usize, n_train: usize, b_value: f64, seed: u64) -> Result<DirectionSet> {
    if n < 1 {
        return Err(Error::InvalidArgument("at least one direction is required"));
    }
    if n_train > n {
        return Err(Error::InvalidArgument("training split larger than the direction count"));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let directions: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            let g = [r * c, r * s, z];
            let norm = dot3(&g, &g).sqrt();
            [g[0] / norm, g[1] / norm, g[2] / norm]
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::HeldOut; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    DirectionSet::new(directions, b_value, split)
}

/// Monoexponential tensor signal `s0 * exp(-b g^T D g)`.
pub fn dwi_signal(d: &SymTensor3, g: &Vec3, b: f64, s0: f64) -> f64 {
    s0 * (-b * d.quadratic_form(g)).exp()
}

/// Tissue class of a phantom pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Outside,
    /// Isotropic parenchyma.
    Background,
    /// Isotropic, fast-diffusing fluid.
    Fluid,
    FiberA,
    FiberB,
    /// Principal direction along z.
    ThroughPlane,
}

impl Region {
    pub fn is_isotropic(self) -> bool {
        matches!(self, Region::Background | Region::Fluid)
    }
}

/// Per-pixel ground-truth tensors and baseline signal of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSlice {
    pub width: usize,
    pub height: usize,
    pub tensors: Vec<SymTensor3>,
    /// Construction eigenvalues, descending.
    pub eigenvalues: Vec<Vec3>,
    pub s0: Vec<f64>,
    pub mask: Vec<bool>,
    pub regions: Vec<Region>,
}

impl PhantomSlice {
    pub fn s0_image(&self) -> Image2D {
        Image2D { width: self.width, height: self.height, pixel_size: 1.0, pixels: self.s0.clone() }
    }
}

const D_BACKGROUND: f64 = 0.8e-3;
const D_FLUID: f64 = 2.4e-3;
const EIG_FIBER_A: Vec3 = [1.7e-3, 0.3e-3, 0.3e-3];
const EIG_FIBER_B: Vec3 = [1.5e-3, 0.4e-3, 0.25e-3];
const EIG_THROUGH: Vec3 = [1.7e-3, 0.2e-3, 0.2e-3];

/// Deterministic slice phantom: isotropic parenchyma, a fluid pocket, two
/// in-plane fiber bands with different orientations and a through-plane bundle.
/// `layout_seed` jitters band orientations and positions.
pub fn build_phantom(width: usize, height: usize, layout_seed: u64) -> Result<PhantomSlice> {
    if width < 32 || height < 32 || width % 8 != 0 || height % 8 != 0 {
        return Err(Error::InvalidArgument("phantom dimensions must be >= 32 and divisible by 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let mut jitter = |amp: f64| amp * (2.0 * rng.random::<f64>() - 1.0);

    let angle_a = (25.0 + jitter(8.0)).to_radians();
    let angle_b = (-55.0 + jitter(8.0)).to_radians();
    let centre_a = [jitter(0.05), -0.32 + jitter(0.04)];
    let centre_b = [0.3 + jitter(0.04), 0.3 + jitter(0.04)];
    let centre_z = [-0.42 + jitter(0.04), 0.3 + jitter(0.04)];
    let centre_f = [0.02 + jitter(0.03), 0.02 + jitter(0.03)];
    let bias_phase = jitter(PI);

    let axis_a = [angle_a.cos(), angle_a.sin(), 0.0];
    let axis_b = [angle_b.cos(), angle_b.sin(), 0.0];
    let tensor_a = SymTensor3::from_eigen(&EIG_FIBER_A, &orthonormal_frame(axis_a));
    let tensor_b = SymTensor3::from_eigen(&EIG_FIBER_B, &orthonormal_frame(axis_b));
    let tensor_z = SymTensor3::from_eigen(&EIG_THROUGH, &orthonormal_frame([0.0, 0.0, 1.0]));

    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let radius = width.min(height) as f64 / 2.0;
    let n = width * height;
    let mut phantom = PhantomSlice {
        width,
        height,
        tensors: vec![SymTensor3::default(); n],
        eigenvalues: vec![[0.0; 3]; n],
        s0: vec![0.0; n],
        mask: vec![false; n],
        regions: vec![Region::Outside; n],
    };

    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 - cx) / radius;
            let v = (y as f64 - cy) / radius;
            if (u / 0.84).powi(2) + (v / 0.74).powi(2) > 1.0 {
                continue;
            }
            let band_distance = |c: [f64; 2], axis: &Vec3| ((u - c[0]) * axis[1] - (v - c[1]) * axis[0]).abs();
            let region = if ((u - centre_f[0]) / 0.11).powi(2) + ((v - centre_f[1]) / 0.2).powi(2) <= 1.0 {
                Region::Fluid
            } else if (u - centre_z[0]).hypot(v - centre_z[1]) <= 0.17 {
                Region::ThroughPlane
            } else if band_distance(centre_a, &axis_a) <= 0.1 {
                Region::FiberA
            } else if band_distance(centre_b, &axis_b) <= 0.09 {
                Region::FiberB
            } else {
                Region::Background
            };
            let (tensor, eig, level) = match region {
                Region::Fluid => (SymTensor3::isotropic(D_FLUID), [D_FLUID; 3], 1.0),
                Region::ThroughPlane => (tensor_z, EIG_THROUGH, 0.66),
                Region::FiberA => (tensor_a, EIG_FIBER_A, 0.62),
                Region::FiberB => (tensor_b, EIG_FIBER_B, 0.58),
                _ => (SymTensor3::isotropic(D_BACKGROUND), [D_BACKGROUND; 3], 0.76),
            };
            let smooth = 1.0 - 0.1 * (u * u + v * v) + 0.04 * (1.7 * u + 0.9 * v + bias_phase).sin();
            let p = y * width + x;
            phantom.tensors[p] = tensor;
            phantom.eigenvalues[p] = eig;
            phantom.s0[p] = level * smooth;
            phantom.mask[p] = true;
            phantom.regions[p] = region;
        }
    }
    let peak = phantom.s0.iter().cloned().fold(0.0, f64::max);
    phantom.s0.iter_mut().for_each(|s| *s /= peak);
    Ok(phantom)
}

/// Completes a unit vector to a right-handed orthonormal frame whose first
/// axis is `a`; the third axis is as close to z as the first allows.
pub fn orthonormal_frame(a: Vec3) -> [Vec3; 3] {
    let helper = if a[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let mut b = crate::tensor::cross3(&helper, &a);
    let nb = dot3(&b, &b).sqrt();
    b.iter_mut().for_each(|v| *v /= nb);
    let c = crate::tensor::cross3(&a, &b);
    [a, b, c]
}

/// Ground-truth high-resolution images of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct HrSliceSet {
    pub b0: Image2D,
    /// Indexed like the direction set.
    pub dwis: Vec<Image2D>,
    pub directions: DirectionSet,
}

/// Analytic DWIs for every direction; `b0` is the S0 map.
pub fn synthesize_hr(phantom: &PhantomSlice, dirs: &DirectionSet) -> HrSliceSet {
    let b = dirs.b_value();
    let dwis = dirs
        .directions()
        .iter()
        .map(|g| {
            let pixels = phantom.tensors.iter().zip(&phantom.s0).map(|(d, &s0)| dwi_signal(d, g, b, s0)).collect();
            Image2D { width: phantom.width, height: phantom.height, pixel_size: 1.0, pixels }
        })
        .collect();
    HrSliceSet { b0: phantom.s0_image(), dwis, directions: dirs.clone() }
}

/// Thick-slice data: one rotated view per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LrAcquisition {
    /// Indexed like the direction set.
    pub views: Vec<(ViewAngle, Image2D)>,
    pub config: AcquisitionConfig,
    pub directions: DirectionSet,
    pub hr_width: usize,
    pub hr_height: usize,
}

/// Simulates one view per direction with the slice axis taken from the
/// in-plane projection of that direction.
pub fn acquire(hr: &HrSliceSet, cfg: &AcquisitionConfig) -> Result<LrAcquisition> {
    let views = hr
        .directions
        .directions()
        .iter()
        .map(|g| angle_from_direction(*g))
        .collect::<Result<Vec<_>>>()?;
    acquire_views(hr, &views, cfg)
}

/// As [`acquire`] with explicit view angles. Noise for direction `i` comes
/// from stream `i` of `cfg.rng_seed`.
pub fn acquire_views(hr: &HrSliceSet, views: &[ViewAngle], cfg: &AcquisitionConfig) -> Result<LrAcquisition> {
    cfg.validate()?;
    if views.len() != hr.dwis.len() {
        return Err(Error::ShapeMismatch { expected: hr.dwis.len(), actual: views.len() });
    }
    let (w, h) = (hr.b0.width, hr.b0.height);
    let mut out = Vec::with_capacity(views.len());
    for (i, (view, dwi)) in views.iter().zip(&hr.dwis).enumerate() {
        let op = ForwardModel::new(w, h, view, cfg.thickness_factor)?;
        let mut lr = op.apply_image(dwi);
        add_noise(&mut lr, cfg.noise_model, cfg.noise_sigma, &mut noise_rng(cfg.rng_seed, i as u64));
        out.push((*view, lr));
    }
    Ok(LrAcquisition { views: out, config: *cfg, directions: hr.directions.clone(), hr_width: w, hr_height: h })
}

/// Thick-slice-averaged prior replicated back to full height, for stress tests
/// of the structural prior.
pub fn degrade_prior(b0: &Image2D, factor: usize) -> Result<Image2D> {
    let thick = downsample_thick(b0, factor)?;
    Ok(Image2D::from_fn(b0.width, b0.height, |x, y| thick.get(x, y / factor)))
}
