//! Log-linear tensor fitting, the symmetric 3x3 eigensystem and the scalar
//! maps derived from it.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::Image2D;
use crate::tensor::{cross3, dot3, norm3, SymTensor3, Vec3};

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigensystem {
    pub values: Vec3,
    pub vectors: [Vec3; 3],
}

/// Eigen-decomposition of a symmetric matrix given in full; rejects
/// asymmetric input.
pub fn eigensystem_sym3(m: &[[f64; 3]; 3]) -> Result<Eigensystem> {
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if (m[i][j] - m[j][i]).abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Asymmetric);
        }
    }
    Ok(eigensystem(&SymTensor3::from_matrix(m)))
}

/// Relative eigenvalue gap below which the closed form hands over to the
/// iterative solver.
const GAP_TOLERANCE: f64 = 1e-3;

pub fn eigensystem(d: &SymTensor3) -> Eigensystem {
    let scale = d.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return Eigensystem { values: [0.0; 3], vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };
    }
    let a = SymTensor3::new(d.xx / scale, d.yy / scale, d.zz / scale, d.xy / scale, d.xz / scale, d.yz / scale);
    let closed = closed_form(&a).unwrap_or_else(|| iterative(&a));
    Eigensystem { values: closed.values.map(|v| v * scale), vectors: closed.vectors }
}

/// Trigonometric solution of the characteristic cubic; `None` when two
/// eigenvalues are too close for cross-product eigenvectors.
fn closed_form(a: &SymTensor3) -> Option<Eigensystem> {
    let q = a.trace() / 3.0;
    let (bxx, byy, bzz) = (a.xx - q, a.yy - q, a.zz - q);
    let p2 = bxx * bxx + byy * byy + bzz * bzz + 2.0 * (a.xy * a.xy + a.xz * a.xz + a.yz * a.yz);
    let p = (p2 / 6.0).sqrt();
    if p < 1e-12 {
        return None;
    }
    let det = bxx * (byy * bzz - a.yz * a.yz) - a.xy * (a.xy * bzz - a.yz * a.xz) + a.xz * (a.xy * a.yz - byy * a.xz);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    if (l1 - l2).min(l2 - l3) < GAP_TOLERANCE * p {
        return None;
    }
    let v1 = null_vector(a, l1)?;
    let v3 = null_vector(a, l3)?;
    let v3 = normalize(sub_projection(v3, v1))?;
    let v2 = cross3(&v3, &v1);
    Some(Eigensystem { values: [l1, l2, l3], vectors: [v1, v2, v3] })
}

/// Unit vector spanning the null space of `a - lambda I` (simple eigenvalue).
fn null_vector(a: &SymTensor3, lambda: f64) -> Option<Vec3> {
    let m = a.to_matrix();
    let rows = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let candidates = [cross3(&rows[0], &rows[1]), cross3(&rows[0], &rows[2]), cross3(&rows[1], &rows[2])];
    let best = candidates.iter().copied().max_by(|x, y| norm3(x).total_cmp(&norm3(y)))?;
    normalize(best)
}

fn sub_projection(v: Vec3, onto: Vec3) -> Vec3 {
    let k = dot3(&v, &onto);
    [v[0] - k * onto[0], v[1] - k * onto[1], v[2] - k * onto[2]]
}

fn normalize(v: Vec3) -> Option<Vec3> {
    let n = norm3(&v);
    (n > 1e-300 && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

/// Householder tridiagonalisation plus implicit QL, for clustered spectra.
fn iterative(a: &SymTensor3) -> Eigensystem {
    let m = a.to_matrix();
    let eig = Matrix3::from_fn(|i, j| m[i][j]).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let column = |k: usize| -> Vec3 {
        let c = eig.eigenvectors.column(k);
        [c[0], c[1], c[2]]
    };
    let v1 = column(order[0]);
    let v3 = normalize(sub_projection(column(order[2]), v1)).unwrap_or_else(|| any_orthogonal(v1));
    let v2 = cross3(&v3, &v1);
    Eigensystem { values: order.map(|k| eig.eigenvalues[k]), vectors: [v1, v2, v3] }
}

fn any_orthogonal(v: Vec3) -> Vec3 {
    let axis = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    normalize(cross3(&v, &axis)).unwrap_or([0.0, 0.0, 1.0])
}

/// Outcome of one tensor fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    /// Some signals were nonpositive and were clamped before the logarithm;
    /// the tensor is defined but untrusted.
    ClampedSignal,
    NonPositiveS0,
    TooFewDirections,
    RankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorFit {
    pub tensor: SymTensor3,
    pub log_s0: f64,
    /// Sum of squared log-signal residuals.
    pub residual: f64,
    pub valid: bool,
    pub status: FitStatus,
}

impl TensorFit {
    fn failed(status: FitStatus) -> Self {
        Self { tensor: SymTensor3::default(), log_s0: 0.0, residual: 0.0, valid: false, status }
    }

    /// Whether the tensor holds computed values (possibly from clamped signals).
    pub fn has_tensor(&self) -> bool {
        matches!(self.status, FitStatus::Ok | FitStatus::ClampedSignal)
    }
}

/// Least-squares operator for a fixed direction subset. Rows are
/// `(-b [gx^2, gy^2, gz^2, 2gxgy, 2gxgz, 2gygz], 1)` for every direction plus
/// the unweighted row `(0, ..., 0, 1)` carrying `ln s0`.
#[derive(Debug, Clone)]
pub struct DtiDesign {
    directions: Vec<Vec3>,
    b_value: f64,
    design: DMatrix<f64>,
    /// `7 x (n + 1)` pseudo-inverse, or `None` when the design is singular.
    solve: Option<DMatrix<f64>>,
}

pub const MIN_DIRECTIONS: usize = 6;

impl DtiDesign {
    pub fn new(directions: &[Vec3], b_value: f64) -> Result<Self> {
        if !(b_value > 0.0) {
            return Err(Error::InvalidArgument("b-value must be positive"));
        }
        let n = directions.len();
        let mut design = DMatrix::zeros(n + 1, 7);
        for (i, g) in directions.iter().enumerate() {
            let row = [g[0] * g[0], g[1] * g[1], g[2] * g[2], 2.0 * g[0] * g[1], 2.0 * g[0] * g[2], 2.0 * g[1] * g[2]];
            for (k, v) in row.iter().enumerate() {
                design[(i, k)] = -b_value * v;
            }
            design[(i, 6)] = 1.0;
        }
        design[(n, 6)] = 1.0;
        let solve = if n < MIN_DIRECTIONS { None } else { pseudo_inverse(&design) };
        Ok(Self { directions: directions.to_vec(), b_value, design, solve })
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

    /// Fits one voxel; `signals` follow the design's direction order.
    pub fn fit(&self, signals: &[f64], s0: f64) -> Result<TensorFit> {
        if signals.len() != self.directions.len() {
            return Err(Error::ShapeMismatch { expected: self.directions.len(), actual: signals.len() });
        }
        if self.directions.len() < MIN_DIRECTIONS {
            return Ok(TensorFit::failed(FitStatus::TooFewDirections));
        }
        let Some(solve) = &self.solve else {
            return Ok(TensorFit::failed(FitStatus::RankDeficient));
        };
        if !(s0 > 0.0) || !s0.is_finite() {
            return Ok(TensorFit::failed(FitStatus::NonPositiveS0));
        }
        let floor = 1e-6 * s0;
        let mut clamped = false;
        let mut y = DMatrix::zeros(signals.len() + 1, 1);
        for (i, &s) in signals.iter().enumerate() {
            let s = if s > 0.0 && s.is_finite() {
                s
            } else {
                clamped = true;
                floor
            };
            y[(i, 0)] = s.ln();
        }
        y[(signals.len(), 0)] = s0.ln();
        let x = solve * &y;
        let r = &self.design * &x - &y;
        let tensor = SymTensor3::new(x[0], x[1], x[2], x[3], x[4], x[5]);
        let status = if clamped { FitStatus::ClampedSignal } else { FitStatus::Ok };
        Ok(TensorFit { tensor, log_s0: x[6], residual: r.norm_squared(), valid: !clamped, status })
    }
}

fn pseudo_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > 1e-10 * max) {
        return None;
    }
    svd.pseudo_inverse(0.0).ok()
}

/// Fits one voxel against every direction of `dirs`.
pub fn fit_dti(signals: &[f64], s0: f64, dirs: &crate::phantom::DirectionSet) -> Result<TensorFit> {
    DtiDesign::new(dirs.directions(), dirs.b_value())?.fit(signals, s0)
}

/// Scalar invariants and principal direction of one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMaps {
    pub md: f64,
    pub fa: f64,
    pub ad: f64,
    pub rd: f64,
    pub ev1: Vec3,
    pub ev1_fa: Vec3,
}

/// `None` when the fit holds no tensor.
pub fn scalar_maps(fit: &TensorFit) -> Option<ScalarMaps> {
    fit.has_tensor().then(|| scalar_maps_from_eigen(&eigensystem(&fit.tensor)))
}

pub fn scalar_maps_from_eigen(eig: &Eigensystem) -> ScalarMaps {
    let [l1, l2, l3] = eig.values;
    let fa = fractional_anisotropy(&eig.values);
    let rd = (l2 + l3) / 2.0;
    let ev1 = sign_convention(eig.vectors[0]);
    ScalarMaps {
        md: l1 + 2.0 * (rd - l1) / 3.0,
        fa,
        ad: l1,
        rd,
        ev1,
        ev1_fa: ev1.map(|v| v * fa),
    }
}

/// FA from pairwise eigenvalue differences; zero for a vanishing tensor.
pub fn fractional_anisotropy(values: &Vec3) -> f64 {
    let [l1, l2, l3] = *values;
    let energy = l1 * l1 + l2 * l2 + l3 * l3;
    if energy < 1e-20 {
        return 0.0;
    }
    let spread = (l1 - l2) * (l1 - l2) + (l2 - l3) * (l2 - l3) + (l3 - l1) * (l3 - l1);
    let fa = (0.5 * spread / energy).sqrt();
    // at most one for PSD spectra; anything above is rounding
    if values.iter().all(|&l| l >= 0.0) {
        fa.min(1.0)
    } else {
        fa
    }
}

/// Flips `v` so its largest-magnitude component is nonnegative.
pub fn sign_convention(v: Vec3) -> Vec3 {
    let k = (0..3).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).unwrap_or(0);
    if v[k] < 0.0 {
        v.map(|c| -c)
    } else {
        v
    }
}

/// Per-pixel fits and derived maps of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMapSet {
    pub width: usize,
    pub height: usize,
    pub fits: Vec<TensorFit>,
    pub md: Vec<f64>,
    pub fa: Vec<f64>,
    pub ad: Vec<f64>,
    pub rd: Vec<f64>,
    pub ev1: Vec<Vec3>,
    pub ev1_fa: Vec<Vec3>,
    /// Pixels inside the fitting mask whose fit holds a tensor.
    pub mask: Vec<bool>,
}

impl TensorMapSet {
    pub fn image(&self, values: &[f64]) -> Image2D {
        Image2D { width: self.width, height: self.height, pixel_size: 1.0, pixels: values.to_vec() }
    }

    pub fn valid_count(&self) -> usize {
        self.fits.iter().filter(|f| f.valid).count()
    }
}

/// Fits every pixel inside `mask`. `dwis` follow the design's direction order.
pub fn fit_maps(dwis: &[&Image2D], s0: &Image2D, design: &DtiDesign, mask: &[bool]) -> Result<TensorMapSet> {
    if dwis.len() != design.len() {
        return Err(Error::ShapeMismatch { expected: design.len(), actual: dwis.len() });
    }
    if design.len() < MIN_DIRECTIONS {
        return Err(Error::TooFewDirections { required: MIN_DIRECTIONS, available: design.len() });
    }
    let n = s0.len();
    if mask.len() != n {
        return Err(Error::ShapeMismatch { expected: n, actual: mask.len() });
    }
    if let Some(bad) = dwis.iter().find(|d| !d.same_shape(s0)) {
        return Err(Error::ShapeMismatch { expected: n, actual: bad.len() });
    }
    let mut set = TensorMapSet {
        width: s0.width,
        height: s0.height,
        fits: vec![TensorFit::failed(FitStatus::NonPositiveS0); n],
        md: vec![0.0; n],
        fa: vec![0.0; n],
        ad: vec![0.0; n],
        rd: vec![0.0; n],
        ev1: vec![[0.0; 3]; n],
        ev1_fa: vec![[0.0; 3]; n],
        mask: vec![false; n],
    };
    let mut signals = vec![0.0; dwis.len()];
    for p in (0..n).filter(|&p| mask[p]) {
        for (s, d) in signals.iter_mut().zip(dwis) {
            *s = d.pixels[p];
        }
        let fit = design.fit(&signals, s0.pixels[p])?;
        if let Some(m) = scalar_maps(&fit) {
            set.md[p] = m.md;
            set.fa[p] = m.fa;
            set.ad[p] = m.ad;
            set.rd[p] = m.rd;
            set.ev1[p] = m.ev1;
            set.ev1_fa[p] = m.ev1_fa;
            set.mask[p] = true;
        }
        set.fits[p] = fit;
    }
    Ok(set)
}

/// `sum (est - ref)^2 / sum ref^2` over `mask`.
pub fn map_nmse(est: &[f64], reference: &[f64], mask: &[bool]) -> Result<f64> {
    if est.len() != reference.len() || mask.len() != reference.len() {
        return Err(Error::ShapeMismatch { expected: reference.len(), actual: est.len().min(mask.len()) });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((e, r), _) in est.iter().zip(reference).zip(mask).filter(|(_, &m)| m) {
        num += (e - r) * (e - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

/// [`map_nmse`] over stacked vector components.
pub fn vector_map_nmse(est: &[Vec3], reference: &[Vec3], mask: &[bool]) -> Result<f64> {
    let flat = |v: &[Vec3]| v.iter().flatten().copied().collect::<Vec<_>>();
    let mask3: Vec<bool> = mask.iter().flat_map(|&m| [m; 3]).collect();
    map_nmse(&flat(est), &flat(reference), &mask3)
}
