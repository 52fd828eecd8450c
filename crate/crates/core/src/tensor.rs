//! Symmetric 3x3 tensors in the six-element storage used for diffusion tensors.

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub type Vec3 = [f64; 3];

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Symmetric tensor stored as `(xx, yy, zz, xy, xz, yz)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl SymTensor3 {
    pub const fn new(xx: f64, yy: f64, zz: f64, xy: f64, xz: f64, yz: f64) -> Self {
        Self { xx, yy, zz, xy, xz, yz }
    }

    pub const fn isotropic(d: f64) -> Self {
        Self::new(d, d, d, 0.0, 0.0, 0.0)
    }

    pub const fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, b, c, 0.0, 0.0, 0.0)
    }

    /// Builds `sum_i values[i] * axes[i] axes[i]^T`. The axes are assumed orthonormal.
    pub fn from_eigen(values: &Vec3, axes: &[Vec3; 3]) -> Self {
        let mut t = Self::default();
        for (l, v) in values.iter().zip(axes.iter()) {
            t.xx += l * v[0] * v[0];
            t.yy += l * v[1] * v[1];
            t.zz += l * v[2] * v[2];
            t.xy += l * v[0] * v[1];
            t.xz += l * v[0] * v[2];
            t.yz += l * v[1] * v[2];
        }
        t
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        Self::new(m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2])
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// `g^T D g`
    pub fn quadratic_form(&self, g: &Vec3) -> f64 {
        self.xx * g[0] * g[0]
            + self.yy * g[1] * g[1]
            + self.zz * g[2] * g[2]
            + 2.0 * (self.xy * g[0] * g[1] + self.xz * g[0] * g[2] + self.yz * g[1] * g[2])
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        [
            self.xx * v[0] + self.xy * v[1] + self.xz * v[2],
            self.xy * v[0] + self.yy * v[1] + self.yz * v[2],
            self.xz * v[0] + self.yz * v[1] + self.zz * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
