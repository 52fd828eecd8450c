//! Batched dense kernels with hand-written reverse passes.
//!
//! Matrices are row-major slices. A batch of `rows` samples with `n` features
//! is a `rows x n` matrix; a dense layer weight is `out x in`.

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Smooth activations used by the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// tanh approximation of the Gaussian error linear unit.
    #[default]
    Gelu,
    Softplus,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl Activation {
    /// Returns `(f(z), f'(z))`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (z + GELU_CUBIC * z * z * z);
                // tanh through one exponential; saturates cleanly at +-1
                let t = 1.0 - 2.0 / (1.0 + (2.0 * u).exp());
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * z * z);
                (0.5 * z * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du)
            }
            Activation::Softplus => {
                // log(1 + e^z) without overflow
                let value = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                let sig = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                };
                (value, sig)
            }
        }
    }

    /// Elementwise activation, writing values to `out` and derivatives to `deriv`.
    pub fn apply(self, z: &[f64], out: &mut [f64], deriv: &mut [f64]) {
        for ((&zi, o), d) in z.iter().zip(out.iter_mut()).zip(deriv.iter_mut()) {
            let (v, dv) = self.eval(zi);
            *o = v;
            *d = dv;
        }
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above state the extents dgemm reads and writes;
    // every caller in this crate passes buffers sized from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `y = x w^T + b` for `x: rows x n_in`, `w: n_out x n_in`.
pub fn linear_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, n_in: usize, n_out: usize, y: &mut [f64]) {
    assert_eq!(x.len(), rows * n_in);
    assert_eq!(w.len(), n_out * n_in);
    assert_eq!(b.len(), n_out);
    assert_eq!(y.len(), rows * n_out);
    for row in y.chunks_exact_mut(n_out) {
        row.copy_from_slice(b);
    }
    gemm(rows, n_in, n_out, 1.0, x, (n_in, 1), w, (1, n_in), 1.0, y, (n_out, 1));
}

/// Reverse pass of [`linear_forward`]. Accumulates into `dw` and `db`;
/// overwrites `dx` when given.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    assert_eq!(dy.len(), rows * n_out);
    gemm(n_out, rows, n_in, 1.0, dy, (1, n_out), x, (n_in, 1), 1.0, dw, (n_in, 1));
    for row in dy.chunks_exact(n_out) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if let Some(dx) = dx {
        assert_eq!(dx.len(), rows * n_in);
        gemm(rows, n_out, n_in, 1.0, dy, (n_out, 1), w, (n_in, 1), 0.0, dx, (n_in, 1));
    }
}

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    sum / pred.len() as f64
}

/// Gradient of `scale * mse(pred, target)` with respect to `pred`; returns the loss.
pub fn mse_backward(pred: &[f64], target: &[f64], scale: f64, dpred: &mut [f64]) -> f64 {
    let n = pred.len() as f64;
    let mut sum = 0.0;
    for ((p, t), d) in pred.iter().zip(target).zip(dpred.iter_mut()) {
        let r = p - t;
        sum += r * r;
        *d = 2.0 * scale * r / n;
    }
    sum / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_forward_matches_naive() {
        let (rows, n_in, n_out) = (3, 4, 2);
        let x: alloc::vec::Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let w: alloc::vec::Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let b = [0.25, -1.0];
        let mut y = vec![0.0; rows * n_out];
        linear_forward(&x, &w, &b, rows, n_in, n_out, &mut y);
        for r in 0..rows {
            for o in 0..n_out {
                let naive: f64 = (0..n_in).map(|i| x[r * n_in + i] * w[o * n_in + i]).sum::<f64>() + b[o];
                assert!((y[r * n_out + o] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        for act in [Activation::Gelu, Activation::Softplus] {
            for &z in &[-6.0, -1.3, -0.2, 0.0, 0.4, 2.5, 8.0] {
                let h = 1e-6;
                let fd = (act.eval(z + h).0 - act.eval(z - h).0) / (2.0 * h);
                assert!((fd - act.eval(z).1).abs() < 1e-8, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let (v, d) = Activation::Softplus.eval(800.0);
        assert_eq!(v, 800.0);
        assert_eq!(d, 1.0);
        let (v, d) = Activation::Softplus.eval(-800.0);
        assert_eq!(v, 0.0);
        assert_eq!(d, 0.0);
    }
}
