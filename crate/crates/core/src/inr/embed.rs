use alloc::vec::Vec;
use core::f64::consts::TAU;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};

/// Random Fourier features `[sin(2 pi B v); cos(2 pi B v)]` with a fixed
/// `m x d` frequency matrix `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEmbedding {
    /// Row-major `m x d`.
    pub matrix: Vec<f64>,
    pub frequencies: usize,
    pub input_dim: usize,
    pub sigma: f64,
}

impl FourierEmbedding {
    /// Draws `B` with i.i.d. `N(0, sigma^2)` entries.
    pub fn sample<R: Rng + ?Sized>(frequencies: usize, input_dim: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|_| Error::InvalidArgument("embedding sigma must be positive"))?;
        let matrix = (0..frequencies * input_dim).map(|_| rng.sample(normal)).collect();
        Ok(Self { matrix, frequencies, input_dim, sigma })
    }

    pub fn from_matrix(matrix: Vec<f64>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || matrix.len() % input_dim != 0 {
            return Err(Error::ShapeMismatch { expected: input_dim, actual: matrix.len() });
        }
        Ok(Self { frequencies: matrix.len() / input_dim, input_dim, sigma: 0.0, matrix })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.frequencies
    }
}

/// Writes the embedding of `v` into `out` (length `2m`).
pub(crate) fn embed_into(matrix: &[f64], input_dim: usize, v: &[f64], out: &mut [f64]) {
    let m = matrix.len() / input_dim;
    let (sin_bank, cos_bank) = out.split_at_mut(m);
    for (j, row) in matrix.chunks_exact(input_dim).enumerate() {
        let phase: f64 = row.iter().zip(v).map(|(b, x)| b * x).sum();
        let (s, c) = (TAU * phase).sin_cos();
        sin_bank[j] = s;
        cos_bank[j] = c;
    }
}

pub fn fourier_embed(v: &[f64], emb: &FourierEmbedding) -> Result<Vec<f64>> {
    if v.len() != emb.input_dim {
        return Err(Error::ShapeMismatch { expected: emb.input_dim, actual: v.len() });
    }
    let mut out = alloc::vec![0.0; emb.output_dim()];
    embed_into(&emb.matrix, emb.input_dim, v, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn origin_maps_to_unit_cosines() {
        let emb = FourierEmbedding::sample(5, 3, 2.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = fourier_embed(&[0.0, 0.0, 0.0], &emb).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out[..5].iter().all(|&s| s == 0.0));
        assert!(out[5..].iter().all(|&c| c == 1.0));
    }

    #[test]
    fn half_frequency_at_unit_input() {
        let emb = FourierEmbedding::from_matrix(alloc::vec![0.5, 0.0], 2).unwrap();
        let out = fourier_embed(&[1.0, 0.0], &emb).unwrap();
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let emb = FourierEmbedding::from_matrix(alloc::vec![1.0, 2.0], 2).unwrap();
        assert!(matches!(fourier_embed(&[1.0], &emb), Err(Error::ShapeMismatch { .. })));
    }
}
