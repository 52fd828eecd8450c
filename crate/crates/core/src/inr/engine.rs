//! Whole-grid evaluation of the network with a hand-written reverse pass.
//!
//! Modulation is applied after the activation, so the first hidden layer's
//! activations do not depend on the direction and are computed once per
//! parameter state. Gradients flowing into them are accumulated across
//! directions and pushed back through the first layer and the prior encoder in
//! a single pass.

use alloc::vec;
use alloc::vec::Vec;

use super::embed::embed_into;
use super::prior::{PriorCache, PriorEval};
use super::{bilinear_taps, CoordGrid, DenseSpec, InrConfig, InrModel, ParamMap};
use crate::error::{Error, Result};
use crate::numerics::ops::{linear_backward, linear_forward};
use crate::tensor::Vec3;

/// Direction-independent part of a forward pass.
#[derive(Debug, Clone)]
pub struct SpatialPass {
    features: Vec<f64>,
    prior_cache: Option<PriorCache>,
    /// Trunk input, `P x n0`.
    x0: Vec<f64>,
    /// First hidden layer activations and derivatives, `P x W`.
    a1: Vec<f64>,
    d1: Vec<f64>,
}

impl SpatialPass {
    /// Prior feature map, `channels x (prior pixels)`.
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Modulation vectors for one direction (`layers x width`, row-major).
#[derive(Debug, Clone)]
pub struct FilmOutput {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    embedding: Vec<f64>,
    hidden: [Vec<f64>; 2],
    hidden_deriv: [Vec<f64>; 2],
}

/// Direction-dependent part of a forward pass. Buffers are reused across
/// directions via [`GridEvaluator::direction_forward_into`].
#[derive(Debug, Clone)]
pub struct DirectionPass {
    pub film: FilmOutput,
    /// Activations of hidden layers `1..L` (index 0 unused: shared).
    act: Vec<Vec<f64>>,
    deriv: Vec<Vec<f64>>,
    /// Modulated outputs of every hidden layer.
    modulated: Vec<Vec<f64>>,
    /// Rendered intensities, one per grid point.
    pub output: Vec<f64>,
    z: Vec<f64>,
    dh: Vec<f64>,
    d_alpha: Vec<f64>,
    d_beta: Vec<f64>,
}

/// Network bound to a coordinate grid and a prior image.
#[derive(Debug, Clone)]
pub struct GridEvaluator {
    config: InrConfig,
    map: ParamMap,
    points: usize,
    gamma_c: Vec<f64>,
    taps: Vec<[(usize, f64); 4]>,
    prior: Option<PriorEval>,
    prior_image: Vec<f64>,
    prior_pixels: usize,
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer })
    }
}

impl GridEvaluator {
    pub fn new(model: &InrModel, grid: &CoordGrid) -> Result<Self> {
        let config = *model.config();
        let map = model.param_map();
        let params = &model.params().values;
        let image = model.prior_image();
        let m2 = 2 * config.spatial_frequencies;
        let mut gamma_c = vec![0.0; grid.len() * m2];
        for (c, out) in grid.coords.iter().zip(gamma_c.chunks_exact_mut(m2)) {
            embed_into(&params[map.spatial_embed.clone()], 2, c, out);
        }
        let taps = grid.coords.iter().map(|&c| bilinear_taps(c, image.width, image.height)).collect();
        let prior = if config.prior.enabled {
            Some(PriorEval::new(map.prior.clone(), 0, image.width, image.height, config.activation)?)
        } else {
            None
        };
        Ok(Self {
            config,
            map,
            points: grid.len(),
            gamma_c,
            taps,
            prior,
            prior_image: image.pixels.clone(),
            prior_pixels: image.len(),
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn hidden_width(&self) -> usize {
        self.config.hidden_width
    }

    /// Prior encoding, trunk input assembly and the shared first layer.
    pub fn spatial_forward(&self, params: &[f64], keep_cache: bool) -> Result<SpatialPass> {
        let cfg = &self.config;
        let (p, ch) = (self.points, cfg.prior.channels);
        let m2 = 2 * cfg.spatial_frequencies;
        let n0 = cfg.trunk_input();
        let (features, prior_cache) = match &self.prior {
            Some(eval) => {
                let (f, cache) = eval.forward(params, &self.prior_image);
                (f, keep_cache.then_some(cache))
            }
            None => (vec![0.0; ch * self.prior_pixels], None),
        };
        check_finite(&features, 0)?;

        let mut x0 = vec![0.0; p * n0];
        for (i, row) in x0.chunks_exact_mut(n0).enumerate() {
            row[..m2].copy_from_slice(&self.gamma_c[i * m2..(i + 1) * m2]);
            for (k, slot) in row[m2..].iter_mut().enumerate() {
                let channel = &features[k * self.prior_pixels..(k + 1) * self.prior_pixels];
                *slot = self.taps[i].iter().map(|&(j, w)| w * channel[j]).sum();
            }
        }

        let w = self.hidden_width();
        let first = &self.map.trunk[0];
        let mut z = vec![0.0; p * w];
        linear_forward(&x0, &params[first.weight.clone()], &params[first.bias.clone()], p, n0, w, &mut z);
        let mut a1 = vec![0.0; p * w];
        let mut d1 = vec![0.0; p * w];
        cfg.activation.apply(&z, &mut a1, &mut d1);
        check_finite(&a1, 0)?;
        Ok(SpatialPass { features, prior_cache, x0, a1, d1 })
    }

    fn generator(&self, params: &[f64], specs: &[DenseSpec; 2], emb: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [h, o] = specs;
        let mut z = vec![0.0; h.n_out];
        linear_forward(emb, &params[h.weight.clone()], &params[h.bias.clone()], 1, h.n_in, h.n_out, &mut z);
        let mut hidden = vec![0.0; h.n_out];
        let mut deriv = vec![0.0; h.n_out];
        self.config.activation.apply(&z, &mut hidden, &mut deriv);
        let mut out = vec![0.0; o.n_out];
        linear_forward(&hidden, &params[o.weight.clone()], &params[o.bias.clone()], 1, o.n_in, o.n_out, &mut out);
        (out, hidden, deriv)
    }

    pub fn film_forward(&self, params: &[f64], g: &Vec3) -> FilmOutput {
        let mut embedding = vec![0.0; 2 * self.config.angular_frequencies];
        embed_into(&params[self.map.angular_embed.clone()], 3, g, &mut embedding);
        let (mut alpha, ha, da) = self.generator(params, &self.map.film_alpha, &embedding);
        alpha.iter_mut().for_each(|a| *a += 1.0);
        let (beta, hb, db) = self.generator(params, &self.map.film_beta, &embedding);
        FilmOutput { alpha, beta, embedding, hidden: [ha, hb], hidden_deriv: [da, db] }
    }

    /// Buffers for one direction pass.
    pub fn new_pass(&self) -> DirectionPass {
        let (p, w, layers) = (self.points, self.hidden_width(), self.config.hidden_layers);
        let n = layers * w;
        let empty = || FilmOutput { alpha: vec![0.0; n], beta: vec![0.0; n], embedding: Vec::new(), hidden: [Vec::new(), Vec::new()], hidden_deriv: [Vec::new(), Vec::new()] };
        let per_layer = |first: bool| (0..layers).map(|l| if l == 0 && first { Vec::new() } else { vec![0.0; p * w] }).collect::<Vec<_>>();
        DirectionPass {
            film: empty(),
            act: per_layer(true),
            deriv: per_layer(true),
            modulated: per_layer(false),
            output: vec![0.0; p],
            z: vec![0.0; p * w],
            dh: vec![0.0; p * w],
            d_alpha: vec![0.0; n],
            d_beta: vec![0.0; n],
        }
    }

    pub fn direction_forward(&self, params: &[f64], spatial: &SpatialPass, g: &Vec3) -> Result<DirectionPass> {
        let mut pass = self.new_pass();
        self.direction_forward_into(params, spatial, g, &mut pass)?;
        Ok(pass)
    }

    pub fn direction_forward_into(&self, params: &[f64], spatial: &SpatialPass, g: &Vec3, pass: &mut DirectionPass) -> Result<()> {
        let (p, w, layers) = (self.points, self.hidden_width(), self.config.hidden_layers);
        pass.film = self.film_forward(params, g);
        check_finite(&pass.film.alpha, 0)?;
        check_finite(&pass.film.beta, 0)?;
        let act_fn = self.config.activation;
        for l in 0..layers {
            let alpha = &pass.film.alpha[l * w..(l + 1) * w];
            let beta = &pass.film.beta[l * w..(l + 1) * w];
            let (done, rest) = pass.modulated.split_at_mut(l);
            let h = &mut rest[0];
            if l == 0 {
                for (h_row, a_row) in h.chunks_exact_mut(w).zip(spatial.a1.chunks_exact(w)) {
                    for k in 0..w {
                        h_row[k] = alpha[k] * a_row[k] + beta[k];
                    }
                }
                continue;
            }
            let spec = &self.map.trunk[l];
            linear_forward(&done[l - 1], &params[spec.weight.clone()], &params[spec.bias.clone()], p, w, w, &mut pass.z);
            let (act, deriv) = (&mut pass.act[l], &mut pass.deriv[l]);
            let mut finite = true;
            for i in 0..p {
                let row = i * w..(i + 1) * w;
                let (z_row, a_row) = (&pass.z[row.clone()], &mut act[row.clone()]);
                let (d_row, h_row) = (&mut deriv[row.clone()], &mut h[row]);
                for k in 0..w {
                    let (a, d) = act_fn.eval(z_row[k]);
                    finite &= a.is_finite();
                    a_row[k] = a;
                    d_row[k] = d;
                    h_row[k] = alpha[k] * a + beta[k];
                }
            }
            if !finite {
                return Err(Error::NonFiniteActivation { layer: l });
            }
        }
        let out_spec = &self.map.trunk[layers];
        linear_forward(
            &pass.modulated[layers - 1],
            &params[out_spec.weight.clone()],
            &params[out_spec.bias.clone()],
            p,
            w,
            1,
            &mut pass.output,
        );
        check_finite(&pass.output, layers)
    }

    /// Intensities for direction `g` given a spatial pass.
    pub fn render(&self, params: &[f64], spatial: &SpatialPass, g: &Vec3) -> Result<Vec<f64>> {
        Ok(self.direction_forward(params, spatial, g)?.output)
    }

    fn generator_backward(&self, params: &[f64], specs: &[DenseSpec; 2], film: &FilmOutput, which: usize, d_out: &[f64], grad: &mut [f64]) {
        let [h, o] = specs;
        let hidden = &film.hidden[which];
        let mut d_hidden = vec![0.0; h.n_out];
        let (gw, gb) = split_pair(grad, o);
        linear_backward(hidden, &params[o.weight.clone()], d_out, 1, o.n_in, o.n_out, gw, gb, Some(&mut d_hidden));
        for (d, &v) in d_hidden.iter_mut().zip(&film.hidden_deriv[which]) {
            *d *= v;
        }
        let (gw, gb) = split_pair(grad, h);
        linear_backward(&film.embedding, &params[h.weight.clone()], &d_hidden, 1, h.n_in, h.n_out, gw, gb, None);
    }

    /// Reverse pass of one direction from `d_output`. Parameter gradients are
    /// accumulated into `grad`; the gradient with respect to the shared first
    /// layer activations is accumulated into `d_a1`.
    pub fn direction_backward(
        &self,
        params: &[f64],
        spatial: &SpatialPass,
        pass: &mut DirectionPass,
        d_output: &[f64],
        grad: &mut [f64],
        d_a1: &mut [f64],
    ) {
        let (p, w, layers) = (self.points, self.hidden_width(), self.config.hidden_layers);
        let out_spec = &self.map.trunk[layers];
        {
            let (gw, gb) = split_pair(grad, out_spec);
            linear_backward(
                &pass.modulated[layers - 1],
                &params[out_spec.weight.clone()],
                d_output,
                p,
                w,
                1,
                gw,
                gb,
                Some(&mut pass.dh),
            );
        }
        pass.d_alpha.fill(0.0);
        pass.d_beta.fill(0.0);
        for l in (0..layers).rev() {
            let a: &[f64] = if l == 0 { &spatial.a1 } else { &pass.act[l] };
            let alpha = &pass.film.alpha[l * w..(l + 1) * w];
            let da_l = &mut pass.d_alpha[l * w..(l + 1) * w];
            let db_l = &mut pass.d_beta[l * w..(l + 1) * w];
            if l == 0 {
                for i in 0..p {
                    let row = i * w..(i + 1) * w;
                    let (dh_row, a_row, acc) = (&pass.dh[row.clone()], &a[row.clone()], &mut d_a1[row]);
                    for k in 0..w {
                        da_l[k] += dh_row[k] * a_row[k];
                        db_l[k] += dh_row[k];
                        acc[k] += dh_row[k] * alpha[k];
                    }
                }
                break;
            }
            let deriv = &pass.deriv[l];
            for i in 0..p {
                let row = i * w..(i + 1) * w;
                let (dh_row, a_row) = (&pass.dh[row.clone()], &a[row.clone()]);
                let (d_row, dz_row) = (&deriv[row.clone()], &mut pass.z[row]);
                for k in 0..w {
                    da_l[k] += dh_row[k] * a_row[k];
                    db_l[k] += dh_row[k];
                    dz_row[k] = dh_row[k] * alpha[k] * d_row[k];
                }
            }
            let spec = &self.map.trunk[l];
            let (gw, gb) = split_pair(grad, spec);
            linear_backward(&pass.modulated[l - 1], &params[spec.weight.clone()], &pass.z, p, w, w, gw, gb, Some(&mut pass.dh));
        }
        self.generator_backward(params, &self.map.film_alpha, &pass.film, 0, &pass.d_alpha, grad);
        self.generator_backward(params, &self.map.film_beta, &pass.film, 1, &pass.d_beta, grad);
    }

    /// Reverse pass through the shared first layer, the feature sampler and the
    /// prior encoder.
    pub fn spatial_backward(&self, params: &[f64], spatial: &SpatialPass, d_a1: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let (p, w, n0) = (self.points, self.hidden_width(), cfg.trunk_input());
        let m2 = 2 * cfg.spatial_frequencies;
        let dz: Vec<f64> = d_a1.iter().zip(&spatial.d1).map(|(a, b)| a * b).collect();
        let first = &self.map.trunk[0];
        let want_dx = self.prior.is_some() && spatial.prior_cache.is_some();
        let mut dx0 = if want_dx { vec![0.0; p * n0] } else { Vec::new() };
        {
            let (gw, gb) = split_pair(grad, first);
            linear_backward(
                &spatial.x0,
                &params[first.weight.clone()],
                &dz,
                p,
                n0,
                w,
                gw,
                gb,
                want_dx.then_some(dx0.as_mut_slice()),
            );
        }
        if let (Some(eval), Some(cache)) = (&self.prior, &spatial.prior_cache) {
            let ch = cfg.prior.channels;
            let mut d_features = vec![0.0; ch * self.prior_pixels];
            for (i, row) in dx0.chunks_exact(n0).enumerate() {
                for (k, &d) in row[m2..].iter().enumerate() {
                    let channel = &mut d_features[k * self.prior_pixels..(k + 1) * self.prior_pixels];
                    for &(j, t) in &self.taps[i] {
                        channel[j] += t * d;
                    }
                }
            }
            eval.backward(params, cache, &d_features, grad);
        }
    }
}

fn split_pair<'a>(grad: &'a mut [f64], spec: &DenseSpec) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(spec.weight.end, spec.bias.start);
    let (head, tail) = grad.split_at_mut(spec.bias.start);
    (&mut head[spec.weight.clone()], &mut tail[..spec.bias.len()])
}
