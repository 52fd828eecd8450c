//! Self-supervised per-slice optimisation against the acquired thick-slice
//! views, zero-shot rendering of new directions, and the interpolation baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{rotate, ForwardModel, Image2D, RotationDirection};
use crate::inr::{render_slice, CoordGrid, GridEvaluator, InrConfig, InrModel};
use crate::numerics::ops::mse_backward;
use crate::numerics::{optimizer_step, AdamConfig, GradVector, OptimizerState};
use crate::phantom::{LrAcquisition, Split};
use crate::tensor::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub directions_per_step: usize,
    pub learning_rate: f64,
    /// Seeds both the initialisation and the direction sampling.
    pub seed: u64,
    /// Interval between full-objective evaluations recorded in the loss curve.
    pub log_every: usize,
    pub use_prior: bool,
    pub model: InrConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            directions_per_step: 8,
            learning_rate: 1e-3,
            seed: 0,
            log_every: 100,
            use_prior: true,
            model: InrConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Network configuration with the seed and prior switch applied.
    pub fn model_config(&self) -> InrConfig {
        let mut cfg = self.model;
        cfg.seed = self.seed;
        cfg.prior.enabled = self.use_prior;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(iteration, loss)`: the mean loss over all training directions before
    /// that iteration's update, plus a final entry after the last update.
    pub loss_curve: Vec<(usize, f64)>,
    pub final_loss: f64,
    /// Seconds; zero when no clock is available.
    pub wall_time: f64,
}

/// The data-consistency objective of one slice with its analytic gradient.
#[derive(Debug, Clone)]
pub struct SliceObjective<'a> {
    acq: &'a LrAcquisition,
    evaluator: GridEvaluator,
    operators: Vec<Option<ForwardModel>>,
}

impl<'a> SliceObjective<'a> {
    pub fn new(model: &InrModel, acq: &'a LrAcquisition) -> Result<Self> {
        let prior = model.prior_image();
        if prior.width != acq.hr_width || prior.height != acq.hr_height {
            return Err(Error::ShapeMismatch { expected: acq.hr_width * acq.hr_height, actual: prior.len() });
        }
        let grid = CoordGrid::new(acq.hr_width, acq.hr_height);
        let evaluator = GridEvaluator::new(model, &grid)?;
        let operators = acq
            .views
            .iter()
            .zip(acq.directions.split())
            .map(|((view, _), split)| match split {
                Split::Train => {
                    ForwardModel::new(acq.hr_width, acq.hr_height, view, acq.config.thickness_factor).map(Some)
                }
                Split::HeldOut => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { acq, evaluator, operators })
    }

    fn operator(&self, index: usize) -> Result<&ForwardModel> {
        match self.operators.get(index) {
            None => Err(Error::MissingDirection(index)),
            Some(None) => Err(Error::HeldOutDirection(index)),
            Some(Some(op)) => Ok(op),
        }
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("at least one direction is required"));
        }
        indices.iter().try_for_each(|&i| self.operator(i).map(|_| ()))
    }

    /// Mean over `indices` of the per-direction MSE between the projected
    /// render and the stored view.
    pub fn loss(&self, params: &[f64], indices: &[usize]) -> Result<f64> {
        self.check_indices(indices)?;
        let spatial = self.evaluator.spatial_forward(params, false)?;
        let mut scratch = vec![0.0; self.evaluator.points()];
        let mut pass = self.evaluator.new_pass();
        let mut total = 0.0;
        for &i in indices {
            let op = self.operator(i)?;
            let (g, target) = self.view(i);
            self.evaluator.direction_forward_into(params, &spatial, &g, &mut pass)?;
            let mut pred = vec![0.0; op.lr_len()];
            op.apply(&pass.output, &mut scratch, &mut pred);
            total += crate::numerics::ops::mse(&pred, &target.pixels);
        }
        Ok(total / indices.len() as f64)
    }

    /// Loss and its gradient, accumulated into `grad` (full parameter length).
    pub fn loss_and_grad(&self, params: &[f64], indices: &[usize], grad: &mut [f64]) -> Result<f64> {
        self.check_indices(indices)?;
        let ev = &self.evaluator;
        let spatial = ev.spatial_forward(params, true)?;
        let p = ev.points();
        let scale = 1.0 / indices.len() as f64;
        let mut scratch = vec![0.0; p];
        let mut d_render = vec![0.0; p];
        let mut d_a1 = vec![0.0; p * ev.hidden_width()];
        let mut pass = ev.new_pass();
        let mut total = 0.0;
        for &i in indices {
            let op = self.operator(i)?;
            let (g, target) = self.view(i);
            ev.direction_forward_into(params, &spatial, &g, &mut pass)?;
            let mut pred = vec![0.0; op.lr_len()];
            op.apply(&pass.output, &mut scratch, &mut pred);
            let mut d_pred = vec![0.0; op.lr_len()];
            total += mse_backward(&pred, &target.pixels, scale, &mut d_pred);
            op.apply_adjoint(&d_pred, &mut scratch, &mut d_render);
            ev.direction_backward(params, &spatial, &mut pass, &d_render, grad, &mut d_a1);
        }
        ev.spatial_backward(params, &spatial, &d_a1, grad);
        Ok(total * scale)
    }

    fn view(&self, index: usize) -> (Vec3, &Image2D) {
        (self.acq.directions.direction(index), &self.acq.views[index].1)
    }
}

/// Data-consistency loss of `model` on the given training directions.
pub fn data_consistency_loss(model: &InrModel, acq: &LrAcquisition, grid: &CoordGrid, dir_indices: &[usize]) -> Result<f64> {
    if grid.width != acq.hr_width || grid.height != acq.hr_height {
        return Err(Error::ShapeMismatch { expected: acq.hr_width * acq.hr_height, actual: grid.len() });
    }
    SliceObjective::new(model, acq)?.loss(&model.params().values, dir_indices)
}

/// Fits one network to the acquired views of a slice. Reads only the
/// low-resolution views and the b=0 image.
pub fn train_slice(acq: &LrAcquisition, b0: &Image2D, cfg: &TrainConfig) -> Result<(InrModel, TrainReport)> {
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    let train = acq.directions.train_indices();
    if cfg.iterations == 0 || cfg.directions_per_step == 0 || cfg.log_every == 0 {
        return Err(Error::InvalidArgument("iterations, directions per step and log interval must be positive"));
    }
    if cfg.directions_per_step > train.len() {
        return Err(Error::TooFewDirections { required: cfg.directions_per_step, available: train.len() });
    }
    let mut model = InrModel::new(cfg.model_config(), b0.clone())?;
    let objective = SliceObjective::new(&model, acq)?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut state = OptimizerState::new(model.params().len(), adam)?;
    let mut grad = GradVector::zeros_like(model.params());
    let frozen: Vec<_> = model.params().layout().segments().iter().filter(|s| !s.trainable).map(|s| s.range()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut loss_curve = Vec::new();
    for it in 0..cfg.iterations {
        if it % cfg.log_every == 0 {
            loss_curve.push((it, objective.loss(&model.params().values, &train)?));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, train.len(), cfg.directions_per_step)
            .into_iter()
            .map(|k| train[k])
            .collect();
        picked.sort_unstable();
        grad.fill_zero();
        let loss = objective.loss_and_grad(&model.params().values, &picked, &mut grad.values)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        for r in &frozen {
            grad.values[r.clone()].iter_mut().for_each(|g| *g = 0.0);
        }
        if grad.values.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        optimizer_step(model.params_mut(), &grad, &mut state)?;
    }
    let final_loss = objective.loss(&model.params().values, &train)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: cfg.iterations });
    }
    loss_curve.push((cfg.iterations, final_loss));

    #[cfg(feature = "std")]
    let wall_time = start.elapsed().as_secs_f64();
    #[cfg(not(feature = "std"))]
    let wall_time = 0.0;
    Ok((model, TrainReport { loss_curve, final_loss, wall_time }))
}

/// Renders direction `g`; identical for trained and unseen directions.
pub fn infer_direction(model: &InrModel, grid: &CoordGrid, g: Vec3) -> Result<Image2D> {
    render_slice(model, grid, g)
}

/// Single-view interpolation: linear upsampling of each view along the slice
/// axis followed by the inverse rotation. Indexed like the direction set.
pub fn baseline_reconstruct(acq: &LrAcquisition, target_height: usize) -> Result<Vec<Image2D>> {
    acq.views
        .iter()
        .map(|(view, lr)| {
            let up = upsample_linear_rows(lr, target_height)?;
            Ok(rotate(&up, view.theta, RotationDirection::Inverse))
        })
        .collect()
}

fn upsample_linear_rows(lr: &Image2D, target_height: usize) -> Result<Image2D> {
    if lr.height == 0 || target_height % lr.height != 0 {
        return Err(Error::IndivisibleHeight { height: target_height, factor: lr.height.max(1) });
    }
    let factor = (target_height / lr.height) as f64;
    let last = (lr.height - 1) as f64;
    let mut out = Image2D::from_fn(lr.width, target_height, |x, y| {
        let pos = ((y as f64 + 0.5) / factor - 0.5).clamp(0.0, last);
        let r0 = pos as usize;
        let r1 = (r0 + 1).min(lr.height - 1);
        let t = pos - r0 as f64;
        (1.0 - t) * lr.get(x, r0) + t * lr.get(x, r1)
    });
    out.pixel_size = lr.pixel_size;
    Ok(out)
}
