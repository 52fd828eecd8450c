use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvinr_core::geometry::{AcquisitionConfig, Image2D};
use rvinr_core::inr::{InrConfig, InrModel, Padding, PriorConfig};
use rvinr_core::numerics::Activation;
use rvinr_core::phantom::{acquire, fibonacci_directions, HrSliceSet};
use rvinr_core::trainer::SliceObjective;

fn small_config(activation: Activation, padding: Padding) -> InrConfig {
    InrConfig {
        spatial_frequencies: 6,
        spatial_sigma: 2.0,
        angular_frequencies: 4,
        hidden_layers: 3,
        hidden_width: 8,
        film_hidden: 5,
        prior: PriorConfig { blocks: 2, layers_per_block: 2, growth: 3, channels: 4, padding, enabled: true },
        activation,
        seed: 11,
        ..InrConfig::default()
    }
}

fn scene(size: usize, ts: usize) -> (HrSliceSet, rvinr_core::phantom::LrAcquisition) {
    let dirs = fibonacci_directions(6, 4, 1000.0, 2).unwrap();
    let b0 = Image2D::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        0.6 + 0.3 * (3.0 * u).sin() * (2.0 * v).cos()
    });
    let dwis = dirs
        .directions()
        .iter()
        .map(|g| Image2D::from_fn(size, size, |x, y| b0.get(x, y) * (0.5 + 0.2 * g[0] * x as f64 / size as f64 - 0.1 * g[1] * g[2] * y as f64 / size as f64)))
        .collect();
    let hr = HrSliceSet { b0, dwis, directions: dirs };
    let acq = acquire(&hr, &AcquisitionConfig::noiseless(ts)).unwrap();
    (hr, acq)
}

/// Central differences over every trainable parameter.
fn check(cfg: InrConfig) {
    let (hr, acq) = scene(16, 2);
    let mut model = InrModel::new(cfg, hr.b0.clone()).unwrap();
    // move away from the identity modulation so every path carries gradient
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trainable: Vec<usize> = model.params().layout().trainable_indices().collect();
    for &i in &trainable {
        model.params_mut().values[i] += 0.2 * (2.0 * rng.random::<f64>() - 1.0);
    }
    let objective = SliceObjective::new(&model, &acq).unwrap();
    let train = acq.directions.train_indices();
    let params = model.params().values.clone();
    let mut grad = vec![0.0; params.len()];
    let loss = objective.loss_and_grad(&params, &train, &mut grad).unwrap();
    assert!((loss - objective.loss(&params, &train).unwrap()).abs() <= 1e-14 * loss.max(1.0));

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for &i in &trainable {
        probe[i] = params[i] + h;
        let up = objective.loss(&probe, &train).unwrap();
        probe[i] = params[i] - h;
        let down = objective.loss(&probe, &train).unwrap();
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative gradient error {worst:e}");
    // frozen embeddings receive no gradient
    for s in model.params().layout().segments().iter().filter(|s| !s.trainable) {
        assert!(grad[s.range()].iter().all(|&g| g == 0.0), "{}", s.name);
    }
}

#[test]
fn gradient_matches_finite_differences_gelu() {
    check(small_config(Activation::Gelu, Padding::Reflect));
}

#[test]
fn gradient_matches_finite_differences_softplus_circular() {
    check(small_config(Activation::Softplus, Padding::Circular));
}

#[test]
fn gradient_without_prior_leaves_encoder_untouched() {
    let mut cfg = small_config(Activation::Gelu, Padding::Reflect);
    cfg.prior.enabled = false;
    let (hr, acq) = scene(16, 2);
    let model = InrModel::new(cfg, hr.b0.clone()).unwrap();
    let objective = SliceObjective::new(&model, &acq).unwrap();
    let mut grad = vec![0.0; model.params().len()];
    objective.loss_and_grad(&model.params().values, &acq.directions.train_indices(), &mut grad).unwrap();
    for s in model.params().layout().segments().iter().filter(|s| s.name.starts_with("prior.")) {
        assert!(grad[s.range()].iter().all(|&g| g == 0.0), "{}", s.name);
    }
}
