use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvinr_core::geometry::{
    downsample_thick, forward_model, rotate, upsample_adjoint, AcquisitionConfig, ForwardModel, Image2D,
    RotationDirection, ViewAngle,
};

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image2D {
    Image2D::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
}

/// Bilinear sample with zero outside the pixel grid, written as a tent-kernel sum.
fn tent_sample(img: &Image2D, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for yi in (y.floor() as i64)..=(y.floor() as i64 + 1) {
        for xi in (x.floor() as i64)..=(x.floor() as i64 + 1) {
            if xi < 0 || yi < 0 || xi >= img.width as i64 || yi >= img.height as i64 {
                continue;
            }
            let w = (1.0 - (x - xi as f64).abs()).max(0.0) * (1.0 - (y - yi as f64).abs()).max(0.0);
            acc += w * img.get(xi as usize, yi as usize);
        }
    }
    acc
}

/// Rotation by pulling each output pixel back through a complex rotation
/// about the image centre, then an explicit block mean over slice rows.
fn oracle(img: &Image2D, theta: f64, ts: usize) -> Vec<Vec<f64>> {
    let (cx, cy) = ((img.width as f64 - 1.0) / 2.0, (img.height as f64 - 1.0) / 2.0);
    let back = (theta.cos(), -theta.sin());
    let rotated: Vec<Vec<f64>> = (0..img.height)
        .map(|y| {
            (0..img.width)
                .map(|x| {
                    let (re, im) = (x as f64 - cx, y as f64 - cy);
                    let sx = re * back.0 - im * back.1;
                    let sy = re * back.1 + im * back.0;
                    tent_sample(img, cx + sx, cy + sy)
                })
                .collect()
        })
        .collect();
    rotated
        .chunks(ts)
        .map(|rows| (0..img.width).map(|x| rows.iter().map(|r| r[x]).sum::<f64>() / ts as f64).collect())
        .collect()
}

#[test]
fn ramp_matches_independent_oracle() {
    let ramp = Image2D::from_fn(16, 16, |x, y| 0.25 * x as f64 + 0.5 * y as f64 + 1.0);
    let theta = std::f64::consts::FRAC_PI_4;
    let view = ViewAngle::new(theta, [theta.cos(), theta.sin(), 0.0]);
    let lr = forward_model(&ramp, &view, &AcquisitionConfig::noiseless(4)).unwrap();
    let expected = oracle(&ramp, theta, 4);
    assert_eq!((lr.width, lr.height), (16, 4));
    let mut worst: f64 = 0.0;
    for (y, row) in expected.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            worst = worst.max((lr.get(x, y) - v).abs());
        }
    }
    assert!(worst < 1e-12, "max abs diff {worst}");
}

#[test]
fn oracle_agrees_at_other_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(12, 12, &mut rng);
    for theta in [0.3, 1.2, 2.9] {
        let view = ViewAngle::new(theta, [theta.cos(), theta.sin(), 0.0]);
        let lr = forward_model(&img, &view, &AcquisitionConfig::noiseless(3)).unwrap();
        for (y, row) in oracle(&img, theta, 3).iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                assert!((lr.get(x, y) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for ts in [1, 2, 4, 8] {
        for _ in 0..4 {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let op = ForwardModel::new(16, 16, &ViewAngle::new(theta, [1.0, 0.0, 0.0]), ts).unwrap();
            let x = random_image(16, 16, &mut rng).pixels;
            let y: Vec<f64> = (0..op.lr_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut scratch = vec![0.0; op.hr_len()];
            let mut mx = vec![0.0; op.lr_len()];
            let mut mty = vec![0.0; op.hr_len()];
            op.apply(&x, &mut scratch, &mut mx);
            op.apply_adjoint(&y, &mut scratch, &mut mty);
            let lhs: f64 = mx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&mty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "t_s {ts}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn thick_slice_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for ts in [1, 2, 4, 8] {
        let x = random_image(9, 16, &mut rng);
        let y = random_image(9, 16 / ts, &mut rng);
        let lhs = downsample_thick(&x, ts).unwrap().dot(&y);
        let rhs = x.dot(&upsample_adjoint(&y, ts).unwrap());
        assert!((lhs - rhs).abs() < 1e-12, "t_s {ts}");
    }
}

#[test]
fn forward_model_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for ts in [1, 2, 4, 8] {
        let x = random_image(16, 16, &mut rng);
        let y = random_image(16, 16, &mut rng);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo = Image2D::from_fn(16, 16, |i, j| a * x.get(i, j) + b * y.get(i, j));
        let view = ViewAngle::new(rng.random_range(0.0..3.0), [1.0, 0.0, 0.0]);
        let cfg = AcquisitionConfig::noiseless(ts);
        let m = |img: &Image2D| forward_model(img, &view, &cfg).unwrap();
        let (mc, mx, my) = (m(&combo), m(&x), m(&y));
        for k in 0..mc.len() {
            assert!((mc.pixels[k] - (a * mx.pixels[k] + b * my.pixels[k])).abs() < 1e-12);
        }
    }
}

#[test]
fn rotation_round_trip_on_smooth_image() {
    let (w, h) = (48, 48);
    let img = Image2D::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        0.5 + 0.3 * (2.0 * std::f64::consts::PI * u).sin() * (2.0 * std::f64::consts::PI * v).cos()
    });
    let circle = Image2D::inscribed_circle_mask(w, h);
    for theta in [0.2, 0.7, 1.3, 2.4] {
        let back = rotate(&rotate(&img, theta, RotationDirection::Forward), theta, RotationDirection::Inverse);
        // stay clear of zero fill near the rim
        let (cx, cy, r) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w as f64 / 2.0 - 2.0);
        let mut se = 0.0;
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                if circle[y * w + x] && (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    se += (back.get(x, y) - img.get(x, y)).powi(2);
                    count += 1;
                }
            }
        }
        let rmse = (se / count as f64).sqrt();
        assert!(rmse < 0.01 * 0.6, "theta {theta}: rmse {rmse}");
    }
}

proptest! {
    #[test]
    fn thick_slice_preserves_mean(seed in any::<u64>(), ts in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(7, 16, &mut rng);
        let lr = downsample_thick(&img, ts).unwrap();
        prop_assert!((lr.mean() - img.mean()).abs() < 1e-14);
    }
}
