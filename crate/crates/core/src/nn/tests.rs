use super::*;
use crate::math::Vec3;
use crate::rng;
use alloc::vec::Vec;

fn random_point(r: &mut rng::Rng, extent: f64) -> Vec3 {
    Vec3::new(
        r.random_range(-extent..extent),
        r.random_range(-extent..extent),
        r.random_range(-extent..extent),
    )
}

fn field(config: SdfConfig, encoding: Encoder, seed: u64) -> SdfField<f64> {
    SdfField::new(config, encoding, &mut rng::stream(seed, &[]))
}

fn tiny_config(skip: Option<usize>) -> SdfConfig {
    SdfConfig {
        hidden_layers: 2,
        width: 6,
        skip_layer: skip,
        ..SdfConfig::default()
    }
}

const SMALL_ENCODING: Encoder = Encoder {
    num_freqs: 1,
    include_raw: true,
};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn input_gradient_matches_finite_differences() {
    let f = field(SdfConfig::default(), PositionalEncoding::default().position(), 1);
    let mut r = rng::stream(2, &[]);
    let h = 1e-4;
    for _ in 0..100 {
        let x = random_point(&mut r, 0.8);
        let (_, g) = f.eval(x);
        let fd = Vec3::new(
            (f.eval(x + Vec3::X * h).0 - f.eval(x - Vec3::X * h).0) / (2.0 * h),
            (f.eval(x + Vec3::Y * h).0 - f.eval(x - Vec3::Y * h).0) / (2.0 * h),
            (f.eval(x + Vec3::Z * h).0 - f.eval(x - Vec3::Z * h).0) / (2.0 * h),
        );
        let err = (g - fd).length() / g.length().max(1e-8);
        assert!(err < 1e-4, "x={x:?} g={g:?} fd={fd:?}");
    }
}

#[test]
fn value_only_forward_agrees() {
    let f = field(tiny_config(Some(1)), SMALL_ENCODING, 4);
    let xs = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.5, 0.0, 0.25)];
    let a = f.forward(&xs);
    let b = f.forward_with_gradient(&xs);
    for i in 0..2 {
        assert!((a[i] - b.values[i]).abs() < 1e-15);
    }
}

#[test]
fn one_unit_network_matches_hand_chain_rule() {
    let cfg = SdfConfig {
        hidden_layers: 1,
        width: 1,
        ..SdfConfig::default()
    };
    let enc = Encoder {
        num_freqs: 0,
        include_raw: true,
    };
    let mut f = field(cfg, enc, 0);
    // Layer 0: w1 (3), b1; layer 1: w2, b2.
    f.mlp.params = alloc::vec![0.02, -0.01, 0.03, 0.005, 0.7, -0.1];
    let x0 = Vec3::new(0.3, -0.2, 0.5);
    let w: f64 = 30.0;
    let z = 0.02 * 0.3 + -0.01 * -0.2 + 0.03 * 0.5 + 0.005;
    let g = 0.7 * (w * z).sin() - 0.1;
    let batch = f.forward_with_gradient(&[x0]);
    assert!((batch.values[0] - g).abs() < 1e-15);

    // L = g²
    let mut grad = alloc::vec![0.0; f.param_count()];
    f.backward(&batch.cache, &[2.0 * g], &[[0.0; 3]], &mut grad);
    let dz = 2.0 * g * 0.7 * w * (w * z).cos();
    let expect = [dz * 0.3, dz * -0.2, dz * 0.5, dz, 2.0 * g * (w * z).sin(), 2.0 * g];
    for (a, b) in grad.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{grad:?} vs {expect:?}");
    }

    // L = ∂g/∂x₀ = 0.7·w·cos(wz)·w1₀
    let mut grad = alloc::vec![0.0; f.param_count()];
    f.backward(&batch.cache, &[0.0], &[[1.0, 0.0, 0.0]], &mut grad);
    let c = (w * z).cos();
    let s = (w * z).sin();
    let dz = -0.7 * w * w * s * 0.02;
    let expect = [
        dz * 0.3 + 0.7 * w * c,
        dz * -0.2,
        dz * 0.5,
        dz,
        w * c * 0.02,
        0.0,
    ];
    for (a, b) in grad.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{grad:?} vs {expect:?}");
    }
}

fn eikonal_loss_of(f: &SdfField<f64>, xs: &[Vec3]) -> f64 {
    let b = f.forward_with_gradient(xs);
    b.gradients
        .iter()
        .map(|g| ((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() - 1.0).powi(2))
        .sum::<f64>()
        / xs.len() as f64
}

fn mixed_loss_of(f: &SdfField<f64>, xs: &[Vec3]) -> f64 {
    let b = f.forward_with_gradient(xs);
    b.values.iter().map(|v| v * v).sum::<f64>() + eikonal_loss_of(f, xs)
}

fn check_param_gradient(f: &mut SdfField<f64>, xs: &[Vec3], loss: fn(&SdfField<f64>, &[Vec3]) -> f64, with_values: bool) {
    let b = f.forward_with_gradient(xs);
    let n = xs.len() as f64;
    let d_values: Vec<f64> = b
        .values
        .iter()
        .map(|v| if with_values { 2.0 * v } else { 0.0 })
        .collect();
    let d_grads: Vec<[f64; 3]> = b
        .gradients
        .iter()
        .map(|g| {
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            let c = 2.0 * (norm - 1.0) / (norm * n);
            [c * g[0], c * g[1], c * g[2]]
        })
        .collect();
    let mut grad = alloc::vec![0.0; f.param_count()];
    f.backward(&b.cache, &d_values, &d_grads, &mut grad);
    let h = 1e-6;
    for i in 0..f.param_count() {
        let p = f.mlp.params[i];
        f.mlp.params[i] = p + h;
        let lp = loss(f, xs);
        f.mlp.params[i] = p - h;
        let lm = loss(f, xs);
        f.mlp.params[i] = p;
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            rel_err(grad[i], fd) < 1e-4 || (grad[i] - fd).abs() < 1e-9,
            "param {i}: {} vs {fd}",
            grad[i]
        );
    }
}

#[test]
fn eikonal_parameter_gradient_matches_finite_differences() {
    let mut f = field(tiny_config(None), SMALL_ENCODING, 5);
    assert!(f.param_count() <= 200);
    let mut r = rng::stream(6, &[]);
    let xs: Vec<Vec3> = (0..5).map(|_| random_point(&mut r, 0.7)).collect();
    check_param_gradient(&mut f, &xs, eikonal_loss_of, false);
}

#[test]
fn skip_connection_gradient_matches_finite_differences() {
    let mut f = field(tiny_config(Some(1)), SMALL_ENCODING, 7);
    let mut r = rng::stream(8, &[]);
    let xs: Vec<Vec3> = (0..4).map(|_| random_point(&mut r, 0.7)).collect();
    check_param_gradient(&mut f, &xs, mixed_loss_of, true);
}

#[test]
fn zero_adjoints_give_zero_gradients() {
    let f = field(tiny_config(Some(1)), SMALL_ENCODING, 9);
    let b = f.forward_with_gradient(&[Vec3::new(0.1, 0.1, 0.1)]);
    let mut grad = alloc::vec![0.0; f.param_count()];
    f.backward(&b.cache, &[0.0], &[[0.0; 3]], &mut grad);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn geometric_init_shapes_a_sphere() {
    let mut f = field(SdfConfig::default(), PositionalEncoding::default().position(), 11);
    let report = init_geometric(&mut f, &GeometricInit::default(), 12).unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(f.eval(Vec3::ZERO).0 < 0.0);
    assert!(f.eval(Vec3::new(0.95, 0.0, 0.0)).0 > 0.0);
    // Independent probe draw.
    assert!(geometric_init_report(&f, 0.5, 99).passed());
}

#[test]
fn geometric_init_rejects_bad_radius() {
    let mut f = field(tiny_config(None), SMALL_ENCODING, 0);
    let init = GeometricInit {
        radius: 1.5,
        ..GeometricInit::default()
    };
    assert!(init_geometric(&mut f, &init, 0).is_err());
}

fn appearance(seed: u64) -> AppearanceField<f64> {
    let e = PositionalEncoding::default();
    AppearanceField::new(
        AppearanceConfig::default(),
        e.position(),
        e.direction(),
        &mut rng::stream(seed, &[]),
    )
}

#[test]
fn appearance_range_and_determinism() {
    let a = appearance(1);
    let mut r = rng::stream(2, &[]);
    for _ in 0..50 {
        let x = random_point(&mut r, 1.0);
        let v = random_point(&mut r, 1.0).normalize();
        let n = random_point(&mut r, 1.0).normalize();
        let c = a.eval(x, v, n).unwrap();
        assert!(c.0.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(c, a.eval(x, v, n).unwrap());
        let v2 = (v + Vec3::new(1e-9, 0.0, 0.0)).normalize();
        let c2 = a.eval(x, v2, n).unwrap();
        assert!(c.max_abs_diff(c2) < 1e-6);
    }
}

#[test]
fn appearance_rejects_non_unit_inputs() {
    let a = appearance(1);
    assert!(a.eval(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), Vec3::Z).is_err());
    assert!(a.eval(Vec3::ZERO, Vec3::X, Vec3::new(0.0, 0.0, 0.5)).is_err());
}

#[test]
fn appearance_backward_matches_finite_differences() {
    let e = Encoder {
        num_freqs: 1,
        include_raw: true,
    };
    let mut a = AppearanceField::<f64>::new(
        AppearanceConfig {
            hidden_layers: 2,
            width: 5,
        },
        e,
        e,
        &mut rng::stream(3, &[]),
    );
    let qs = [
        AppearanceQuery {
            position: Vec3::new(0.1, -0.3, 0.2),
            direction: Vec3::new(0.0, 0.6, 0.8),
            normal: Vec3::new(0.36, 0.48, 0.8),
        },
        AppearanceQuery {
            position: Vec3::new(-0.4, 0.1, 0.0),
            direction: Vec3::X,
            normal: Vec3::new(0.0, -0.6, 0.8),
        },
    ];
    // Nonzero biases keep every ReLU away from its kink.
    let mut r = rng::stream(4, &[]);
    for p in &mut a.mlp.params {
        if *p == 0.0 {
            *p = r.random_range(0.05..0.3);
        }
    }
    let weights = [[0.3, -1.0, 0.5], [1.2, 0.1, -0.7]];
    let loss = |a: &AppearanceField<f64>, qs: &[AppearanceQuery]| -> f64 {
        let (c, _) = a.forward(qs);
        c.iter()
            .zip(&weights)
            .map(|(c, w)| c[0] * w[0] + c[1] * w[1] + c[2] * w[2])
            .sum()
    };
    let (_, cache) = a.forward(&qs);
    let mut grad = alloc::vec![0.0; a.param_count()];
    let d_n = a.backward(&cache, &weights, &mut grad);
    let h = 1e-6;
    for i in 0..a.param_count() {
        let p = a.mlp.params[i];
        a.mlp.params[i] = p + h;
        let lp = loss(&a, &qs);
        a.mlp.params[i] = p - h;
        let lm = loss(&a, &qs);
        a.mlp.params[i] = p;
        let fd = (lp - lm) / (2.0 * h);
        assert!(rel_err(grad[i], fd) < 1e-4 || (grad[i] - fd).abs() < 1e-9, "param {i}: {} vs {fd}", grad[i]);
    }
    for (q, dn) in d_n.iter().enumerate() {
        for k in 0..3 {
            let mut qp = qs;
            let mut e = [0.0; 3];
            e[k] = h;
            qp[q].normal = qs[q].normal + Vec3::from_array(e);
            let lp = loss(&a, &qp);
            qp[q].normal = qs[q].normal - Vec3::from_array(e);
            let lm = loss(&a, &qp);
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel_err(dn[k], fd) < 1e-4 || (dn[k] - fd).abs() < 1e-9);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let f = field(SdfConfig::default(), PositionalEncoding::default().position(), 13);
    let g: SdfField<f32> = f.cast();
    let xs = [Vec3::new(0.2, 0.1, -0.3), Vec3::new(-0.6, 0.4, 0.1)];
    let a = f.forward_with_gradient(&xs);
    let b = g.forward_with_gradient(&xs);
    for i in 0..2 {
        assert!((a.values[i] - b.values[i] as f64).abs() < 1e-4);
    }
}

#[test]
fn sharpness_floor() {
    let mut f = field(tiny_config(None), SMALL_ENCODING, 0);
    assert!((f.sharpness() - 20.0).abs() < 1e-12);
    f.log_sharpness = -50.0;
    f.clamp_sharpness();
    assert!((f.sharpness() - MIN_SHARPNESS).abs() < 1e-15);
}
