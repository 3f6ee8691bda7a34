use ganselect::eval::{
    flatness_probe, frechet_distance, gaussian_kl, median, quantize_int8, quantize_tensor, sliced_wasserstein,
};
use ganselect::models::{init_params, sample_latent};
use ganselect::rng::seeded;
use ganselect::{Error, LatentPrior, NetworkSpec, Tensor};
use proptest::prelude::*;

/// Two-point 1D sample whose fitted moments (with `1/(n−1)`) are `(mu, var)`.
fn sample_with_moments(mu: f64, var: f64) -> Tensor {
    let h = (var / 2.0).sqrt();
    Tensor::matrix(2, 1, vec![mu - h, mu + h]).unwrap()
}

fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Simpson's rule for `∫ p log(p/q)` with `p = N(mu_p, var_p)`, `q = N(mu_q, var_q)`.
fn kl_by_integration(mu_p: f64, var_p: f64, mu_q: f64, var_q: f64) -> f64 {
    let sd = var_p.sqrt();
    let (a, b, n) = (mu_p - 15.0 * sd, mu_p + 15.0 * sd, 20_000);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let p = normal_pdf(x, mu_p, var_p);
        if p == 0.0 {
            0.0
        } else {
            p * (p / normal_pdf(x, mu_q, var_q)).ln()
        }
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn gaussian_kl_matches_numerical_integration() {
    let cases = [(1.0, 1.0, 0.0, 1.0), (0.0, 4.0, 0.0, 1.0), (-0.5, 0.3, 0.2, 2.0), (2.0, 1.5, -1.0, 0.7), (0.1, 0.01, 0.0, 1.0)];
    for (mu_f, var_f, mu_t, var_t) in cases {
        let kl = gaussian_kl(&sample_with_moments(mu_f, var_f), &[mu_t], &[vec![var_t]]).unwrap();
        let oracle = kl_by_integration(mu_f, var_f, mu_t, var_t);
        assert!((kl - oracle).abs() <= 1e-6, "{kl} vs {oracle}");
    }
    let kl = gaussian_kl(&sample_with_moments(1.0, 1.0), &[0.0], &[vec![1.0]]).unwrap();
    assert!((kl - 0.5).abs() < 1e-12);
    let kl = gaussian_kl(&sample_with_moments(0.0, 4.0), &[0.0], &[vec![1.0]]).unwrap();
    assert!((kl - 0.5 * (4.0 - 1.0 + 0.25f64.ln())).abs() < 1e-12);
}

#[test]
fn gaussian_kl_of_matching_moments_is_zero() {
    let a = 1.5f64.sqrt();
    let sample = Tensor::from_rows(&[[a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a]]).unwrap();
    let kl = gaussian_kl(&sample, &[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(kl.abs() <= 1e-10);

    let line = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
    assert!(matches!(
        gaussian_kl(&line, &[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn frechet_examples() {
    let a = sample_with_moments(0.0, 1.0);
    let b = sample_with_moments(0.0, 4.0);
    // (σa − σb)² with σ = 1 and 2
    let fd = frechet_distance(&a, &b).unwrap();
    assert!((fd - 1.0).abs() <= 1e-10, "{fd}");
    let c = sample_with_moments(0.0, 2.0);
    assert!((frechet_distance(&a, &c).unwrap() - (3.0 - 2.0 * 2f64.sqrt())).abs() <= 1e-10);

    for (mu, var) in [(1.0, 2.0), (-3.0, 0.5)] {
        let (m2, v2) = (0.5, 3.0);
        let fd = frechet_distance(&sample_with_moments(mu, var), &sample_with_moments(m2, v2)).unwrap();
        let oracle = (mu - m2) * (mu - m2) + (var.sqrt() - v2.sqrt()).powi(2);
        assert!((fd - oracle).abs() <= 1e-10);
    }

    let x = sample_latent(LatentPrior { dim: 2 }, 300, &mut seeded(0));
    assert!(frechet_distance(&x, &x).unwrap().abs() <= 1e-10);
    let shifted = x.select_rows(&(0..300).collect::<Vec<_>>());
    let shifted = Tensor::from_rows(&(0..300).map(|i| [shifted.at(i, 0) + 3.0, shifted.at(i, 1) + 4.0]).collect::<Vec<_>>())
        .unwrap();
    assert!((frechet_distance(&x, &shifted).unwrap() - 25.0).abs() <= 1e-9);
}

#[test]
fn sliced_wasserstein_examples() {
    let x = sample_latent(LatentPrior { dim: 2 }, 500, &mut seeded(1));
    assert_eq!(sliced_wasserstein(&x, &x, 16, &mut seeded(2)).unwrap(), 0.0);

    let zero = Tensor::matrix(1, 1, vec![0.0]).unwrap();
    let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    assert!((sliced_wasserstein(&zero, &one, 8, &mut seeded(3)).unwrap() - 1.0).abs() < 1e-15);

    let a = sample_latent(LatentPrior { dim: 2 }, 10_000, &mut seeded(4));
    let b = sample_latent(LatentPrior { dim: 2 }, 10_000, &mut seeded(5));
    let b = Tensor::from_rows(&(0..b.rows()).map(|i| [b.at(i, 0) + 1.0, b.at(i, 1)]).collect::<Vec<_>>()).unwrap();
    let sw = sliced_wasserstein(&a, &b, 128, &mut seeded(6)).unwrap();
    assert!((sw / 0.5 - 1.0).abs() <= 0.1, "{sw}");

    let short = sample_latent(LatentPrior { dim: 2 }, 10, &mut seeded(7));
    assert!(matches!(sliced_wasserstein(&a, &short, 4, &mut seeded(8)), Err(Error::Usage(_))));
}

#[test]
fn probe_on_a_quadratic_matches_the_chi_square_mean() {
    let objective = |p: &[f64]| Ok(0.5 * p.iter().map(|x| x * x).sum::<f64>());
    let psi = vec![0.3; 10];
    let alpha = 0.1;
    let report = flatness_probe(objective, &psi, &[0.0, alpha], 10_000, 7).unwrap();
    let mean = report.values[1].iter().sum::<f64>() / 10_000.0;
    let expected = report.baseline + alpha * alpha * 10.0 / 2.0;
    assert!((mean / expected - 1.0).abs() <= 0.05, "{mean} vs {expected}");
    assert!(report.values[0].iter().all(|v| *v == report.baseline));
}

#[test]
fn probe_median_grows_with_alpha_on_a_quadratic() {
    let objective = |p: &[f64]| Ok(0.5 * p.iter().map(|x| x * x).sum::<f64>());
    let alphas = [0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3];
    let report = flatness_probe(objective, &[0.0; 20], &alphas, 50, 11).unwrap();
    let medians: Vec<f64> = report.values.iter().map(|v| median(v).unwrap()).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}

#[test]
fn probe_is_independent_of_scheduling() {
    let objective = |p: &[f64]| Ok(p.iter().map(|x| x.sin()).sum::<f64>());
    let a = flatness_probe(objective, &[0.1, 0.2, 0.3], &[0.01, 0.1], 20, 3).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| flatness_probe(objective, &[0.1, 0.2, 0.3], &[0.01, 0.1], 20, 3).unwrap());
    assert_eq!(a, b);
}

#[test]
fn quantizing_a_linspace_is_within_half_a_step() {
    let values: Vec<f64> = (0..256).map(|i| -1.0 + 2.0 * i as f64 / 255.0).collect();
    let q = quantize_tensor(&values);
    assert!((q.scale - 2.0 / 255.0).abs() < 1e-15);
    for (w, r) in values.iter().zip(q.dequantize()) {
        assert!((w - r).abs() <= 1.0 / 255.0 + 1e-15);
    }
}

#[test]
fn zero_network_quantizes_exactly() {
    let spec = NetworkSpec::generator(2, 2, 1, 8);
    let zeros = ganselect::ParamVector::zeros(&spec);
    let (q, scales) = quantize_int8(&zeros);
    assert_eq!(q, zeros);
    assert!(scales.iter().all(|s| s.scale == 0.0 && s.max_abs_error == 0.0));

    let params = init_params(&spec, &mut seeded(0));
    let (q, scales) = quantize_int8(&params);
    assert_eq!(scales.len(), 4);
    for (block, s) in params.blocks().into_iter().zip(&scales) {
        for i in block {
            assert!((params.values()[i] - q.values()[i]).abs() <= s.scale / 2.0 + 1e-12);
        }
    }
}

fn rotate(x: &Tensor, angle: f64) -> Tensor {
    let (c, s) = (angle.cos(), angle.sin());
    Tensor::from_rows(&(0..x.rows()).map(|i| [c * x.at(i, 0) - s * x.at(i, 1), s * x.at(i, 0) + c * x.at(i, 1)]).collect::<Vec<_>>())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantization_error_is_at_most_half_a_step(values in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let q = quantize_tensor(&values);
        let back = q.dequantize();
        for (w, r) in values.iter().zip(&back) {
            prop_assert!((w - r).abs() <= q.scale / 2.0 + 1e-12 * w.abs().max(1.0));
        }
        prop_assert!(q.codes.iter().all(|c| (-128..=127).contains(&(*c as i32))));
    }

    #[test]
    fn gaussian_kl_is_non_negative(seed in any::<u64>(), scale in 0.2f64..3.0, shift in -2.0f64..2.0) {
        let x = sample_latent(LatentPrior { dim: 2 }, 50, &mut seeded(seed)).map(|v| scale * v + shift);
        let kl = gaussian_kl(&x, &[0.5, -0.5], &[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn frechet_is_symmetric(seed in any::<u64>(), scale in 0.2f64..3.0) {
        let a = sample_latent(LatentPrior { dim: 3 }, 40, &mut seeded(seed));
        let b = sample_latent(LatentPrior { dim: 3 }, 60, &mut seeded(seed ^ 1)).map(|v| scale * v + 0.3);
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() <= 1e-10);
    }
}

#[test]
fn sliced_wasserstein_is_rotation_invariant() {
    let a = sample_latent(LatentPrior { dim: 2 }, 2000, &mut seeded(30));
    let b = sample_latent(LatentPrior { dim: 2 }, 2000, &mut seeded(31)).map(|v| 0.5 * v + 0.7);
    let base = sliced_wasserstein(&a, &b, 512, &mut seeded(32)).unwrap();
    for angle in [0.4, 1.3, 2.9] {
        let rotated = sliced_wasserstein(&rotate(&a, angle), &rotate(&b, angle), 512, &mut seeded(33)).unwrap();
        assert!((rotated / base - 1.0).abs() <= 0.05, "{rotated} vs {base}");
    }
}
