mod common;

use common::{rng, ssim_window_loop, uniform};
use nalgebra::DMatrix;
use outfitsynth::domain::ItemImage;
use outfitsynth::eval::{fcts_from_scores, fid, luminance, matrix_sqrt_psd, ssim, ssim_gray, EmbeddingSet, MetricReport, SSIM_C1};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn image(seed: u64, size: usize) -> ItemImage {
    ItemImage::new(size, uniform(&mut rng(seed), 3 * size * size, -1.0, 1.0).into_iter().map(|v| v as f32).collect()).unwrap()
}

fn gaussian(n: usize, d: usize, mean: f64, sd: f64, seed: u64) -> EmbeddingSet {
    let dist = Normal::new(mean, sd).unwrap();
    let mut r = rng(seed);
    EmbeddingSet::new((0..n).map(|_| (0..d).map(|_| dist.sample(&mut r)).collect()).collect(), "draws").unwrap()
}

#[test]
fn ssim_identity_and_symmetry() {
    let (x, y) = (image(1, 32), image(2, 32));
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    assert!(ssim(&x, &y).unwrap() < 0.5);
}

#[test]
fn ssim_matches_direct_windows() {
    let (x, y) = (image(3, 24), image(4, 24));
    let (a, b) = (luminance(&x), luminance(&y));
    let want = ssim_window_loop(&a, &b, 24, 24);
    assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-6);
    // Correlated pair, so the structure term is far from zero.
    let c: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.8 * p + 0.2 * q).collect();
    assert!((ssim_gray(&a, &c, 24, 24).unwrap() - ssim_window_loop(&a, &c, 24, 24)).abs() < 1e-6);
    let (r1, r2) = (uniform(&mut rng(5), 13 * 17, 0.0, 1.0), uniform(&mut rng(6), 13 * 17, 0.0, 1.0));
    assert!((ssim_gray(&r1, &r2, 13, 17).unwrap() - ssim_window_loop(&r1, &r2, 13, 17)).abs() < 1e-6);
}

#[test]
fn constant_images_reduce_to_luminance_term() {
    let (a, b) = (0.2, 0.4);
    let got = ssim_gray(&[a; 256], &[b; 256], 16, 16).unwrap();
    let want = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn square_root_reconstructs_spd() {
    let b = DMatrix::from_vec(8, 8, uniform(&mut rng(7), 64, -1.0, 1.0));
    let a = b.transpose() * &b;
    let s = matrix_sqrt_psd(&a).unwrap();
    assert!((&s * &s - &a).amax() < 1e-6);
    assert!((&s - s.transpose()).amax() < 1e-9);
    assert!(matrix_sqrt_psd(&DMatrix::from_vec(2, 3, vec![0.0; 6])).is_err());
    assert!(matrix_sqrt_psd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
}

#[test]
fn square_root_of_rank_deficient_matrix() {
    let v = DMatrix::from_vec(5, 1, uniform(&mut rng(8), 5, -1.0, 1.0));
    let a = &v * v.transpose();
    let s = matrix_sqrt_psd(&a).unwrap();
    assert!((&s * &s - &a).amax() < 1e-6);
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let y = gaussian(200, 6, 0.0, 1.0, 9);
    assert!(fid(&y, &y).unwrap().abs() < 1e-6);
}

#[test]
fn univariate_fid_closed_form() {
    let (y, y2) = (gaussian(100_000, 1, 0.0, 1.0, 10), gaussian(100_000, 1, 1.0, 1.0, 11));
    let v = fid(&y, &y2).unwrap();
    assert!((v - 1.0).abs() < 0.05, "{v}");
    let y3 = gaussian(100_000, 1, 0.0, 2.0, 12);
    assert!((fid(&y, &y3).unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn fid_rejects_mismatched_dimensions() {
    assert!(fid(&gaussian(10, 2, 0.0, 1.0, 1), &gaussian(10, 3, 0.0, 1.0, 2)).is_err());
    assert!(EmbeddingSet::new(vec![vec![1.0]], "one").is_err());
}

#[test]
fn metrics_are_bit_stable() {
    let (y, y2) = (gaussian(50, 4, 0.0, 1.0, 13), gaussian(50, 4, 0.5, 1.0, 14));
    assert_eq!(fid(&y, &y2).unwrap().to_bits(), fid(&y, &y2).unwrap().to_bits());
    let (x, z) = (image(15, 32), image(16, 32));
    assert_eq!(ssim(&x, &z).unwrap().to_bits(), ssim(&x, &z).unwrap().to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fid_is_nonnegative_and_symmetric(seed in any::<u64>(), shift in -2.0f64..2.0, d in 1usize..5) {
        let (y, y2) = (gaussian(30, d, 0.0, 1.0, seed), gaussian(30, d, shift, 1.5, seed ^ 1));
        let (a, b) = (fid(&y, &y2).unwrap(), fid(&y2, &y).unwrap());
        prop_assert!(a >= -1e-6);
        prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn fcts_is_a_fraction(p in proptest::collection::vec(-3.0f64..3.0, 1..50), seed in any::<u64>()) {
        let n = uniform(&mut rng(seed), p.len(), -3.0, 3.0);
        let v = fcts_from_scores(&p, &n).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn fcts_hand_count() {
    assert_eq!(fcts_from_scores(&[3.0, 1.0, 5.0, 2.0], &[2.0; 4]).unwrap(), 0.5);
}

#[test]
fn report_round_trips_through_json() {
    let text = r#"{"ssim":{"bag":0.5},"fid":{"bag":1.25},"fcts":0.75,"n_cmp":4,"scorer":"oracle","mask_strategy":"user","seed":3,"config_hash":"ab","split":"test","lpips":null}"#;
    let r = MetricReport::from_json(text).unwrap();
    assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r);
    assert!(r.to_csv().contains("fcts"));
}
