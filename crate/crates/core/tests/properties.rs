//! Invariants over randomized inputs.

use std::path::Path;

use approx::assert_relative_eq;
use proptest::prelude::*;

use ugac_core::data::{decode_pgm, encode_pgm, Image};
use ugac_core::ggd::{ggd_logpdf, ggd_variance, l_alpha_beta};
use ugac_core::metrics::{psnr, ssim};
use ugac_core::tensor::Tensor;
use ugac_core::uncertainty::{average_ranks, pearson, spearman};

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..=1.0f64, w * h).prop_map(move |px| Image::new(w, h, px).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgm_roundtrip_within_quantization(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let px: Vec<f64> = (0..w * h).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 11) as f64) / (1u64 << 53) as f64).collect();
        let img = Image::new(w, h, px).unwrap();
        let back = decode_pgm(&encode_pgm(&img).unwrap(), Path::new("mem.pgm")).unwrap();
        prop_assert_eq!((back.width, back.height), (w, h));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
        // A second pass is lossless.
        let again = decode_pgm(&encode_pgm(&back).unwrap(), Path::new("mem.pgm")).unwrap();
        prop_assert_eq!(again.pixels, back.pixels);
    }

    #[test]
    fn ssim_symmetric_and_bounded(x in image(12, 13), y in image(12, 13)) {
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_symmetric_and_monotone(x in image(8, 8), y in image(8, 8), t in 0.1..0.9f64) {
        let p = psnr(&x, &y, 1.0).unwrap();
        prop_assert_eq!(p, psnr(&y, &x, 1.0).unwrap());
        // Moving y towards x can only raise PSNR.
        let closer = Image::new(8, 8, x.pixels.iter().zip(&y.pixels).map(|(a, b)| a + t * (b - a)).collect()).unwrap();
        prop_assert!(psnr(&x, &closer, 1.0).unwrap() >= p);
    }

    #[test]
    fn loss_reduces_to_norms(r in prop::collection::vec(-3.0..3.0f64, 1..40), off in -1.0..1.0f64) {
        let n = r.len();
        let y: Vec<f64> = r.iter().map(|v| v * 0.5 + off).collect();
        let t = |v: &[f64]| Tensor::new(v.to_vec(), &[n]).unwrap();
        let l1 = l_alpha_beta(&t(&r), &Tensor::full(&[n], 1.0), &Tensor::full(&[n], 1.0), &t(&y)).unwrap().item();
        let mae = r.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        prop_assert!((l1 - mae).abs() < 1e-12);
    }

    #[test]
    fn loss_is_minimized_over_alpha_at_the_mle(res in 0.01..2.0f64, beta in 0.6..4.0f64) {
        // For one pixel, α* = |r| · β^(1/β) minimizes the loss in α.
        let s = |v: f64| Tensor::new(vec![v], &[1]).unwrap();
        let f = |a: f64| l_alpha_beta(&s(res), &s(a), &s(beta), &s(0.0)).unwrap().item();
        let a_star = res * beta.powf(1.0 / beta);
        prop_assert!(f(a_star) <= f(a_star * 1.05) && f(a_star) <= f(a_star * 0.95));
    }

    #[test]
    fn logpdf_symmetric_and_variance_scales(x in -5.0..5.0f64, mu in -1.0..1.0f64, a in 0.1..3.0f64, b in 0.3..6.0f64, k in 0.2..5.0f64) {
        let l = ggd_logpdf(mu + x, mu, a, b).unwrap();
        // mu ± x rounds differently, so compare relative to the magnitude.
        prop_assert!((l - ggd_logpdf(mu - x, mu, a, b).unwrap()).abs() <= 1e-12 * l.abs().max(1.0));
        prop_assert!(l <= ggd_logpdf(mu, mu, a, b).unwrap());
        assert_relative_eq!(ggd_variance(k * a, b).unwrap(), k * k * ggd_variance(a, b).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-10.0..10.0f64, 3..30), ys in prop::collection::vec(-10.0..10.0f64, 30)) {
        let ys = &ys[..xs.len()];
        let s = spearman(&xs, ys);
        let warped: Vec<f64> = xs.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let s2 = spearman(&warped, ys);
        prop_assert!(s.is_nan() && s2.is_nan() || (s - s2).abs() < 1e-12);
        let n = xs.len() as f64;
        prop_assert!((average_ranks(&xs).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        let p = pearson(&xs, ys);
        prop_assert!(p.is_nan() || (-1.0..=1.0).contains(&p));
    }
}
