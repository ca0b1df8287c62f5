mod common;

use amsa_core::fourier::{fft2, fft2_complex, freq_elementwise_product, ifft2, ifft2_complex, ComplexGrid};
use amsa_core::{Graph, Shape, Tensor};
use common::{circular_convolution, circular_correlation, dft2_naive, max_abs_diff, random, random_vec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fft_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (h, w) in [(4, 4), (8, 8), (16, 16), (32, 32), (4, 16), (32, 8)] {
        let x = random_vec(h * w, &mut rng);
        let f = fft2(h, w, &x).unwrap();
        let (re, im) = dft2_naive(h, w, &x, &vec![0.0; h * w]);
        assert!(max_abs_diff(&f.re, &re) <= 1e-9, "{h}x{w}");
        assert!(max_abs_diff(&f.im, &im) <= 1e-9, "{h}x{w}");
    }
}

#[test]
fn complex_fft_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (8, 16);
    let grid = ComplexGrid::new(h, w, random_vec(h * w, &mut rng), random_vec(h * w, &mut rng)).unwrap();
    let f = fft2_complex(&grid).unwrap();
    let (re, im) = dft2_naive(h, w, &grid.re, &grid.im);
    assert!(max_abs_diff(&f.re, &re) <= 1e-9);
    assert!(max_abs_diff(&f.im, &im) <= 1e-9);
}

#[test]
fn round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [4, 8, 16, 32] {
        let x = random_vec(n * n, &mut rng);
        let back = ifft2(&fft2(n, n, &x).unwrap()).unwrap();
        assert!(max_abs_diff(&x, &back) <= 1e-10);
    }
}

#[test]
fn shifted_delta_round_trip() {
    let (h, w) = (8, 8);
    let mut x = vec![0.0; h * w];
    x[3 * w + 5] = 1.0;
    let (re, im) = dft2_naive(h, w, &x, &vec![0.0; h * w]);
    let back = ifft2(&ComplexGrid::new(h, w, re, im).unwrap()).unwrap();
    assert!(max_abs_diff(&x, &back) <= 1e-12);
}

#[test]
fn constant_and_zero() {
    let f = fft2(4, 4, &[0.75; 16]).unwrap();
    assert!((f.re[0] - 12.0).abs() < 1e-12);
    assert!(f.re[1..].iter().chain(&f.im).all(|v| v.abs() < 1e-12));
    assert!(ifft2(&ComplexGrid::zeros(8, 4)).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn convolution_theorem_against_spatial_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [4, 8, 16, 32] {
        let f = random_vec(n * n, &mut rng);
        let g = random_vec(n * n, &mut rng);
        let (ff, fg) = (fft2(n, n, &f).unwrap(), fft2(n, n, &g).unwrap());
        let conv = ifft2(&freq_elementwise_product(&ff, &fg, false).unwrap()).unwrap();
        assert!(max_abs_diff(&conv, &circular_convolution(n, n, &f, &g)) <= 1e-8, "conv {n}");
        let corr = ifft2(&freq_elementwise_product(&ff, &fg, true).unwrap()).unwrap();
        assert!(max_abs_diff(&corr, &circular_correlation(n, n, &f, &g)) <= 1e-8, "corr {n}");
    }
}

#[test]
fn all_ones_spectrum_is_identity_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = fft2(8, 8, &random_vec(64, &mut rng)).unwrap();
    let mut delta = vec![0.0; 64];
    delta[0] = 1.0;
    let ones = fft2(8, 8, &delta).unwrap();
    assert_eq!(freq_elementwise_product(&a, &ones, false).unwrap(), a);
}

#[test]
fn batched_full_patch_equals_plane_fft() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(Shape::new(2, 3, 16, 16), &mut rng);
    let f = Graph::new().fft2_batched(&x, 16).unwrap();
    for plane in 0..6 {
        let src = &x.data()[plane * 256..(plane + 1) * 256];
        let grid = fft2(16, 16, src).unwrap();
        assert!(max_abs_diff(&f.re.data()[plane * 256..(plane + 1) * 256], &grid.re) <= 1e-12);
        assert!(max_abs_diff(&f.im.data()[plane * 256..(plane + 1) * 256], &grid.im) <= 1e-12);
    }
}

#[test]
fn batched_patches_are_independent_grids() {
    // 1x2x16x16 with patch 8 holds 2 channels x 4 patches = 8 grids
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(Shape::new(1, 2, 16, 16), &mut rng);
    let f = Graph::new().fft2_batched(&x, 8).unwrap();
    let mut grids = 0;
    for c in 0..2 {
        for py in [0, 8] {
            for px in [0, 8] {
                let patch: Vec<f64> = (0..64).map(|i| x.at(0, c, py + i / 8, px + i % 8)).collect();
                let grid = fft2(8, 8, &patch).unwrap();
                let got: Vec<f64> = (0..64).map(|i| f.re.at(0, c, py + i / 8, px + i % 8)).collect();
                assert!(max_abs_diff(&got, &grid.re) <= 1e-12);
                grids += 1;
            }
        }
    }
    assert_eq!(grids, 8);
}

#[test]
fn rejects_non_power_of_two() {
    assert!(matches!(fft2(6, 8, &[0.0; 48]), Err(amsa_core::Error::Dimension { axis: "height", .. })));
    assert!(matches!(
        Graph::new().fft2_batched(&Tensor::zeros(Shape::new(1, 1, 12, 12)), 8),
        Err(amsa_core::Error::Dimension { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parseval(seed in any::<u64>(), lh in 1u32..6, lw in 1u32..6) {
        let (h, w) = (1usize << lh, 1usize << lw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(h * w, &mut rng);
        let f = fft2(h, w, &x).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = f.re.iter().zip(&f.im).map(|(a, b)| a * a + b * b).sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy);
    }

    #[test]
    fn linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random_vec(256, &mut rng), random_vec(256, &mut rng));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let (fx, fy, fm) = (fft2(16, 16, &x).unwrap(), fft2(16, 16, &y).unwrap(), fft2(16, 16, &mix).unwrap());
        for i in 0..256 {
            prop_assert!((fm.re[i] - (alpha * fx.re[i] + beta * fy.re[i])).abs() <= 1e-10);
            prop_assert!((fm.im[i] - (alpha * fx.im[i] + beta * fy.im[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn complex_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = ComplexGrid::new(16, 8, random_vec(128, &mut rng), random_vec(128, &mut rng)).unwrap();
        let back = ifft2_complex(&fft2_complex(&grid).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&back.re, &grid.re) <= 1e-10);
        prop_assert!(max_abs_diff(&back.im, &grid.im) <= 1e-10);
    }
}
