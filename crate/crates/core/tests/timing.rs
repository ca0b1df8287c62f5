//! Wall-clock scaling checks. They live in their own test binary with a
//! single test so nothing else competes for the core while they run.

mod common;

use std::hint::black_box;

use amsa_core::bench::{bench_attention, loglog_slope, time_median_ns, AttentionMethod, BenchOptions};
use amsa_core::fourier::fft2;
use common::dft2_naive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slope_of(sizes: &[(usize, usize)], repeats: usize, run: impl Fn(usize, usize, &[f64])) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&(h, w)| {
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = time_median_ns(repeats, || run(h, w, &data));
            ((h * w) as f64, t)
        })
        .collect();
    loglog_slope(&points)
}

#[test]
fn timing_scales_as_claimed() {
    // fft2 over n = 2^8 ... 2^16 pixels
    let fft_sizes: Vec<(usize, usize)> = (8..=16).map(|e: u32| (1 << (e / 2), 1 << e.div_ceil(2))).collect();
    let fft = slope_of(&fft_sizes, 7, |h, w, d| {
        black_box(fft2(h, w, d).unwrap());
    });
    assert!(fft <= 1.3, "fft2 slope {fft}");

    // the naive transform is quadratic in n, so a smaller range keeps it quick
    let naive_sizes: Vec<(usize, usize)> = (6..=12).map(|e: u32| (1 << (e / 2), 1 << e.div_ceil(2))).collect();
    let naive = slope_of(&naive_sizes, 5, |h, w, d| {
        black_box(dft2_naive(h, w, d, &vec![0.0; d.len()]));
    });
    assert!(naive >= 1.8, "naive DFT slope {naive}");

    // medians rise with n for both attention operators
    let report = bench_attention(&BenchOptions {
        sizes: vec![64, 1024, 4096],
        repeats: 5,
        ..BenchOptions::default()
    })
    .unwrap();
    for method in AttentionMethod::ALL {
        let m = report.medians(method);
        assert!(m.windows(2).all(|w| w[1].1 >= w[0].1), "{method:?}: {m:?}");
    }
}
