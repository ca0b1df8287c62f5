//! Wall-clock scaling of frequency-domain versus softmax attention, and
//! closed-form multiply-add counts.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{frequency_attention, patch_fft_macs, softmax_attention, BaselineAttention, Fsas};
use crate::error::{Error, Result};
use crate::network::{AmsaUnet, ModelConfig};
use crate::tensor::{Graph, Shape, Tensor};

pub const DEFAULT_SIZES: [usize; 4] = [64, 256, 1024, 4096];
pub const MIN_REPEATS: usize = 5;
pub const CSV_HEADER: &str = "method,n,median_ns,slope";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMethod {
    Fsas,
    Baseline,
}

impl AttentionMethod {
    pub const ALL: [AttentionMethod; 2] = [AttentionMethod::Fsas, AttentionMethod::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            AttentionMethod::Fsas => "fsas",
            AttentionMethod::Baseline => "baseline",
        }
    }
}

/// Multiply-adds of one attention evaluation over a single patch of
/// `n = patch²` pixels with `channels` feature channels.
pub fn attention_flops(method: AttentionMethod, channels: usize, n: usize) -> Result<u64> {
    let patch = side_of(n)?;
    Ok(match method {
        AttentionMethod::Fsas => Fsas::new("bench", channels, patch).attention_macs(1, patch, patch),
        AttentionMethod::Baseline => BaselineAttention::new("bench", channels, patch).attention_macs(1, patch, patch),
    })
}

/// Closed-form multiply-adds of one network forward pass on `n x 3 x h x w`.
pub fn flop_count(config: &ModelConfig, n: usize, h: usize, w: usize) -> Result<u64> {
    let model = AmsaUnet::new(config.clone())?;
    model.check_input(Shape::new(n, 3, h, w))?;
    Ok(model.forward_macs(n, h, w))
}

/// Multiply-adds of the three patch transforms FSAS performs on a `C x h x w` map.
pub fn fsas_transform_flops(channels: usize, h: usize, w: usize, patch: usize) -> u64 {
    3 * patch_fft_macs(1, channels, h, w, patch)
}

fn side_of(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || !side.is_power_of_two() {
        return Err(Error::contract(format!("{n} is not the square of a power of two")));
    }
    Ok(side)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Median wall time in nanoseconds of `repeats` calls after one discarded warm-up call.
pub fn time_median_ns(repeats: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos() as f64
        })
        .collect();
    median(&mut samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: AttentionMethod,
    pub n: usize,
    pub median_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn medians(&self, method: AttentionMethod) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.method == method).map(|r| (r.n, r.median_ns)).collect()
    }

    pub fn slope(&self, method: AttentionMethod) -> f64 {
        let pts: Vec<(f64, f64)> = self.medians(method).iter().map(|&(n, t)| (n as f64, t)).collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        loglog_slope(&pts)
    }

    pub fn median_at(&self, method: AttentionMethod, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.n == n).map(|r| r.median_ns)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.0},{:.4}", r.method.name(), r.n, r.median_ns, self.slope(r.method));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            sizes: DEFAULT_SIZES.to_vec(),
            repeats: 7,
            channels: 8,
            seed: 0,
        }
    }
}

/// Times both attention operators on the same random `Q, K, V` for every
/// patch pixel count `n`; the feature map is one `√n x √n` patch.
pub fn bench_attention(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.repeats < MIN_REPEATS {
        return Err(Error::contract(format!("at least {MIN_REPEATS} repeats are required")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for &n in &opts.sizes {
        let side = side_of(n)?;
        let shape = Shape::new(1, opts.channels, side, side);
        let mut make = || Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0));
        inputs.push((n, side, [make(), make(), make()]));
    }
    for method in AttentionMethod::ALL {
        for (n, side, [q, k, v]) in &inputs {
            let median_ns = time_median_ns(opts.repeats, || {
                let g = Graph::new();
                let out = match method {
                    AttentionMethod::Fsas => frequency_attention(&g, q, k, v, *side),
                    AttentionMethod::Baseline => softmax_attention(&g, q, k, v, *side),
                };
                black_box(out.expect("valid patch"));
            });
            rows.push(BenchRow {
                method,
                n: *n,
                median_ns,
            });
        }
    }
    Ok(BenchReport { rows })
}
