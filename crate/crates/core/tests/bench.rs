use amsa_core::bench::{attention_flops, bench_attention, flop_count, AttentionMethod, BenchOptions, CSV_HEADER};
use amsa_core::blocks::{Conv, ParamStore};
use amsa_core::network::{AmsaUnet, ModelConfig};
use amsa_core::{Graph, Shape, Tensor};

#[test]
fn conv_cost_scales_with_area() {
    for (cin, cout, k) in [(3, 8, 3), (16, 16, 1), (8, 4, 3)] {
        let conv = Conv::new("c", cin, cout, k);
        assert_eq!(conv.macs(1, 32, 48), 4 * conv.macs(1, 16, 24));
    }
    let cfg = ModelConfig::default();
    let small = flop_count(&cfg, 1, 32, 32).unwrap();
    let large = flop_count(&cfg, 1, 64, 64).unwrap();
    assert!(large > 4 * small - small / 4 && large <= 4 * small + small / 4);
}

#[test]
fn baseline_to_fsas_ratio_grows() {
    let ratios: Vec<f64> = [64, 256, 1024, 4096]
        .iter()
        .map(|&n| {
            let b = attention_flops(AttentionMethod::Baseline, 8, n).unwrap() as f64;
            let f = attention_flops(AttentionMethod::Fsas, 8, n).unwrap() as f64;
            b / f
        })
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    // closed forms: 2·n²·C against 3 transforms of n·log2(n)/2 butterflies at 4 MACs
    let n = 1024u64;
    assert_eq!(attention_flops(AttentionMethod::Baseline, 8, 1024).unwrap(), 2 * n * n * 8);
    assert_eq!(attention_flops(AttentionMethod::Fsas, 8, 1024).unwrap(), 3 * 8 * 4 * (n / 2) * 10);
}

#[test]
fn symmetric_costs_more_for_the_default_config() {
    let asym = ModelConfig::default();
    let sym = ModelConfig {
        symmetric_mode: true,
        ..ModelConfig::default()
    };
    assert!(flop_count(&sym, 1, 256, 256).unwrap() > flop_count(&asym, 1, 256, 256).unwrap());
    assert!(flop_count(&asym, 1, 30, 32).is_err());
}

#[test]
fn flop_formula_matches_instrumented_count() {
    let cfg = ModelConfig {
        base_channels: 4,
        blocks_per_level: 1,
        seed: 1,
        ..ModelConfig::default()
    };
    let model = AmsaUnet::new(cfg.clone()).unwrap();
    let params: ParamStore = model.init_params().unwrap();
    let g = Graph::new();
    model.forward(&g, &params, &Tensor::full(Shape::new(2, 3, 32, 64), 0.5)).unwrap();
    assert_eq!(g.macs(), flop_count(&cfg, 2, 32, 64).unwrap());
}

#[test]
fn report_has_one_row_per_method_and_size() {
    let opts = BenchOptions {
        sizes: vec![64, 256, 1024],
        repeats: 5,
        channels: 2,
        seed: 3,
    };
    let report = bench_attention(&opts).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert_eq!(rows.iter().filter(|r| r[0] == "fsas").count(), 3);
    assert_eq!(rows.iter().filter(|r| r[0] == "baseline").count(), 3);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
    assert!(bench_attention(&BenchOptions { repeats: 4, ..opts.clone() }).is_err());
    assert!(bench_attention(&BenchOptions { sizes: vec![100], ..opts }).is_err());
}
