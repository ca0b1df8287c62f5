mod common;

use amsa_core::blocks::{
    correlation_map, softmax_attention, zero_params, Aff, BaselineAttention, Dffn, Fam, Fsas, Fuse,
    ParamStore, Scm,
};
use amsa_core::gradcheck::{self, DEFAULT_STEP};
use amsa_core::{Error, Graph, Shape, Tensor};
use common::{max_abs_diff, patch_correlation, random};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Store holding the block parameters plus named random inputs.
fn setup(seed: u64, inputs: &[(&str, Shape)], init: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng)) -> (ParamStore, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    init(&mut store, &mut rng);
    for (name, shape) in inputs {
        store.insert(*name, random(*shape, &mut rng)).unwrap();
    }
    (store, rng)
}

/// Perturb every parameter away from its structured init so gradient checks
/// exercise generic points (e.g. a non-trivial DFFN gate).
fn jitter(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let t = store.get(&name).unwrap().clone();
        let data = t.data().iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
        store.set(&name, Tensor::new(t.shape(), data).unwrap()).unwrap();
    }
}

fn assert_grad_ok<F>(store: &ParamStore, rng: &mut ChaCha8Rng, out_shape: Shape, f: F)
where
    F: Fn(&Graph, &ParamStore) -> amsa_core::Result<Tensor>,
{
    let weights = random(out_shape, rng);
    let probes = gradcheck::sampled_probes(store, 6, rng);
    let report = gradcheck::check(store, &probes, DEFAULT_STEP, |g, p| {
        gradcheck::weighted_sum(g, &f(g, p)?, &weights)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn scm_width_and_zero_input() {
    let scm = Scm::new("scm", 16).unwrap();
    let mut store = ParamStore::new();
    scm.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let g = Graph::new();
    let y = scm.forward(&g, &store, &Tensor::zeros(Shape::new(1, 3, 8, 8))).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 16, 8, 8));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scm_rejects_wrong_channels() {
    let scm = Scm::new("scm", 16).unwrap();
    let mut store = ParamStore::new();
    scm.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let err = scm
        .forward(&Graph::new(), &store, &Tensor::zeros(Shape::new(1, 4, 8, 8)))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension { axis: "channel", .. }));
}

#[test]
fn scm_gradients() {
    let scm = Scm::new("scm", 8).unwrap();
    let (mut store, mut rng) = setup(2, &[("x", Shape::new(1, 3, 8, 8))], |s, r| scm.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.1);
    assert_grad_ok(&store, &mut rng, Shape::new(1, 8, 8, 8), |g, p| scm.forward(g, p, p.get("x")?));
}

#[test]
fn fam_zero_scm_gives_bias_plus_prev() {
    let fam = Fam::new("fam", 4);
    let (mut store, mut rng) = setup(3, &[], |s, r| fam.init(s, r).unwrap());
    let bias = random(Shape::new(1, 4, 1, 1), &mut rng);
    store.set("fam.conv.bias", bias.clone()).unwrap();
    let prev = random(Shape::new(1, 4, 6, 6), &mut rng);
    let y = fam
        .forward(&Graph::new(), &store, &Tensor::zeros(prev.shape()), &prev)
        .unwrap();
    let expect = Tensor::from_fn(prev.shape(), |n, c, yy, xx| bias.at(0, c, 0, 0) + prev.at(n, c, yy, xx));
    assert_eq!(y.data(), expect.data());
}

#[test]
fn fam_shape_and_mismatch() {
    let fam = Fam::new("fam", 32);
    let (store, mut rng) = setup(4, &[], |s, r| fam.init(s, r).unwrap());
    let a = random(Shape::new(1, 32, 16, 16), &mut rng);
    let y = fam.forward(&Graph::new(), &store, &a, &a).unwrap();
    assert_eq!(y.shape(), a.shape());
    let b = random(Shape::new(1, 32, 8, 16), &mut rng);
    assert!(matches!(
        fam.forward(&Graph::new(), &store, &a, &b),
        Err(Error::Dimension { axis: "height", .. })
    ));
}

#[test]
fn fam_gradients() {
    let fam = Fam::new("fam", 4);
    let shape = Shape::new(2, 4, 8, 8);
    let (store, mut rng) = setup(5, &[("s", shape), ("p", shape)], |s, r| fam.init(s, r).unwrap());
    assert_grad_ok(&store, &mut rng, shape, |g, p| fam.forward(g, p, p.get("s")?, p.get("p")?));
}

#[test]
fn dffn_identity_gate_matches_plain_feed_forward() {
    // with the gate at 1 + 0i the frequency round trip is the identity
    let dffn = Dffn::new("d", 4, 8);
    let (store, mut rng) = setup(6, &[], |s, r| dffn.init(s, r).unwrap());
    let x = random(Shape::new(1, 4, 16, 16), &mut rng);
    let g = Graph::new();
    let y = dffn.forward(&g, &store, &x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.is_finite());

    let conv = |name: &str, input: &Tensor, groups: usize, k: usize| {
        g.conv2d(
            input,
            store.get(&format!("d.{name}.weight")).unwrap(),
            Some(store.get(&format!("d.{name}.bias")).unwrap()),
            amsa_core::Conv2dOptions {
                groups,
                ..amsa_core::Conv2dOptions::same(k)
            },
        )
        .unwrap()
    };
    let n = g
        .layer_norm_channels(
            &x,
            store.get("d.norm.scale").unwrap(),
            store.get("d.norm.shift").unwrap(),
            amsa_core::blocks::LAYER_NORM_EPS,
        )
        .unwrap();
    let h = conv("dw", &conv("expand", &n, 1, 1), 8, 3);
    let h = conv("contract", &g.gelu(&h).unwrap(), 1, 1);
    let expect = g.add(&x, &h).unwrap();
    assert!(max_abs_diff(y.data(), expect.data()) < 1e-12);
}

#[test]
fn dffn_zero_contract_is_identity() {
    let dffn = Dffn::new("d", 4, 8);
    let (mut store, mut rng) = setup(7, &[], |s, r| dffn.init(s, r).unwrap());
    zero_params(&mut store, dffn.output_params()).unwrap();
    let x = random(Shape::new(2, 4, 8, 16), &mut rng);
    let y = dffn.forward(&Graph::new(), &store, &x).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn dffn_rejects_indivisible() {
    let dffn = Dffn::new("d", 4, 8);
    let (store, _) = setup(8, &[], |s, r| dffn.init(s, r).unwrap());
    let err = dffn
        .forward(&Graph::new(), &store, &Tensor::zeros(Shape::new(1, 4, 12, 8)))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn dffn_gradients_including_gate() {
    let dffn = Dffn::new("d", 4, 8);
    let shape = Shape::new(1, 4, 8, 8);
    let (mut store, mut rng) = setup(9, &[("x", shape)], |s, r| dffn.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.2);
    assert_grad_ok(&store, &mut rng, shape, |g, p| dffn.forward(g, p, p.get("x")?));

    let probes: Vec<_> = gradcheck::all_probes(&store)
        .into_iter()
        .filter(|(n, _)| dffn.gate_params().contains(&n.as_str()))
        .collect();
    let weights = random(shape, &mut rng);
    let report = gradcheck::check(&store, &probes, DEFAULT_STEP, |g, p| {
        gradcheck::weighted_sum(g, &dffn.forward(g, p, p.get("x")?)?, &weights)
    })
    .unwrap();
    assert_eq!(report.checked, 2 * 8 * 64);
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn fsas_map_matches_spatial_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for patch in [4, 8, 16] {
        let shape = Shape::new(1, 2, 2 * patch, patch);
        let q = random(shape, &mut rng);
        let k = random(shape, &mut rng);
        let a = correlation_map(&Graph::new(), &q, &k, patch).unwrap();
        let err = max_abs_diff(a.data(), &patch_correlation(&q, &k, patch));
        assert!(err < 1e-8, "patch {patch}: {err}");
    }
}

#[test]
fn fsas_delta_key_returns_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::new(1, 3, 16, 16);
    let q = random(shape, &mut rng);
    let k = Tensor::from_fn(shape, |_, _, y, x| if y % 8 == 0 && x % 8 == 0 { 1.0 } else { 0.0 });
    let a = correlation_map(&Graph::new(), &q, &k, 8).unwrap();
    assert!(max_abs_diff(a.data(), q.data()) < 1e-12);
}

#[test]
fn fsas_zero_projection_is_identity() {
    let fsas = Fsas::new("f", 4, 8);
    let (mut store, mut rng) = setup(12, &[], |s, r| fsas.init(s, r).unwrap());
    zero_params(&mut store, fsas.output_params()).unwrap();
    let x = random(Shape::new(1, 4, 16, 8), &mut rng);
    let y = fsas.forward(&Graph::new(), &store, &x).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn fsas_gradients() {
    let fsas = Fsas::new("f", 4, 8);
    let shape = Shape::new(1, 4, 8, 8);
    let (mut store, mut rng) = setup(13, &[("x", shape)], |s, r| fsas.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.1);
    assert_grad_ok(&store, &mut rng, shape, |g, p| fsas.forward(g, p, p.get("x")?));
}

#[test]
fn fsas_rejects_indivisible() {
    let fsas = Fsas::new("f", 4, 8);
    let (store, _) = setup(14, &[], |s, r| fsas.init(s, r).unwrap());
    assert!(matches!(
        fsas.forward(&Graph::new(), &store, &Tensor::zeros(Shape::new(1, 4, 8, 12))),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn baseline_uniform_scores_average_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let shape = Shape::new(1, 3, 4, 4);
    let q = Tensor::full(shape, 0.3);
    let k = Tensor::full(shape, -0.7);
    let v = random(shape, &mut rng);
    let out = softmax_attention(&Graph::new(), &q, &k, &v, 4).unwrap();
    for c in 0..3 {
        let mean: f64 = (0..16).map(|i| v.at(0, c, i / 4, i % 4)).sum::<f64>() / 16.0;
        for i in 0..16 {
            assert!((out.at(0, c, i / 4, i % 4) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn baseline_single_pixel_patch_returns_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let shape = Shape::new(2, 3, 4, 4);
    let (q, k, v) = (random(shape, &mut rng), random(shape, &mut rng), random(shape, &mut rng));
    let out = softmax_attention(&Graph::new(), &q, &k, &v, 1).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn baseline_block_residual_and_gradients() {
    let att = BaselineAttention::new("b", 4, 4);
    let shape = Shape::new(1, 4, 8, 8);
    let (mut store, mut rng) = setup(17, &[("x", shape)], |s, r| att.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.1);
    assert_grad_ok(&store, &mut rng, shape, |g, p| att.forward(g, p, p.get("x")?));

    zero_params(&mut store, att.output_params()).unwrap();
    let x = store.get("x").unwrap().clone();
    assert_eq!(att.forward(&Graph::new(), &store, &x).unwrap().data(), x.data());
}

fn aff_inputs(rng: &mut impl Rng, n: usize, widths: [usize; 3], size: usize) -> [Tensor; 3] {
    [0, 1, 2].map(|l| random(Shape::new(n, widths[l], size >> l, size >> l), rng))
}

#[test]
fn aff_output_shapes() {
    let widths = [4, 8, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let enc = aff_inputs(&mut rng, 1, widths, 16);
    for target in 0..3 {
        let aff = Aff::new("aff", widths, target).unwrap();
        let mut store = ParamStore::new();
        aff.init(&mut store, &mut rng).unwrap();
        let y = aff.forward(&Graph::new(), &store, [&enc[0], &enc[1], &enc[2]]).unwrap();
        assert_eq!(y.shape(), enc[target].shape());
    }
}

#[test]
fn aff_zero_encoders_give_zero() {
    let widths = [4, 8, 16];
    let aff = Aff::new("aff", widths, 1).unwrap();
    let (store, _) = setup(19, &[], |s, r| aff.init(s, r).unwrap());
    let enc = [0, 1, 2].map(|l| Tensor::zeros(Shape::new(1, widths[l], 16 >> l, 16 >> l)));
    let y = aff.forward(&Graph::new(), &store, [&enc[0], &enc[1], &enc[2]]).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn aff_rejects_batch_mismatch() {
    let widths = [4, 8, 16];
    let aff = Aff::new("aff", widths, 0).unwrap();
    let (store, mut rng) = setup(20, &[], |s, r| aff.init(s, r).unwrap());
    let mut enc = aff_inputs(&mut rng, 1, widths, 16);
    enc[2] = random(Shape::new(2, 16, 4, 4), &mut rng);
    let err = aff.forward(&Graph::new(), &store, [&enc[0], &enc[1], &enc[2]]).unwrap_err();
    assert!(matches!(err, Error::Dimension { axis: "batch", .. }));
}

#[test]
fn aff_gradients() {
    let widths = [2, 4, 4];
    let aff = Aff::new("aff", widths, 1).unwrap();
    let inputs = [
        ("e1", Shape::new(1, 2, 8, 8)),
        ("e2", Shape::new(1, 4, 4, 4)),
        ("e3", Shape::new(1, 4, 2, 2)),
    ];
    let (mut store, mut rng) = setup(21, &inputs, |s, r| aff.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.1);
    assert_grad_ok(&store, &mut rng, Shape::new(1, 4, 4, 4), |g, p| {
        aff.forward(g, p, [p.get("e1")?, p.get("e2")?, p.get("e3")?])
    });
}

#[test]
fn fuse_halves_channels() {
    let fuse = Fuse::new("fuse", 4, 8);
    let (store, mut rng) = setup(22, &[], |s, r| fuse.init(s, r).unwrap());
    let x = random(Shape::new(1, 4, 8, 8), &mut rng);
    let y = fuse.forward(&Graph::new(), &store, &x, &x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.is_finite());
    let z = random(Shape::new(1, 4, 8, 16), &mut rng);
    assert!(matches!(
        fuse.forward(&Graph::new(), &store, &x, &z),
        Err(Error::Dimension { axis: "width", .. })
    ));
}

#[test]
fn fuse_gradients() {
    let fuse = Fuse::new("fuse", 2, 8);
    let shape = Shape::new(1, 2, 8, 8);
    let (mut store, mut rng) = setup(23, &[("a", shape), ("b", shape)], |s, r| fuse.init(s, r).unwrap());
    jitter(&mut store, &mut rng, 0.2);
    assert_grad_ok(&store, &mut rng, shape, |g, p| fuse.forward(g, p, p.get("a")?, p.get("b")?));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blocks_preserve_shape(h in prop::sample::select(vec![8usize, 16, 32]),
                             w in prop::sample::select(vec![8usize, 16, 32]),
                             n in 1usize..3,
                             seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dffn = Dffn::new("d", 4, 8);
        let fsas = Fsas::new("f", 4, 8);
        let base = BaselineAttention::new("b", 4, 8);
        let fam = Fam::new("m", 4);
        let fuse = Fuse::new("u", 4, 8);
        dffn.init(&mut store, &mut rng).unwrap();
        fsas.init(&mut store, &mut rng).unwrap();
        base.init(&mut store, &mut rng).unwrap();
        fam.init(&mut store, &mut rng).unwrap();
        fuse.init(&mut store, &mut rng).unwrap();
        let x = random(Shape::new(n, 4, h, w), &mut rng);
        let g = Graph::new();
        for y in [
            dffn.forward(&g, &store, &x).unwrap(),
            fsas.forward(&g, &store, &x).unwrap(),
            base.forward(&g, &store, &x).unwrap(),
            fam.forward(&g, &store, &x, &x).unwrap(),
            fuse.forward(&g, &store, &x, &x).unwrap(),
        ] {
            prop_assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn zeroed_projections_give_identity(h in prop::sample::select(vec![8usize, 16, 32]),
                                        w in prop::sample::select(vec![8usize, 16, 32]),
                                        seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dffn = Dffn::new("d", 4, 8);
        let fsas = Fsas::new("f", 4, 8);
        let base = BaselineAttention::new("b", 4, 8);
        dffn.init(&mut store, &mut rng).unwrap();
        fsas.init(&mut store, &mut rng).unwrap();
        base.init(&mut store, &mut rng).unwrap();
        for names in [dffn.output_params(), fsas.output_params(), base.output_params()] {
            zero_params(&mut store, names).unwrap();
        }
        let x = random(Shape::new(1, 4, h, w), &mut rng);
        let g = Graph::new();
        prop_assert_eq!(dffn.forward(&g, &store, &x).unwrap().to_vec(), x.to_vec());
        prop_assert_eq!(fsas.forward(&g, &store, &x).unwrap().to_vec(), x.to_vec());
        prop_assert_eq!(base.forward(&g, &store, &x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn fsas_map_oracle_any_patch(patch in prop::sample::select(vec![4usize, 8, 16]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(1, 1, patch, 2 * patch);
        let q = random(shape, &mut rng);
        let k = random(shape, &mut rng);
        let a = correlation_map(&Graph::new(), &q, &k, patch).unwrap();
        prop_assert!(max_abs_diff(a.data(), &patch_correlation(&q, &k, patch)) < 1e-8);
    }

    #[test]
    fn softmax_attention_rows_sum_to_one(seed in any::<u64>()) {
        // rows of the weight matrix sum to one iff constant values pass through unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(1, 2, 8, 8);
        let q = random(shape, &mut rng);
        let k = random(shape, &mut rng);
        let v = Tensor::full(shape, 1.0);
        let out = softmax_attention(&Graph::new(), &q, &k, &v, 8).unwrap();
        prop_assert!(out.data().iter().all(|&o| (o - 1.0).abs() <= 1e-12));
    }
}
