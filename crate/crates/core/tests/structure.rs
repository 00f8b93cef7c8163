use edgeneck_core::autodiff::{ParamStore, Tape, Var};
use edgeneck_core::fa::{aggregate, aggregate_ablation, aggregated_channels, AGGREGATED_STRIDES, BACKBONE_STRIDES};
use edgeneck_core::fpn::Fpn;
use edgeneck_core::warfb::{receptive_extent, Warfb};
use edgeneck_core::{FaMode, Initializer, Pipeline, PipelineConfig, PyramidSet, Tensor};

const PLANS: [[usize; 5]; 3] = [[16, 32, 64, 128, 256], [3, 5, 7, 11, 13], [8, 8, 8, 8, 8]];

fn features(c: [usize; 5], base: usize, seed: u64) -> Vec<Tensor<f64>> {
    (0..5).map(|k| Tensor::uniform([1, c[k], base >> k, base >> k], -1.0, 1.0, seed + k as u64)).collect()
}

fn perturbed(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let noise = Tensor::<f64>::uniform(t.shape(), 0.5, 1.5, seed);
    Tensor::new(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap()
}

fn run_fa(feats: &[Tensor<f64>], mode: FaMode) -> Vec<Tensor<f64>> {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = feats.iter().map(|t| tape.constant(t.clone())).collect();
    let set = PyramidSet::from_values(&BACKBONE_STRIDES, vars);
    aggregate_ablation(&set, mode).unwrap().values().map(|v| (*v.value()).clone()).collect()
}

/// Indices (0-based) of the FA levels that change when input level `k` moves.
fn fa_dependents(feats: &[Tensor<f64>], mode: FaMode, k: usize) -> Vec<usize> {
    let base = run_fa(feats, mode);
    let mut moved = feats.to_vec();
    moved[k] = perturbed(&feats[k], 99);
    let after = run_fa(&moved, mode);
    (0..4).filter(|&i| !base[i].bit_identical(&after[i])).collect()
}

#[test]
fn channel_contract_for_three_plans() {
    for c in PLANS {
        let out = run_fa(&features(c, 32, 0), FaMode::Full);
        let got: Vec<usize> = out.iter().map(|t| t.shape().c()).collect();
        assert_eq!(got, vec![c[0] + c[1], c[1] + c[2] + c[3], c[3] + c[4], c[4]]);
        assert_eq!(got, aggregated_channels(c, FaMode::Full).to_vec());
        let spatial: Vec<usize> = out.iter().map(|t| t.shape().h()).collect();
        assert_eq!(spatial, vec![16, 8, 4, 2]);
        for mode in [FaMode::Low3, FaMode::High3] {
            let got: Vec<usize> = run_fa(&features(c, 32, 0), mode).iter().map(|t| t.shape().c()).collect();
            assert_eq!(got, aggregated_channels(c, mode).to_vec(), "{mode}");
        }
    }
}

#[test]
fn ablation_dependency_structure() {
    let want: [(FaMode, [&[usize]; 5]); 3] = [
        (FaMode::Full, [&[0], &[0, 1], &[1], &[1, 2], &[2, 3]]),
        (FaMode::Low3, [&[0], &[0, 1], &[1, 2, 3], &[], &[]]),
        (FaMode::High3, [&[], &[], &[0, 1], &[1, 2], &[2, 3]]),
    ];
    for c in PLANS {
        let feats = features(c, 32, 5);
        for (mode, deps) in want {
            for (k, d) in deps.iter().enumerate() {
                assert_eq!(fa_dependents(&feats, mode, k), d.to_vec(), "{mode}: F{}", k + 1);
            }
        }
    }
}

#[test]
fn full_mode_equals_aggregate() {
    let feats = features(PLANS[1], 16, 3);
    let tape = Tape::new();
    let set = PyramidSet::from_values(&BACKBONE_STRIDES, feats.iter().map(|t| tape.constant(t.clone())).collect());
    let a = aggregate(&set).unwrap();
    let b = aggregate_ablation(&set, FaMode::Full).unwrap();
    for (x, y) in a.values().zip(b.values()) {
        assert!(x.value().bit_identical(&y.value()));
    }
}

#[test]
fn concat_order_follows_constituents() {
    let c = PLANS[1];
    let feats = features(c, 32, 8);
    let tape = Tape::new();
    let v: Vec<Var<f64>> = feats.iter().map(|t| tape.constant(t.clone())).collect();
    let set = PyramidSet::from_values(&BACKBONE_STRIDES, v.clone());
    let fa = aggregate(&set).unwrap();
    let fa2 = fa.get(1).unwrap().value();
    let parts = [v[1].down2().unwrap(), v[2], v[3].up2().unwrap()];
    let mut start = 0;
    for p in parts {
        let len = p.shape().c();
        assert!(fa2.channel_slice(start, len).unwrap().bit_identical(&p.value()));
        start += len;
    }
    assert_eq!(start, fa2.shape().c());
}

#[test]
fn every_level_receives_gradient() {
    let feats = features(PLANS[1], 16, 2);
    let tape = Tape::new();
    let v: Vec<Var<f64>> = feats.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let fa = aggregate(&PyramidSet::from_values(&BACKBONE_STRIDES, v.clone())).unwrap();
    let mut it = fa.values().map(|x| x.sum());
    let first = it.next().unwrap();
    let loss = it.fold(first, |a, b| a.add(b).unwrap());
    let grads = tape.backward(loss).unwrap();
    for (k, x) in v.iter().enumerate() {
        assert!(grads.get_or_zeros(*x).data().iter().any(|&g| g != 0.0), "F{} gets no gradient", k + 1);
    }
}

/// Largest `|dy|`, `|dx|` of nonzero outputs around an impulse at `(cy, cx)`.
fn support(t: &Tensor<f64>, cy: usize, cx: usize) -> (usize, usize) {
    let [n, c, h, w] = t.dims();
    let (mut ey, mut ex) = (0, 0);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if t.at(ni, ci, y, x) != 0.0 {
                        ey = ey.max(y.abs_diff(cy));
                        ex = ex.max(x.abs_diff(cx));
                    }
                }
            }
        }
    }
    (ey, ex)
}

#[test]
fn branch_impulse_support_matches_receptive_extent() {
    let block = Warfb::new("rf", 2, 4).unwrap();
    let mut store = ParamStore::<f64>::new();
    block.init(&mut store, &mut Initializer::new(11)).unwrap();
    let (h, w, cy, cx) = (61, 67, 30, 33);
    let impulse = Tensor::from_fn([1, 2, h, w], |_, c, y, x| if (y, x) == (cy, cx) { 1.0 + c as f64 } else { 0.0 });
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.constant(impulse);
    let mut measured = Vec::new();
    for k in 1..=5 {
        let out = block.branch(&p, x, k).unwrap().value();
        measured.push(support(&out, cy, cx));
    }
    assert_eq!(measured, vec![(0, 0), (3, 3), (10, 10), (21, 21), (0, 0)]);
    for (k, m) in (1..=5).zip(&measured) {
        assert_eq!(receptive_extent(k).unwrap(), *m, "branch {k}");
    }
    let out = block.forward(&p, x).unwrap().value();
    let (ey, ex) = support(&out, cy, cx);
    assert!(ey <= 21 && ex <= 21);
    assert!(out.data().iter().all(|&v| v >= 0.0));
}

fn rfs(c: [usize; 4], base: usize, seed: u64) -> Vec<Tensor<f64>> {
    (0..4).map(|k| Tensor::uniform([1, c[k], base >> k, base >> k], -1.0, 1.0, seed + k as u64)).collect()
}

fn run_fpn(fpn: &Fpn, store: &ParamStore<f64>, rf: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let set = PyramidSet::from_values(&AGGREGATED_STRIDES, rf.iter().map(|t| tape.constant(t.clone())).collect());
    fpn.forward(&p, &set).unwrap().values().map(|v| (*v.value()).clone()).collect()
}

#[test]
fn top_down_dependency() {
    let c = [3, 4, 5, 6];
    let fpn = Fpn::new("fpn", c, 8).unwrap();
    let mut store = ParamStore::new();
    fpn.init(&mut store, &mut Initializer::new(1)).unwrap();
    let rf = rfs(c, 16, 0);
    let base = run_fpn(&fpn, &store, &rf);
    for (g, r) in base.iter().zip(&rf) {
        assert_eq!((g.shape().h(), g.shape().w()), (r.shape().h(), r.shape().w()));
        assert_eq!(g.shape().c(), 8);
    }
    for j in 0..4 {
        let mut moved = rf.clone();
        moved[j] = perturbed(&rf[j], 7);
        let after = run_fpn(&fpn, &store, &moved);
        for i in 0..4 {
            assert_eq!(!base[i].bit_identical(&after[i]), j >= i, "G{} vs RF{}", i + 1, j + 1);
        }
    }
}

#[test]
fn coarsest_level_bypasses_receptive_blocks() {
    let cfg = PipelineConfig { channels: [4, 8, 8, 8, 16], pyramid_width: 8, reduction: 4, ..PipelineConfig::default() };
    let pipe = Pipeline::new(cfg).unwrap();
    let store = pipe.init_params::<f64>(4).unwrap();
    let image = Tensor::<f64>::uniform([1, 3, 128, 128], 0.0, 1.0, 2);
    let base = pipe.run(&store, &image).unwrap();
    assert!(base.get("RF4").unwrap().bit_identical(base.get("FA4").unwrap()));
    for b in pipe.warfb() {
        let mut moved = store.clone();
        for name in store.names().filter(|n| n.starts_with(&format!("{}.", b.prefix()))) {
            let v = moved.value(name).unwrap().clone();
            moved.set_value(name, perturbed(&v, 3)).unwrap();
        }
        let after = pipe.run(&moved, &image).unwrap();
        for name in ["FA4", "RF4", "G4"] {
            assert!(after.get(name).unwrap().bit_identical(base.get(name).unwrap()), "{name} moved with {}", b.prefix());
        }
        let level = &b.prefix()["warfb".len()..];
        assert!(!after.get(&format!("RF{level}")).unwrap().bit_identical(base.get(&format!("RF{level}")).unwrap()));
    }
}
