//! One line per acceptance criterion. Exits nonzero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use edgeneck_cli::netpbm::{self, Image};
use edgeneck_core::autodiff::{ParamStore, Tape, Var};
use edgeneck_core::ega::{deep_sobel, ChannelAttention, SOBEL_X, SOBEL_Y};
use edgeneck_core::exec::Exec;
use edgeneck_core::fa::{aggregate_ablation, aggregated_channels, AGGREGATED_STRIDES, BACKBONE_STRIDES};
use edgeneck_core::fpn::Fpn;
use edgeneck_core::suite::{self, Scope, SuiteConfig};
use edgeneck_core::warfb::{receptive_extent, Warfb};
use edgeneck_core::{FaMode, Initializer, Pipeline, PipelineConfig, PyramidSet, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn plus_noise(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let noise = Tensor::<f64>::uniform(t.shape(), 0.5, 1.5, seed);
    Tensor::new(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cfg = SuiteConfig { seed: 1, exec: Exec::Sequential, ..SuiteConfig::default() };
    let reports = suite::run(Scope::All, &cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    ensure(failed.is_empty(), || failed.concat())?;
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    ensure(worst < 1e-5, || format!("max rel err {worst:e}"))?;
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    for label in ["channel_attention", "ega", "fa/full", "fa/low3", "fa/high3", "warfb", "fpn", "pipeline"] {
        ensure(reports.iter().any(|r| r.label.starts_with(label)), || format!("no check labelled {label}"))?;
    }
    Ok(format!("{} checks, max rel err {worst:.2e}, {:.1} s single-core", reports.len(), took.as_secs_f64()))
}

fn sobel_reference(f: &Tensor<f64>, k: &[[i8; 3]; 3]) -> Tensor<f64> {
    let [n, c, h, w] = f.dims();
    Tensor::from_fn([n, 1, h, w], |ni, _, y, x| {
        let mut total = 0.0;
        for ci in 0..c {
            for (ky, row) in k.iter().enumerate() {
                for (kx, &kv) in row.iter().enumerate() {
                    let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                    total += kv as f64 * f.at(ni, ci, sy, sx);
                }
            }
        }
        total / c as f64
    })
}

fn sobel_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let shape = [1 + (i as usize % 2), 1 + (i as usize * 7 % 8), 3 + (i as usize * 3), 2 + (i as usize * 29 / 9)];
        let shape = if i == 9 { [2, 8, 33, 31] } else { shape };
        let f = Tensor::<f64>::uniform(shape, -1.0, 1.0, 500 + i);
        let tape = Tape::new();
        let (gx, gy) = deep_sobel(tape.constant(f.clone())).map_err(|e| e.to_string())?;
        worst = worst.max(gx.value().max_abs_diff(&sobel_reference(&f, &SOBEL_X)));
        worst = worst.max(gy.value().max_abs_diff(&sobel_reference(&f, &SOBEL_Y)));
    }
    ensure(worst < 1e-12, || format!("oracle gap {worst:e}"))?;
    let mut dc: f64 = 0.0;
    for i in 0..10u64 {
        let f = Tensor::<f32>::uniform([2, 8, 33, 31], -1.0, 1.0, 600 + i);
        let off = Tensor::<f32>::uniform([1, 8, 1, 1], -1.0, 1.0, 700 + i);
        let g = Tensor::from_fn(f.shape(), |n, c, y, x| f.at(n, c, y, x) + off.data()[c]);
        let tape = Tape::new();
        let (ax, ay) = deep_sobel(tape.constant(f)).map_err(|e| e.to_string())?;
        let (bx, by) = deep_sobel(tape.constant(g)).map_err(|e| e.to_string())?;
        dc = dc.max(ax.value().max_abs_diff(&bx.value())).max(ay.value().max_abs_diff(&by.value()));
    }
    ensure(dc < 1e-5, || format!("DC shift moved output by {dc:e}"))?;
    Ok(format!("oracle gap {worst:.1e} over 10 tensors, DC shift {dc:.1e} (f32)"))
}

fn attention_bound() -> Outcome {
    let ca = ChannelAttention::new("ca", 16, 4).map_err(|e| e.to_string())?;
    for seed in 0..100u64 {
        let mut store = ParamStore::<f64>::new();
        ca.init(&mut store, &mut Initializer::new(seed)).map_err(|e| e.to_string())?;
        let scale = 10f64.powi(seed as i32 % 5 - 2);
        let x = Tensor::<f64>::uniform([2, 16, 5, 7], -scale, scale, 1000 + seed);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let o = ca.forward(&p, tape.constant(x.clone())).map_err(|e| e.to_string())?.value();
        for (&o, &x) in o.data().iter().zip(x.data()) {
            ensure(o.abs() <= x.abs(), || format!("seed {seed}: |{o}| > |{x}|"))?;
            ensure(o == 0.0 || o.signum() == x.signum(), || format!("seed {seed}: sign of {x} flipped"))?;
        }
        let zero = ca.forward(&p, tape.constant(Tensor::zeros([1, 16, 3, 3]))).map_err(|e| e.to_string())?.value();
        ensure(zero.data().iter().all(|&v| v == 0.0), || format!("seed {seed}: zero input gave nonzero output"))?;
    }
    Ok("100 seeded inputs bounded and sign-preserving, zero in gives zero out".into())
}

fn run_fa(feats: &[Tensor<f64>], mode: FaMode) -> Result<Vec<Tensor<f64>>, String> {
    let tape = Tape::new();
    let set = PyramidSet::from_values(&BACKBONE_STRIDES, feats.iter().map(|t| tape.constant(t.clone())).collect());
    let out = aggregate_ablation(&set, mode).map_err(|e| e.to_string())?;
    Ok(out.values().map(|v| (*v.value()).clone()).collect())
}

fn channel_contract() -> Outcome {
    let plans = [[16, 32, 64, 128, 256], [3, 5, 7, 11, 13], [2, 9, 4, 6, 1]];
    let deps: [(FaMode, [&[usize]; 5]); 3] = [
        (FaMode::Full, [&[0], &[0, 1], &[1], &[1, 2], &[2, 3]]),
        (FaMode::Low3, [&[0], &[0, 1], &[1, 2, 3], &[], &[]]),
        (FaMode::High3, [&[], &[], &[0, 1], &[1, 2], &[2, 3]]),
    ];
    for c in plans {
        let feats: Vec<Tensor<f64>> =
            (0..5).map(|k| Tensor::uniform([1, c[k], 32 >> k, 32 >> k], -1.0, 1.0, k as u64)).collect();
        let full = run_fa(&feats, FaMode::Full)?;
        let got: Vec<usize> = full.iter().map(|t| t.shape().c()).collect();
        let want = vec![c[0] + c[1], c[1] + c[2] + c[3], c[3] + c[4], c[4]];
        ensure(got == want, || format!("plan {c:?}: channels {got:?}, want {want:?}"))?;
        for (mode, table) in deps {
            let base = run_fa(&feats, mode)?;
            let widths: Vec<usize> = base.iter().map(|t| t.shape().c()).collect();
            ensure(widths == aggregated_channels(c, mode), || format!("{mode}: widths {widths:?}"))?;
            for (k, want) in table.iter().enumerate() {
                let mut moved = feats.clone();
                moved[k] = plus_noise(&feats[k], 9);
                let after = run_fa(&moved, mode)?;
                let changed: Vec<usize> = (0..4).filter(|&i| !base[i].bit_identical(&after[i])).collect();
                ensure(changed == *want, || format!("{mode}: F{} moved FA {changed:?}, want {want:?}", k + 1))?;
            }
        }
    }
    Ok("3 plans, full/low3/high3 dependency tables exact".into())
}

fn support(t: &Tensor<f64>, cy: usize, cx: usize) -> (usize, usize) {
    let [_, c, h, w] = t.dims();
    let mut e = (0, 0);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                if t.at(0, ci, y, x) != 0.0 {
                    e = (e.0.max(y.abs_diff(cy)), e.1.max(x.abs_diff(cx)));
                }
            }
        }
    }
    e
}

fn warfb_structure() -> Outcome {
    let block = Warfb::new("rf", 3, 6).map_err(|e| e.to_string())?;
    let mut store = ParamStore::<f64>::new();
    block.init(&mut store, &mut Initializer::new(21)).map_err(|e| e.to_string())?;
    let (cy, cx) = (31, 36);
    let impulse = Tensor::from_fn([1, 3, 63, 71], |_, c, y, x| if (y, x) == (cy, cx) { 1.0 + c as f64 } else { 0.0 });
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.constant(impulse);
    let mut measured = Vec::new();
    for k in 1..=5 {
        let out = block.branch(&p, x, k).map_err(|e| e.to_string())?.value();
        measured.push(support(&out, cy, cx));
    }
    let oracle = vec![(0, 0), (3, 3), (10, 10), (21, 21), (0, 0)];
    ensure(measured == oracle, || format!("impulse support {measured:?}"))?;
    for (k, m) in (1..=5).zip(&measured) {
        let e = receptive_extent(k).map_err(|e| e.to_string())?;
        ensure(e == *m, || format!("branch {k}: receptive_extent {e:?}, impulse {m:?}"))?;
    }
    let biases: Vec<String> = store.names().filter(|n| n.ends_with(".b")).map(str::to_owned).collect();
    let mut shifted = store.clone();
    for (i, name) in biases.iter().enumerate() {
        let b = Tensor::uniform(store.value(name).unwrap().shape(), -1.0, 1.0, 40 + i as u64);
        shifted.set_value(name, b).map_err(|e| e.to_string())?;
    }
    let tape = Tape::new();
    let p = shifted.bind(&tape);
    for seed in 0..5 {
        let y = block.forward(&p, tape.constant(Tensor::uniform([1, 3, 17, 13], -2.0, 2.0, seed))).map_err(|e| e.to_string())?;
        ensure(y.value().data().iter().all(|&v| v >= 0.0), || "negative output".into())?;
    }
    let mut zeroed = store.clone();
    for name in &biases {
        let z = Tensor::zeros(store.value(name).unwrap().shape());
        zeroed.set_value(name, z).map_err(|e| e.to_string())?;
    }
    let tape = Tape::new();
    let p = zeroed.bind(&tape);
    let zero = block.forward(&p, tape.constant(Tensor::zeros([1, 3, 9, 9]))).map_err(|e| e.to_string())?.value();
    ensure(zero.data().iter().all(|&v| v == 0.0), || "zero input gave nonzero output".into())?;
    Ok(format!("impulse half-extents {:?} match receptive_extent; nonnegative with random biases; zero to zero with zero biases", &measured[1..4]))
}

fn pyramid_contract() -> Outcome {
    let c = [5, 6, 7, 8];
    let fpn = Fpn::new("fpn", c, 8).map_err(|e| e.to_string())?;
    let mut store = ParamStore::<f64>::new();
    fpn.init(&mut store, &mut Initializer::new(2)).map_err(|e| e.to_string())?;
    let rf: Vec<Tensor<f64>> = (0..4).map(|k| Tensor::uniform([1, c[k], 32 >> k, 32 >> k], -1.0, 1.0, k as u64)).collect();
    let run = |rf: &[Tensor<f64>]| -> Result<Vec<Tensor<f64>>, String> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let vars: Vec<Var<f64>> = rf.iter().map(|t| tape.constant(t.clone())).collect();
        let g = fpn.forward(&p, &PyramidSet::from_values(&AGGREGATED_STRIDES, vars)).map_err(|e| e.to_string())?;
        Ok(g.values().map(|v| (*v.value()).clone()).collect())
    };
    let base = run(&rf)?;
    for (i, (g, r)) in base.iter().zip(&rf).enumerate() {
        ensure(g.dims()[2..] == r.dims()[2..], || format!("G{} dims {:?} vs RF {:?}", i + 1, g.dims(), r.dims()))?;
    }
    for j in 0..4 {
        let mut moved = rf.clone();
        moved[j] = plus_noise(&rf[j], 3);
        let after = run(&moved)?;
        for i in 0..4 {
            let sensitive = !base[i].bit_identical(&after[i]);
            ensure(sensitive == (j >= i), || format!("G{} sensitivity to RF{} is {sensitive}", i + 1, j + 1))?;
        }
    }
    let cfg = PipelineConfig { channels: [4, 8, 8, 8, 16], pyramid_width: 8, reduction: 4, ..PipelineConfig::default() };
    let pipe = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let params = pipe.init_params::<f64>(4).map_err(|e| e.to_string())?;
    let image = Tensor::<f64>::uniform([1, 3, 128, 128], 0.0, 1.0, 2);
    let out = pipe.run(&params, &image).map_err(|e| e.to_string())?;
    ensure(out.get("RF4").unwrap().bit_identical(out.get("FA4").unwrap()), || "RF4 != FA4".into())?;
    let mut moved = params.clone();
    let names: Vec<String> = params.names().filter(|n| n.starts_with("warfb")).map(str::to_owned).collect();
    for name in &names {
        let v = plus_noise(params.value(name).unwrap(), 5);
        moved.set_value(name, v).map_err(|e| e.to_string())?;
    }
    let after = pipe.run(&moved, &image).map_err(|e| e.to_string())?;
    for name in ["FA4", "RF4", "G4"] {
        ensure(after.get(name).unwrap().bit_identical(out.get(name).unwrap()), || format!("{name} moved with WA-RFB params"))?;
    }
    ensure(!after.get("G1").unwrap().bit_identical(out.get("G1").unwrap()), || "G1 ignored WA-RFB params".into())?;
    Ok(format!("dims match, G_i depends on RF_j iff j >= i, RF4 bypass holds under {} perturbed WA-RFB tensors", names.len()))
}

fn edgeneck(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_edgeneck")).args(args).output().map_err(|e| e.to_string())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dump = dir.path().join("dump");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = edgeneck(&["forward", "--seed", "7", "--no-timing", "--dump-dir", path(&dump)])?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let bytes = std::fs::read(dump.join("tensors.erlw")).map_err(|e| e.to_string())?;
        runs.push((o.stdout, bytes));
    }
    ensure(runs[0] == runs[1], || "two seeded runs differ".into())?;
    let weights = dir.path().join("w.erlw");
    let o = edgeneck(&["weights", "dump", path(&weights), "--seed", "7"])?;
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let o = edgeneck(&["weights", "load-verify", path(&weights), "--seed", "7"])?;
    ensure(o.status.code() == Some(0), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    Ok(format!("report and {}-byte dump identical across runs; load-verify bit-exact", runs[0].1.len()))
}

/// Expected normalized edge row for a vertical step at column `w / 2`,
/// derived from the 1-D profile: Sobel-x reduces to
/// `4·(I[x+1] − I[x−1])` with clamped borders.
fn step_oracle(w: usize) -> Vec<u8> {
    let profile = |x: isize| if (x.clamp(0, w as isize - 1) as usize) < w / 2 { 0.0 } else { 1.0 };
    let mag: Vec<f64> = (0..w as isize).map(|x| (4.0 * (profile(x + 1) - profile(x - 1)) as f64).abs()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.iter().map(|m| (m / max * 255.0).round() as u8).collect()
}

fn edge_cli() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (input, output) = (dir.path().join("step.pgm"), dir.path().join("edge.pgm"));
    let (w, h) = (256, 256);
    let data = (0..h).flat_map(|_| (0..w).map(|x| if x < w / 2 { 0 } else { 255 })).collect();
    std::fs::write(&input, netpbm::write(&Image::gray(w, h, data))).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let o = edgeneck(&["edge", path(&input), path(&output)])?;
    let took = start.elapsed();
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    let img = netpbm::parse(&std::fs::read(&output).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure((img.width, img.height) == (w, h), || format!("output {}x{}", img.width, img.height))?;
    let want = step_oracle(w);
    let peaks: Vec<usize> = (0..w).filter(|&x| want[x] == 255).collect();
    ensure(peaks == [w / 2 - 1, w / 2], || format!("oracle peaks {peaks:?}"))?;
    for row in img.data.chunks(w) {
        ensure(row == want.as_slice(), || "edge row differs from the step oracle".into())?;
    }
    Ok(format!("{w}x{h} in {:.0} ms, maxima on columns {peaks:?}, zero elsewhere", took.as_secs_f64() * 1e3))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("Sobel oracle", sobel_oracle),
        ("attention bound", attention_bound),
        ("channel contract", channel_contract),
        ("WA-RFB structure", warfb_structure),
        ("pyramid contract", pyramid_contract),
        ("determinism and serialization", determinism),
        ("CLI edge extraction", edge_cli),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {} {name}: {}", i + 1, why.trim_end());
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
