//! The gradient-check suite: every differentiable primitive on three seeded
//! shapes, every block end to end, and the full pipeline.
//!
//! Each check reduces its output to a scalar through a fixed weighted sum
//! `Σ r ⊙ y` with seeded `r ∈ [0.5, 1.5)`, so that adjoints which only get
//! the total right (a plain sum) still fail.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Bound, OpKind, ParamStore, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::ega::{deep_sobel, edge_guide, edge_map, ChannelAttention, EdgeGuidedAttention};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fa::{aggregate_ablation, FaMode, PyramidSet, AGGREGATED_STRIDES, BACKBONE_STRIDES};
use crate::fpn::Fpn;
use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport, KinkPolicy};
use crate::init::Initializer;
use crate::kernels::{ConvSpec, PoolKind};
use crate::pipeline::{Pipeline, PipelineConfig};
use crate::tensor::{Shape, Tensor};
use crate::warfb::Warfb;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Blocks,
    All,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "blocks" => Ok(Scope::Blocks),
            "all" => Ok(Scope::All),
            _ => Err(Error::Usage(format!("unknown scope {s:?} (ops, blocks, all)"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Blocks => "blocks",
            Scope::All => "all",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub fault: Option<OpKind>,
    pub exec: Exec,
    /// Probed coordinates per parameter tensor in the block and pipeline checks.
    pub coords_per_param: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 1, fault: None, exec: Exec::current(), coords_per_param: 6 }
    }
}

impl SuiteConfig {
    fn base(&self) -> GradCheckConfig {
        let mut c = GradCheckConfig::default().with_seed(self.seed).with_exec(self.exec);
        c.fault = self.fault;
        c
    }
}

/// Reduced pipeline used by the end-to-end check on a `1×3×64×64` image.
pub fn gradcheck_pipeline_config() -> PipelineConfig {
    PipelineConfig { channels: [4, 8, 8, 8, 16], pyramid_width: 8, reduction: 4, fa_mode: FaMode::Full, in_channels: 3 }
}

/// `Σ r ⊙ v` with seeded `r`.
pub fn weighted_sum<'t>(v: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let r = v.tape().constant(Tensor::uniform(v.shape(), 0.5, 1.5, seed ^ 0x5eed));
    Ok(v.mul(r)?.sum())
}

fn weighted_total<'t>(vs: &[Var<'t, f64>], seed: u64) -> Result<Var<'t, f64>> {
    let mut acc: Option<Var<'t, f64>> = None;
    for (i, v) in vs.iter().enumerate() {
        let s = weighted_sum(*v, seed.wrapping_add(i as u64))?;
        acc = Some(match acc {
            Some(a) => a.add(s)?,
            None => s,
        });
    }
    acc.ok_or_else(|| Error::Usage("nothing to reduce".into()))
}

/// Per-channel ramps plus noise. Random fields put some pixels close to a
/// zero edge vector, where the magnitude's curvature makes central
/// differences at `ε = 1e-3` too coarse for `1e-5`; a ramp keeps every edge
/// vector well away from the origin.
pub fn ramp_field(shape: [usize; 4], slope: (f64, f64), noise: f64, seed: u64) -> Tensor<f64> {
    let slopes = Tensor::<f64>::uniform([1, shape[1], 1, 2], slope.0, slope.1, seed);
    let jitter = Tensor::<f64>::uniform(shape, -noise, noise, seed + 1);
    let (cy, cx) = ((shape[2] as f64 - 1.0) / 2.0, (shape[3] as f64 - 1.0) / 2.0);
    Tensor::from_fn(shape, |n, c, y, x| {
        slopes.at(0, c, 0, 0) * (y as f64 - cy) + slopes.at(0, c, 0, 1) * (x as f64 - cx) + jitter.at(n, c, y, x)
    })
}

fn named(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_owned(), t)
}

fn uniform(shape: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, seed)
}

/// Three seeded shapes per primitive.
pub fn op_checks(cfg: &SuiteConfig) -> Result<Vec<GradCheckReport>> {
    let s = cfg.seed.wrapping_mul(1000);
    let base = cfg.base();
    let shapes: [[usize; 4]; 3] = [[1, 2, 5, 5], [2, 3, 4, 6], [1, 4, 7, 3]];
    let mut out = Vec::new();

    let convs: [(Shape, [usize; 4], ConvSpec, bool); 3] = [
        (Shape::new(1, 2, 5, 5), [3, 2, 3, 3], ConvSpec::default(), true),
        (Shape::new(2, 4, 6, 7), [4, 2, 3, 2], ConvSpec::default().stride(2, 1).padding(1, 1).groups(2), true),
        (Shape::new(1, 3, 9, 8), [2, 3, 1, 3], ConvSpec::same(1, 3, 3, 3), false),
    ];
    for (i, (xs, ws, spec, bias)) in convs.into_iter().enumerate() {
        let k = s + 10 * i as u64;
        let mut inputs = vec![named("x", uniform(xs.dims(), -1.0, 1.0, k)), named("w", uniform(ws, -1.0, 1.0, k + 1))];
        if bias {
            inputs.push(named("b", uniform([1, ws[0], 1, 1], -1.0, 1.0, k + 2)));
        }
        let r = grad_check(
            &format!("conv2d/{xs}"),
            move |_t, v| weighted_sum(v[0].conv2d(v[1], v.get(2).copied(), spec)?, k),
            &inputs,
            &base,
        )?;
        out.push(r);
    }

    let linears: [(usize, usize, usize, bool); 3] = [(1, 8, 2, true), (2, 5, 3, false), (3, 4, 4, true)];
    for (i, (n, cin, cout, bias)) in linears.into_iter().enumerate() {
        let k = s + 100 + 10 * i as u64;
        let mut inputs = vec![named("x", uniform([n, cin, 1, 1], -1.0, 1.0, k)), named("w", uniform([cout, cin, 1, 1], -1.0, 1.0, k + 1))];
        if bias {
            inputs.push(named("b", uniform([1, cout, 1, 1], -1.0, 1.0, k + 2)));
        }
        out.push(grad_check(
            &format!("linear/{n}x{cin}->{cout}"),
            move |_t, v| weighted_sum(v[0].linear(v[1], v.get(2).copied())?, k),
            &inputs,
            &base,
        )?);
    }

    for (i, shape) in shapes.iter().enumerate() {
        let k = s + 200 + 10 * i as u64;
        let [n, c, h, w] = *shape;
        let a = uniform(*shape, -1.0, 1.0, k);
        let bcast = [[n, c, h, w], [n, 1, h, w], [n, c, 1, 1]][i];
        let b = uniform(bcast, -1.0, 1.0, k + 1);
        let pair = vec![named("a", a.clone()), named("b", b)];
        let one = vec![named("x", a.clone())];
        let tag = Shape::from(*shape);

        out.push(grad_check(&format!("add/{tag}"), move |_t, v| weighted_sum(v[0].add(v[1])?, k), &pair, &base)?);
        out.push(grad_check(&format!("mul/{tag}"), move |_t, v| weighted_sum(v[0].mul(v[1])?, k), &pair, &base)?);
        out.push(grad_check(
            &format!("relu/{tag}"),
            move |_t, v| weighted_sum(v[0].relu(), k),
            &one,
            &base.clone().with_min_abs(0.1),
        )?);
        out.push(grad_check(&format!("sigmoid/{tag}"), move |_t, v| weighted_sum(v[0].sigmoid(), k), &one, &base)?);
        let pos = vec![named("x", uniform(*shape, 0.5, 2.0, k + 2))];
        out.push(grad_check(&format!("sqrt/{tag}"), move |_t, v| weighted_sum(v[0].sqrt()?, k), &pos, &base)?);
        out.push(grad_check(&format!("square/{tag}"), move |_t, v| weighted_sum(v[0].square(), k), &one, &base)?);
        let planar = vec![named("gx", a.clone()), named("gy", uniform(*shape, -1.0, 1.0, k + 3))];
        out.push(grad_check(
            &format!("magnitude/{tag}"),
            move |_t, v| weighted_sum(v[0].magnitude(v[1])?, k),
            &planar,
            &base,
        )?);
        out.push(grad_check(
            &format!("global_avg/{tag}"),
            move |_t, v| weighted_sum(v[0].global_pool(PoolKind::Avg)?, k),
            &one,
            &base,
        )?);
        out.push(grad_check(
            &format!("global_max/{tag}"),
            move |_t, v| weighted_sum(v[0].global_pool(PoolKind::Max)?, k),
            &one,
            &base,
        )?);
        out.push(grad_check(&format!("up2/{tag}"), move |_t, v| weighted_sum(v[0].up2()?, k), &one, &base)?);
        let even = vec![named("x", uniform([n, c, 2 * h, 2 * w], -1.0, 1.0, k + 4))];
        out.push(grad_check(&format!("down2/{tag}"), move |_t, v| weighted_sum(v[0].down2()?, k), &even, &base)?);
        let parts = vec![named("a", a.clone()), named("b", uniform([n, i + 1, h, w], -1.0, 1.0, k + 5))];
        out.push(grad_check(
            &format!("concat/{tag}"),
            move |t, v| weighted_sum(t.concat(&[v[0], v[1], v[0]])?, k),
            &parts,
            &base,
        )?);
        out.push(grad_check(&format!("sum/{tag}"), move |_t, v| Ok(v[0].sum()), &one, &base)?);
        out.push(grad_check(
            &format!("channel_mean/{tag}"),
            move |_t, v| weighted_sum(v[0].channel_mean()?, k),
            &one,
            &base,
        )?);
        out.push(grad_check(
            &format!("pad_replicate/{tag}"),
            move |_t, v| weighted_sum(v[0].pad_replicate(i + 1)?, k),
            &one,
            &base,
        )?);
    }
    Ok(out)
}

/// Parameters of `store` as grad-check inputs, prefixed by extra inputs.
fn with_params(mut inputs: Vec<(String, Tensor<f64>)>, store: &ParamStore<f64>) -> (Vec<(String, Tensor<f64>)>, usize) {
    let offset = inputs.len();
    inputs.extend(store.iter().map(|p| (p.name().to_owned(), p.value().clone())));
    (inputs, offset)
}

fn rebind<'t>(names: &[String], vars: &[Var<'t, f64>]) -> Bound<'t, f64> {
    Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()))
}

/// End-to-end checks of every block with respect to its inputs and
/// parameters.
pub fn block_checks(cfg: &SuiteConfig) -> Result<Vec<GradCheckReport>> {
    let s = cfg.seed.wrapping_mul(1000) + 500;
    let full = cfg.base().with_kinks(KinkPolicy::Freeze);
    let sub = full.clone().with_max_coords(cfg.coords_per_param);
    let mut out = Vec::new();

    let x = vec![named("f", ramp_field([1, 3, 6, 5], (1.0, 2.0), 0.5, s))];
    out.push(grad_check(
        "deep_sobel",
        move |_t, v| {
            let (gx, gy) = deep_sobel(v[0])?;
            weighted_total(&[gx, gy], s)
        },
        &x,
        &full,
    )?);
    out.push(grad_check("edge_map", move |_t, v| weighted_sum(edge_map(v[0])?, s), &x, &full)?);
    out.push(grad_check(
        "edge_guide",
        move |_t, v| weighted_sum(edge_guide(v[0], edge_map(v[0])?)?, s),
        &x,
        &full,
    )?);

    let ca = ChannelAttention::new("ca", 8, 4)?;
    let mut store = ParamStore::new();
    ca.init(&mut store, &mut Initializer::new(s))?;
    let (inputs, off) = with_params(vec![named("x", uniform([2, 8, 4, 4], -1.0, 1.0, s + 1))], &store);
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    let block = ca.clone();
    out.push(grad_check(
        "channel_attention",
        move |_t, v| weighted_sum(block.forward(&rebind(&names, &v[off..]), v[0])?, s),
        &inputs,
        &full,
    )?);

    let ega = EdgeGuidedAttention::new("ega", 8, 4)?;
    let mut store = ParamStore::new();
    ega.init(&mut store, &mut Initializer::new(s + 2))?;
    let (inputs, off) = with_params(
        vec![named("f1", ramp_field([1, 4, 8, 8], (1.0, 2.0), 0.5, s + 3)), named("f2", ramp_field([1, 8, 4, 4], (0.1, 0.2), 0.1, s + 4))],
        &store,
    );
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    out.push(grad_check(
        "ega",
        move |_t, v| {
            let (a, b) = ega.forward(&rebind(&names, &v[off..]), v[0], v[1])?;
            weighted_total(&[a, b], s)
        },
        &inputs,
        &full,
    )?);

    let c = [2, 3, 2, 3, 2];
    for mode in FaMode::ALL {
        let inputs: Vec<_> = (0..5)
            .map(|k| named(&format!("F{}", k + 1), uniform([1, c[k], 16 >> k, 16 >> k], -1.0, 1.0, s + 10 + k as u64)))
            .collect();
        out.push(grad_check(
            &format!("fa/{mode}"),
            move |_t, v| {
                let set = PyramidSet::from_values(&BACKBONE_STRIDES, v.to_vec());
                let fa = aggregate_ablation(&set, mode)?;
                weighted_total(&fa.values().copied().collect::<Vec<_>>(), s)
            },
            &inputs,
            &full,
        )?);
    }

    let rfb = Warfb::new("warfb", 3, 4)?;
    let mut store = ParamStore::new();
    rfb.init(&mut store, &mut Initializer::new(s + 20))?;
    randomize_biases(&mut store, (-0.1, 0.1), s + 21);
    let (inputs, off) = with_params(vec![named("x", uniform([1, 3, 8, 8], -1.0, 1.0, s + 22))], &store);
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    out.push(grad_check(
        "warfb",
        move |_t, v| weighted_sum(rfb.forward(&rebind(&names, &v[off..]), v[0])?, s),
        &inputs,
        &sub,
    )?);

    let fpn = Fpn::new("fpn", [3, 2, 4, 3], 4)?;
    let mut store = ParamStore::new();
    fpn.init(&mut store, &mut Initializer::new(s + 30))?;
    randomize_biases(&mut store, (-0.1, 0.1), s + 31);
    let rc = [3, 2, 4, 3];
    let rfs: Vec<_> = (0..4)
        .map(|k| named(&format!("RF{}", k + 1), uniform([1, rc[k], 8 >> k, 8 >> k], -1.0, 1.0, s + 32 + k as u64)))
        .collect();
    let (inputs, off) = with_params(rfs, &store);
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    out.push(grad_check(
        "fpn",
        move |_t, v| {
            let set = PyramidSet::from_values(&AGGREGATED_STRIDES, v[..off].to_vec());
            let g = fpn.forward(&rebind(&names, &v[off..]), &set)?;
            weighted_total(&g.values().copied().collect::<Vec<_>>(), s)
        },
        &inputs,
        &sub,
    )?);

    let bb = Backbone::new("backbone", BackboneConfig { channels: [2, 3, 2, 3, 2], in_channels: 3 })?;
    let mut store = ParamStore::new();
    bb.init(&mut store, &mut Initializer::new(s + 40))?;
    randomize_biases(&mut store, (-0.1, 0.1), s + 41);
    let (inputs, off) = with_params(vec![named("image", uniform([1, 3, 64, 64], 0.0, 1.0, s + 42))], &store);
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    out.push(grad_check(
        "backbone",
        move |_t, v| {
            let f = bb.forward(&rebind(&names, &v[off..]), v[0])?;
            weighted_total(&f.values().copied().collect::<Vec<_>>(), s)
        },
        &inputs,
        &sub,
    )?);
    Ok(out)
}

/// Zero biases leave their gradient paths degenerate; the checks draw them
/// from `range` instead.
fn randomize_biases(store: &mut ParamStore<f64>, range: (f64, f64), seed: u64) {
    let names: Vec<String> = store.names().filter(|n| n.ends_with(".b")).map(str::to_owned).collect();
    for (i, name) in names.iter().enumerate() {
        if let Ok(v) = store.value_mut(name) {
            *v = Tensor::uniform(v.shape(), range.0, range.1, seed.wrapping_add(i as u64));
        }
    }
}

/// The whole pipeline on a seeded `1×3×64×64` image with respect to the
/// image and every parameter.
pub fn pipeline_check(cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let s = cfg.seed.wrapping_mul(1000) + 900;
    let pipe = Pipeline::new(gradcheck_pipeline_config())?;
    let mut store = pipe.init_params::<f64>(s)?;
    randomize_biases(&mut store, (0.0, 0.2), s + 1);
    let image = ramp_field([1, 3, 64, 64], (0.01, 0.02), 0.1, s + 2).map(|v| v + 0.5);
    let (inputs, off) = with_params(vec![named("image", image)], &store);
    let names: Vec<String> = inputs[off..].iter().map(|(n, _)| n.clone()).collect();
    grad_check(
        "pipeline",
        move |_t, v| {
            let trace = pipe.forward(&rebind(&names, &v[off..]), v[0])?;
            weighted_total(&trace.g.values().copied().collect::<Vec<_>>(), s)
        },
        &inputs,
        &cfg.base().with_kinks(KinkPolicy::Freeze).with_max_coords(cfg.coords_per_param),
    )
}

/// `ops` runs the primitives, `blocks` the blocks, `all` both plus the
/// pipeline.
pub fn run(scope: Scope, cfg: &SuiteConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::Ops | Scope::All) {
        out.extend(op_checks(cfg)?);
    }
    if matches!(scope, Scope::Blocks | Scope::All) {
        out.extend(block_checks(cfg)?);
    }
    if scope == Scope::All {
        out.push(pipeline_check(cfg)?);
    }
    Ok(out)
}
