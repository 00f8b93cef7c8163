//! The full neck: backbone stub, edge-guided attention, feature aggregation,
//! three WA-RFB blocks with the coarsest level bypassing them, and top-down
//! pyramid fusion.

use std::time::{Duration, Instant};

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::ega::EdgeGuidedAttention;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::fa::{aggregate_ablation, aggregated_channels, FaMode, PyramidSet, AGGREGATED_STRIDES, BACKBONE_STRIDES};
use crate::fpn::Fpn;
use crate::init::Initializer;
use crate::tensor::{Shape, Tensor};
use crate::warfb::Warfb;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub channels: [usize; 5],
    pub pyramid_width: usize,
    pub reduction: usize,
    pub fa_mode: FaMode,
    pub in_channels: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { channels: [16, 32, 64, 128, 256], pyramid_width: 256, reduction: 16, fa_mode: FaMode::Full, in_channels: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    backbone: Backbone,
    ega: EdgeGuidedAttention,
    warfb: [Warfb; 3],
    fpn: Fpn,
}

/// Every intermediate of one forward pass, still attached to its tape.
pub struct Trace<'t, T: Element> {
    pub features: PyramidSet<Var<'t, T>>,
    pub f1_tilde: Var<'t, T>,
    pub f2_tilde: Var<'t, T>,
    pub aggregated: PyramidSet<Var<'t, T>>,
    pub rf: PyramidSet<Var<'t, T>>,
    pub g: PyramidSet<Var<'t, T>>,
    pub timings: Vec<(&'static str, Duration)>,
}

impl<'t, T: Element> Trace<'t, T> {
    /// Named intermediates in pipeline order.
    pub fn named(&self) -> Vec<(String, Var<'t, T>)> {
        let mut v = Vec::new();
        let level = |v: &mut Vec<_>, tag: &str, set: &PyramidSet<Var<'t, T>>| {
            for (i, x) in set.values().enumerate() {
                v.push((format!("{tag}{}", i + 1), *x));
            }
        };
        level(&mut v, "F", &self.features);
        v.push(("F1_tilde".into(), self.f1_tilde));
        v.push(("F2_tilde".into(), self.f2_tilde));
        level(&mut v, "FA", &self.aggregated);
        level(&mut v, "RF", &self.rf);
        level(&mut v, "G", &self.g);
        v
    }

    /// Sum of every element of every `G_i`.
    pub fn loss(&self) -> Result<Var<'t, T>> {
        let mut it = self.g.values();
        let first = it.next().ok_or_else(|| Error::Usage("empty pyramid".into()))?.sum();
        it.try_fold(first, |acc, g| acc.add(g.sum()))
    }
}

/// Detached forward results.
#[derive(Debug, Clone)]
pub struct PipelineOutput<T: Element> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub timings: Vec<(&'static str, Duration)>,
}

impl<T: Element> PipelineOutput<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn pyramid(&self) -> Vec<&Tensor<T>> {
        (1..=4).filter_map(|i| self.get(&format!("G{i}"))).collect()
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let backbone = Backbone::new("backbone", BackboneConfig { channels: cfg.channels, in_channels: cfg.in_channels })?;
        let ega = EdgeGuidedAttention::new("ega", cfg.channels[1], cfg.reduction)?;
        let fa = aggregated_channels(cfg.channels, cfg.fa_mode);
        let p = cfg.pyramid_width;
        let warfb = [Warfb::new("warfb1", fa[0], p)?, Warfb::new("warfb2", fa[1], p)?, Warfb::new("warfb3", fa[2], p)?];
        let fpn = Fpn::new("fpn", [p, p, p, fa[3]], p)?;
        Ok(Pipeline { cfg, backbone, ega, warfb, fpn })
    }

    pub fn config(&self) -> PipelineConfig {
        self.cfg
    }

    pub fn warfb(&self) -> &[Warfb; 3] {
        &self.warfb
    }

    pub fn fpn(&self) -> &Fpn {
        &self.fpn
    }

    pub fn ega(&self) -> &EdgeGuidedAttention {
        &self.ega
    }

    /// Seeded parameters: backbone, EGA, WA-RFB 1..3, then the pyramid.
    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        self.backbone.init(&mut store, &mut init)?;
        self.ega.init(&mut store, &mut init)?;
        for b in &self.warfb {
            b.init(&mut store, &mut init)?;
        }
        self.fpn.init(&mut store, &mut init)?;
        Ok(store)
    }

    /// Names and shapes of every parameter, in registration order.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Shape)>> {
        let store = self.init_params::<f32>(0)?;
        Ok(store.iter().map(|p| (p.name().to_owned(), p.value().shape())).collect())
    }

    /// Checks that `store` holds exactly this architecture's parameters.
    pub fn validate<T: Element>(&self, store: &ParamStore<T>) -> Result<()> {
        let want = self.parameter_shapes()?;
        for (name, shape) in &want {
            let got = store
                .get(name)
                .ok_or_else(|| Error::Config(format!("parameter {name} ({shape}) is missing")))?
                .value()
                .shape();
            if got != *shape {
                return Err(Error::Config(format!("parameter {name} has shape {got}, architecture expects {shape}")));
            }
        }
        if let Some(extra) = store.names().find(|n| !want.iter().any(|(w, _)| w == n)) {
            return Err(Error::Config(format!("parameter {extra} is not part of the architecture")));
        }
        for b in &self.warfb {
            b.validate(store)?;
        }
        Ok(())
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<Trace<'t, T>> {
        let mut timings = Vec::with_capacity(5);
        let mut clock = Instant::now();
        let mut lap = |name: &'static str, timings: &mut Vec<_>| {
            let now = Instant::now();
            timings.push((name, now - clock));
            clock = now;
        };

        let features = self.backbone.forward(p, image)?;
        lap("backbone", &mut timings);

        let f: Vec<Var<'t, T>> = features.values().copied().collect();
        let (f1_tilde, f2_tilde) = self.ega.forward(p, f[0], f[1])?;
        lap("ega", &mut timings);

        let guided = PyramidSet::from_values(&BACKBONE_STRIDES, vec![f1_tilde, f2_tilde, f[2], f[3], f[4]]);
        let aggregated = aggregate_ablation(&guided, self.cfg.fa_mode)?;
        lap("fa", &mut timings);

        let fa: Vec<Var<'t, T>> = aggregated.values().copied().collect();
        let mut rf = Vec::with_capacity(4);
        for (b, x) in self.warfb.iter().zip(&fa) {
            rf.push(b.forward(p, *x)?);
        }
        rf.push(fa[3]);
        let rf = PyramidSet::from_values(&AGGREGATED_STRIDES, rf);
        lap("warfb", &mut timings);

        let g = self.fpn.forward(p, &rf)?;
        lap("fpn", &mut timings);

        Ok(Trace { features, f1_tilde, f2_tilde, aggregated, rf, g, timings })
    }

    /// Forward pass on a fresh tape, returning detached tensors.
    pub fn run<T: Element>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<PipelineOutput<T>> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let trace = self.forward(&p, tape.constant(image.clone()))?;
        let tensors = trace.named().into_iter().map(|(n, v)| (n, (*v.value()).clone())).collect();
        Ok(PipelineOutput { tensors, timings: trace.timings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig { channels: [4, 8, 8, 8, 16], pyramid_width: 8, reduction: 4, fa_mode: FaMode::Full, in_channels: 3 }
    }

    #[test]
    fn output_widths_and_spatial_dims() {
        for mode in FaMode::ALL {
            let pipe = Pipeline::new(PipelineConfig { fa_mode: mode, ..small() }).unwrap();
            let store = pipe.init_params::<f32>(7).unwrap();
            pipe.validate(&store).unwrap();
            let out = pipe.run(&store, &Tensor::uniform([1, 3, 128, 128], 0.0, 1.0, 1)).unwrap();
            for (i, g) in out.pyramid().into_iter().enumerate() {
                assert_eq!(g.dims(), [1, 8, 16 >> i, 16 >> i], "{mode}");
            }
            assert_eq!(out.timings.len(), 5);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let pipe = Pipeline::new(small()).unwrap();
        let img = Tensor::<f32>::uniform([1, 3, 64, 64], 0.0, 1.0, 3);
        let a = pipe.run(&pipe.init_params(5).unwrap(), &img).unwrap();
        let b = pipe.run(&pipe.init_params(5).unwrap(), &img).unwrap();
        for ((na, ta), (nb, tb)) in a.tensors.iter().zip(&b.tensors) {
            assert_eq!(na, nb);
            assert!(ta.bit_identical(tb), "{na}");
        }
    }

    #[test]
    fn validate_rejects_foreign_store() {
        let pipe = Pipeline::new(small()).unwrap();
        let other = Pipeline::new(PipelineConfig { pyramid_width: 16, ..small() }).unwrap();
        let store = other.init_params::<f32>(0).unwrap();
        assert!(matches!(pipe.validate(&store), Err(Error::Config(_))));
    }

    #[test]
    fn reduction_must_divide_c2() {
        assert!(matches!(Pipeline::new(PipelineConfig { reduction: 3, ..small() }), Err(Error::Config(_))));
    }
}
