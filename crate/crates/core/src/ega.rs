//! Edge-guided attention.
//!
//! Fixed Sobel kernels are applied depthwise to every channel of a feature
//! map (borders replicated by one pixel, so the output keeps the input's
//! size and a constant field has no response anywhere) and the per-channel
//! responses are averaged into one horizontal and
//! one vertical derivative map. Their pointwise magnitude is the edge map,
//! which multiplies the feature map across all channels. The stride-8
//! feature is then recalibrated by a channel-attention unit.

use crate::autodiff::{Bound, ParamStore, Var};
use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::init::Initializer;
use crate::kernels::{ConvSpec, PoolKind};
use crate::tensor::{Shape, Tensor};

/// Horizontal-change Sobel kernel, row-major.
pub const SOBEL_X: [[i8; 3]; 3] = [[1, 0, -1], [2, 0, -2], [1, 0, -1]];
/// Vertical-change Sobel kernel, the transpose of [`SOBEL_X`].
pub const SOBEL_Y: [[i8; 3]; 3] = [[1, 2, 1], [0, 0, 0], [-1, -2, -1]];

/// The two constant 3×3 Sobel kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobelPair {
    pub gx: [[i8; 3]; 3],
    pub gy: [[i8; 3]; 3],
}

impl Default for SobelPair {
    fn default() -> Self {
        SobelPair { gx: SOBEL_X, gy: SOBEL_Y }
    }
}

impl SobelPair {
    /// Depthwise weight `C×1×3×3` with `kernel` repeated for every channel.
    pub fn depthwise<T: Element>(kernel: &[[i8; 3]; 3], channels: usize) -> Tensor<T> {
        Tensor::from_fn([channels, 1, 3, 3], |_, _, y, x| T::of(kernel[y][x] as f64))
    }
}

/// Averaged depthwise Sobel responses `(grad_x, grad_y)`, each `N×1×H×W`.
pub fn deep_sobel<'t, T: Element>(f: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let [_, c, h, w] = f.shape().dims();
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Domain(format!("deep Sobel needs C, H, W >= 1, got {}", f.shape())));
    }
    let tape = f.tape();
    let spec = ConvSpec::default().groups(c);
    let pair = SobelPair::default();
    let wx = tape.constant(SobelPair::depthwise::<T>(&pair.gx, c));
    let wy = tape.constant(SobelPair::depthwise::<T>(&pair.gy, c));
    let padded = f.pad_replicate(1)?;
    let gx = padded.conv2d(wx, None, spec)?.channel_mean()?;
    let gy = padded.conv2d(wy, None, spec)?.channel_mean()?;
    Ok((gx, gy))
}

/// Pointwise `sqrt(gx² + gy²)`.
pub fn edge_magnitude<'t, T: Element>(gx: Var<'t, T>, gy: Var<'t, T>) -> Result<Var<'t, T>> {
    gx.magnitude(gy)
}

/// Multiplies every channel of `f` by the single-channel edge map `fe`.
pub fn edge_guide<'t, T: Element>(f: Var<'t, T>, fe: Var<'t, T>) -> Result<Var<'t, T>> {
    let (fs, es) = (f.shape(), fe.shape());
    if es.c() != 1 || fs.n() != es.n() || fs.h() != es.h() || fs.w() != es.w() {
        return Err(contract!("edge map {es} cannot guide feature {fs}"));
    }
    f.mul(fe)
}

/// Edge map of `f` computed from `f` itself.
pub fn edge_map<'t, T: Element>(f: Var<'t, T>) -> Result<Var<'t, T>> {
    let (gx, gy) = deep_sobel(f)?;
    edge_magnitude(gx, gy)
}

/// Shared two-layer gate over average- and max-pooled channel descriptors:
/// `σ(W1·relu(W0·avg(x)) + W1·relu(W0·max(x))) ⊙ x`, without biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelAttention {
    prefix: String,
    channels: usize,
    reduction: usize,
}

impl ChannelAttention {
    pub fn new(prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "channel attention needs C divisible by the reduction ratio, got C={channels}, r={reduction}"
            )));
        }
        Ok(ChannelAttention { prefix: prefix.to_owned(), channels, reduction })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn w0_name(&self) -> String {
        format!("{}.w0", self.prefix)
    }

    pub fn w1_name(&self) -> String {
        format!("{}.w1", self.prefix)
    }

    /// Registers `w0: C/r × C` and `w1: C × C/r`.
    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        let (c, h) = (self.channels, self.hidden());
        store.insert(&self.w0_name(), init.kaiming(Shape::new(h, c, 1, 1)))?;
        store.insert(&self.w1_name(), init.kaiming(Shape::new(c, h, 1, 1)))
    }

    /// Per-sample, per-channel scale in `(0, 1)`, shaped `N×C×1×1`.
    pub fn scale<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.c() != self.channels {
            return Err(contract!("channel attention built for C={} received {s}", self.channels));
        }
        let (w0, w1) = (p.get(&self.w0_name())?, p.get(&self.w1_name())?);
        let avg = x.global_pool(PoolKind::Avg)?;
        let max = x.global_pool(PoolKind::Max)?;
        let a = avg.linear(w0, None)?.relu().linear(w1, None)?;
        let m = max.linear(w0, None)?.relu().linear(w1, None)?;
        Ok(a.add(m)?.sigmoid())
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let scale = self.scale(p, x)?;
        x.mul(scale)
    }
}

/// Edge guiding of the stride-4 and stride-8 features, followed by channel
/// attention on the stride-8 one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeGuidedAttention {
    ca: ChannelAttention,
}

impl EdgeGuidedAttention {
    pub fn new(prefix: &str, f2_channels: usize, reduction: usize) -> Result<Self> {
        Ok(EdgeGuidedAttention { ca: ChannelAttention::new(&format!("{prefix}.ca"), f2_channels, reduction)? })
    }

    pub fn attention(&self) -> &ChannelAttention {
        &self.ca
    }

    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.ca.init(store, init)
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        f1: Var<'t, T>,
        f2: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let f1_tilde = edge_guide(f1, edge_map(f1)?)?;
        let f2_guided = edge_guide(f2, edge_map(f2)?)?;
        let f2_tilde = self.ca.forward(p, f2_guided)?;
        Ok((f1_tilde, f2_tilde))
    }
}
