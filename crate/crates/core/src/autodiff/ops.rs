//! Differentiable operations on [`Var`]s.

use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::kernels::{self, ConvSpec, PoolKind, Resample};
use crate::tensor::{Shape, Tensor};

use super::broadcast::zip_with;
use super::tape::{Kink, Op, Tape, Var};

/// Pointwise operation selector for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementwiseKind {
    Add,
    Mul,
    Relu,
    Sigmoid,
    Sqrt,
    Square,
}

/// Dispatches a pointwise op; binary kinds require `b`, unary kinds reject it.
pub fn elementwise<'t, T: Element>(kind: ElementwiseKind, a: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    use ElementwiseKind::*;
    match (kind, b) {
        (Add, Some(b)) => a.add(b),
        (Mul, Some(b)) => a.mul(b),
        (Add | Mul, None) => Err(contract!("{kind:?} needs two operands")),
        (Relu, None) => Ok(a.relu()),
        (Sigmoid, None) => Ok(a.sigmoid()),
        (Sqrt, None) => a.sqrt(),
        (Square, None) => Ok(a.square()),
        (_, Some(_)) => Err(contract!("{kind:?} takes one operand")),
    }
}

impl<'t, T: Element> Var<'t, T> {
    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn unary(self, f: impl Fn(T) -> T, op: Op) -> Var<'t, T> {
        let out = self.with_value(|x| x.map(&f));
        self.tape.push(out, op, self.rg(), None)
    }

    /// Cross-correlation with optional per-output-channel bias.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: ConvSpec) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        if let Some(b) = &bias {
            self.same_tape(b)?;
        }
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let out = kernels::conv2d(&x, &w, b.as_deref(), &spec)?;
        let rg = self.rg() || weight.rg() || bias.is_some_and(|b| b.rg());
        let op = Op::Conv2d { input: self.id, weight: weight.id, bias: bias.map(|b| b.id), spec };
        Ok(self.tape.push(out, op, rg, None))
    }

    /// Affine map of an `N×C×1×1` vector by a `C_out×C_in×1×1` weight.
    pub fn linear(self, w: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let b = bias.map(|b| b.value());
        let out = kernels::linear(&self.value(), &w.value(), b.as_deref())?;
        let rg = self.rg() || w.rg() || bias.is_some_and(|b| b.rg());
        Ok(self.tape.push(out, Op::Linear { x: self.id, w: w.id, bias: bias.map(|b| b.id) }, rg, None))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = zip_with(&self.value(), &other.value(), |a, b| a + b)?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Add { a: self.id, b: other.id }, rg, None))
    }

    /// Pointwise product with broadcasting over unit axes.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let out = zip_with(&self.value(), &other.value(), |a, b| a * b)?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Mul { a: self.id, b: other.id }, rg, None))
    }

    pub fn relu(self) -> Var<'t, T> {
        let signs = || self.with_value(|x| x.data().iter().map(|&v| v > T::zero()).collect());
        match self.tape.record_kink(|| Kink::Signs(signs())) {
            Some(Kink::Signs(mask)) if mask.len() == self.shape().numel() => {
                let out = self.with_value(|x| {
                    let d = x.data().iter().zip(&mask).map(|(&v, &m)| if m { v } else { T::zero() }).collect();
                    Tensor::new(x.shape(), d)
                });
                self.tape.push(out.expect("same shape"), Op::Relu { a: self.id }, self.rg(), None)
            }
            _ => self.unary(|v| if v > T::zero() { v } else { T::zero() }, Op::Relu { a: self.id }),
        }
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(|v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid { a: self.id })
    }

    /// Square root; negative inputs are a domain error rather than NaN.
    pub fn sqrt(self) -> Result<Var<'t, T>> {
        let bad = self.with_value(|x| x.data().iter().position(|&v| v < T::zero()));
        if let Some(i) = bad {
            return Err(Error::Domain(format!("sqrt of negative value at flat index {i}")));
        }
        Ok(self.unary(|v| v.sqrt(), Op::Sqrt { a: self.id }))
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|v| v * v, Op::Square { a: self.id })
    }

    /// Pointwise `sqrt(self² + other²)`; the backward emits zero where both
    /// components vanish.
    pub fn magnitude(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(contract!("magnitude operands differ: {} vs {}", a.shape(), b.shape()));
        }
        let node = self.tape.len();
        self.tape.record_kink(|| Kink::Planar {
            node,
            points: a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64(), y.as_f64())).collect(),
        });
        let out = zip_with(&a, &b, |x, y| (x * x + y * y).sqrt())?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Magnitude { gx: self.id, gy: other.id }, rg, None))
    }

    /// Per-sample, per-channel reduction over all spatial positions.
    pub fn global_pool(self, kind: PoolKind) -> Result<Var<'t, T>> {
        let x = self.value();
        let (mut out, mut argmax) = kernels::global_pool(kind, &x)?;
        if kind == PoolKind::Max {
            if let Some(Kink::Argmax(fixed)) = self.tape.record_kink(|| Kink::Argmax(argmax.clone())) {
                if fixed.len() == argmax.len() {
                    let plane = x.shape().plane();
                    let d = fixed.iter().enumerate().map(|(i, &k)| x.data()[i * plane + k]).collect();
                    out = Tensor::new(out.shape(), d)?;
                    argmax = fixed;
                }
            }
        }
        Ok(self.tape.push(out, Op::GlobalPool { a: self.id, kind, argmax }, self.rg(), None))
    }

    pub fn resample(self, mode: Resample) -> Result<Var<'t, T>> {
        let x = self.value();
        let (mut out, mut argmax) = kernels::resample(mode, &x)?;
        let op = match mode {
            Resample::Up2Nearest => Op::Up2 { a: self.id },
            Resample::Down2Max => {
                if let Some(Kink::Argmax(fixed)) = self.tape.record_kink(|| Kink::Argmax(argmax.clone())) {
                    if fixed.len() == argmax.len() {
                        out = Tensor::new(out.shape(), fixed.iter().map(|&k| x.data()[k]).collect())?;
                        argmax = fixed;
                    }
                }
                Op::Down2 { a: self.id, argmax }
            }
        };
        Ok(self.tape.push(out, op, self.rg(), None))
    }

    pub fn up2(self) -> Result<Var<'t, T>> {
        self.resample(Resample::Up2Nearest)
    }

    pub fn down2(self) -> Result<Var<'t, T>> {
        self.resample(Resample::Down2Max)
    }

    /// Sum of all elements as a `1×1×1×1` scalar.
    pub fn sum(self) -> Var<'t, T> {
        let s = self.with_value(|x| x.data().iter().fold(T::zero(), |a, &b| a + b));
        self.tape.push(Tensor::scalar(s), Op::Sum { a: self.id }, self.rg(), None)
    }

    /// Mean over channels, giving an `N×1×H×W` map.
    pub fn channel_mean(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let [n, c, h, w] = x.dims();
        if c == 0 {
            return Err(Error::Domain("channel mean of a tensor with no channels".into()));
        }
        let count = T::of(c as f64);
        let p = h * w;
        let mut out = vec![T::zero(); n * p];
        for ni in 0..n {
            let dst = &mut out[ni * p..][..p];
            for ci in 0..c {
                for (d, &v) in dst.iter_mut().zip(x.plane(ni, ci)) {
                    *d = *d + v;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d / count);
        }
        let out = Tensor::new([n, 1, h, w], out)?;
        Ok(self.tape.push(out, Op::ChannelMean { a: self.id }, self.rg(), None))
    }

    /// Pads H and W by `pad` on each side, repeating border pixels.
    pub fn pad_replicate(self, pad: usize) -> Result<Var<'t, T>> {
        let out = self.with_value(|x| x.pad_replicate(pad))?;
        Ok(self.tape.push(out, Op::PadReplicate { a: self.id, pad }, self.rg(), None))
    }
}

impl<T: Element> Tape<T> {
    /// Concatenates along channels, preserving input order.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| contract!("concat of an empty list"))?;
        let s0 = first.shape();
        let mut c_total = 0;
        for p in parts {
            if p.tape.id != self.id {
                return Err(Error::Usage("concat operand lives on another tape".into()));
            }
            let s = p.shape();
            if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
                return Err(contract!("concat operands disagree on N/H/W: {s0} vs {s}"));
            }
            c_total += s.c();
        }
        let out_shape = Shape::new(s0.n(), c_total, s0.h(), s0.w());
        let mut data = Vec::with_capacity(out_shape.numel());
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let plane = s0.plane();
        for n in 0..s0.n() {
            for v in &values {
                let c = v.shape().c();
                data.extend_from_slice(&v.data()[n * c * plane..][..c * plane]);
            }
        }
        let rg = parts.iter().any(|p| p.rg());
        let op = Op::Concat { parts: parts.iter().map(|p| p.id).collect() };
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg, None))
    }
}
