//! Dense 4-D tensors in NCHW order.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{contract, Error, Result};

/// Dimensions of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    /// Shape of an `N×C×1×1` vector-like tensor.
    pub const fn vector(n: usize, c: usize) -> Self {
        Shape([n, c, 1, 1])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one `H×W` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c() + c) * self.h() + y) * self.w() + x
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape([self.n(), c, self.h(), self.w()])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape(d)
    }
}

/// Dense row-major `N×C×H×W` buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(contract!(
                "buffer holds {} elements but shape {shape} needs {}",
                data.len(),
                shape.numel()
            ));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor { shape, data: vec![value; shape.numel()], requires_grad: false }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::scalar(), v)
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data, requires_grad: false }
    }

    /// Values drawn uniformly from `[lo, hi)` with a seeded ChaCha stream.
    pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::uniform_with(shape, lo, hi, &mut rng)
    }

    pub fn uniform_with(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel()).map(|_| T::of(rng.gen_range(lo..hi))).collect();
        Tensor { shape, data, requires_grad: false }
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self::zeros(other.shape)
    }

    pub fn ones_like(other: &Tensor<T>) -> Self {
        Self::ones(other.shape)
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.0
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.shape.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Contiguous `H×W` plane for sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(contract!("item() on tensor of shape {}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(contract!("cannot reshape {} into {shape}", self.shape));
        }
        Ok(Tensor { shape, ..self })
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Copies channels `start..start + len` of every sample.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Self> {
        let c = self.shape.c();
        if start + len > c {
            return Err(contract!("channel slice {start}..{} exceeds C={c}", start + len));
        }
        let p = self.shape.plane();
        let mut data = Vec::with_capacity(self.shape.n() * len * p);
        for n in 0..self.shape.n() {
            let base = (n * c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor { shape: self.shape.with_c(len), data, requires_grad: false })
    }

    /// Swaps the H and W axes.
    pub fn transpose_hw(&self) -> Self {
        let [n, c, h, w] = self.dims();
        Tensor::from_fn([n, c, w, h], |ni, ci, y, x| self.at(ni, ci, x, y))
    }

    /// Pads H and W by `pad` on every side, repeating the border values.
    pub fn pad_replicate(&self, pad: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims();
        if h == 0 || w == 0 {
            return Err(Error::Domain("cannot replicate-pad an empty plane".into()));
        }
        Ok(Tensor::from_fn([n, c, h + 2 * pad, w + 2 * pad], |ni, ci, y, x| {
            let sy = y.saturating_sub(pad).min(h - 1);
            let sx = x.saturating_sub(pad).min(w - 1);
            self.at(ni, ci, sy, sx)
        }))
    }

    /// Crops the spatial window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let [n, c, sh, sw] = self.dims();
        if y0 + h > sh || x0 + w > sw {
            return Err(contract!("crop window exceeds {sh}x{sw}"));
        }
        Ok(Tensor::from_fn([n, c, h, w], |ni, ci, y, x| self.at(ni, ci, y0 + y, x0 + x)))
    }

    /// True when both tensors have the same shape and bit-identical data.
    pub fn bit_identical(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Largest absolute elementwise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn stats(&self) -> TensorStats {
        TensorStats::of(&self.data)
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>[{}] ", T::DTYPE, self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        write!(f, "{head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, " ..")?;
        }
        Ok(())
    }
}

/// Summary statistics of a buffer, accumulated in `f64` in index order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2: f64,
}

impl TensorStats {
    pub fn of<T: Element>(data: &[T]) -> Self {
        if data.is_empty() {
            return TensorStats { min: 0.0, max: 0.0, mean: 0.0, l2: 0.0 };
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for &v in data {
            let v = v.as_f64();
            min = min.min(v);
            max = max.max(v);
            sum += v;
            sq += v * v;
        }
        TensorStats { min, max, mean: sum / data.len() as f64, l2: sq.sqrt() }
    }
}
