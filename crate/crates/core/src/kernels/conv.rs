//! Direct NCHW cross-correlation and its adjoints.
//!
//! Each output element accumulates its terms in ascending `(ci, ky, kx)`
//! order starting from zero, and the bias is added last. The gradient
//! kernels also fix their per-element order, so every result is independent
//! of the execution strategy.

use crate::element::Element;
use crate::error::{contract, shape_err, Result};
use crate::exec::{self, Exec};
use crate::tensor::{Shape, Tensor};

/// Stride, zero padding, dilation and grouping of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: (1, 1), padding: (0, 0), dilation: (1, 1), groups: 1 }
    }
}

impl ConvSpec {
    pub fn stride(mut self, sy: usize, sx: usize) -> Self {
        self.stride = (sy, sx);
        self
    }

    pub fn padding(mut self, py: usize, px: usize) -> Self {
        self.padding = (py, px);
        self
    }

    pub fn dilation(mut self, dy: usize, dx: usize) -> Self {
        self.dilation = (dy, dx);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Padding that keeps a stride-1 `kh×kw` kernel shape-preserving.
    pub fn same(kh: usize, kw: usize, dy: usize, dx: usize) -> Self {
        ConvSpec::default()
            .dilation(dy, dx)
            .padding(dy * (kh - 1) / 2, dx * (kw - 1) / 2)
    }

    fn validate(&self) -> Result<()> {
        let (sy, sx) = self.stride;
        let (dy, dx) = self.dilation;
        if sy == 0 || sx == 0 || dy == 0 || dx == 0 || self.groups == 0 {
            return Err(contract!("stride, dilation and groups must be >= 1, got {self:?}"));
        }
        Ok(())
    }

    /// Output length along one axis, or a shape error when the dilated
    /// kernel does not fit inside the padded input.
    pub fn out_len(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Result<usize> {
        let extent = dilation * (kernel.max(1) - 1) + 1;
        let padded = input + 2 * pad;
        if kernel == 0 || extent > padded {
            return Err(shape_err!(
                "kernel extent {extent} (k={kernel}, d={dilation}) exceeds padded input {padded}"
            ));
        }
        Ok((padded - extent) / stride + 1)
    }

    /// Checks operand dims and returns the output shape.
    pub fn output_shape(&self, input: Shape, weight: Shape, bias: Option<Shape>) -> Result<Shape> {
        self.validate()?;
        let [n, cin, h, w] = input.dims();
        let [cout, cin_g, kh, kw] = weight.dims();
        let g = self.groups;
        if cin % g != 0 {
            return Err(contract!("input channels C={cin} not divisible by groups={g}"));
        }
        if cout % g != 0 {
            return Err(contract!("weight C_out={cout} not divisible by groups={g}"));
        }
        if cin_g != cin / g {
            return Err(contract!(
                "weight dim 1 is {cin_g} but input C/groups = {cin}/{g} = {}",
                cin / g
            ));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(contract!("bias holds {} values but C_out={cout}", b.numel()));
            }
        }
        let oh = Self::out_len(h, kh, self.stride.0, self.padding.0, self.dilation.0)?;
        let ow = Self::out_len(w, kw, self.stride.1, self.padding.1, self.dilation.1)?;
        Ok(Shape::new(n, cout, oh, ow))
    }
}

/// Output positions `o` with `0 <= o*stride + offset - pad < input`.
#[inline]
fn valid_range(out_len: usize, input: usize, stride: usize, pad: usize, offset: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let top = input + pad;
    let hi = if top > offset { ((top - offset - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

/// Number of consecutive planes handed to one worker so tiny planes do not
/// drown in scheduling overhead.
fn planes_per_chunk(plane: usize) -> usize {
    (2048 / plane.max(1)).max(1)
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape, weight: Shape, out: Shape, groups: usize) -> Self {
        let [n, cin, h, w] = input.dims();
        let [cout, cin_g, kh, kw] = weight.dims();
        Geometry { n, cin, h, w, cout, cin_g, cout_g: cout / groups, kh, kw, oh: out.h(), ow: out.w() }
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_with(Exec::current(), input, weight, bias, spec)
}

pub fn conv2d_with<T: Element>(
    exec: Exec,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    let g = Geometry::new(input.shape(), weight.shape(), out_shape, spec.groups);
    let mut out = vec![T::zero(); out_shape.numel()];
    let plane = g.oh * g.ow;
    let per = planes_per_chunk(plane);
    let (sy, sx) = spec.stride;
    let (py, px) = spec.padding;
    let (dy, dx) = spec.dilation;
    let x = input.data();
    let wt = weight.data();
    let b = bias.map(|b| b.data());

    exec::for_each_chunk(exec, &mut out, plane * per, |chunk_idx, chunk| {
        for (j, out_plane) in chunk.chunks_mut(plane).enumerate() {
            let idx = chunk_idx * per + j;
            let (ni, co) = (idx / g.cout, idx % g.cout);
            let group = co / g.cout_g;
            for ci in 0..g.cin_g {
                let ci_abs = group * g.cin_g + ci;
                let in_plane = &x[(ni * g.cin + ci_abs) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.oh, g.h, sy, py, ky * dy);
                    for kx in 0..g.kw {
                        let wv = wt[((co * g.cin_g + ci) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = valid_range(g.ow, g.w, sx, px, kx * dx);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * sy + ky * dy - py;
                            let in_row = &in_plane[iy * g.w..][..g.w];
                            let out_row = &mut out_plane[oy * g.ow..][..g.ow];
                            if sx == 1 {
                                let ix0 = ox0 + kx * dx - px;
                                let src = &in_row[ix0..ix0 + (ox1 - ox0)];
                                for (o, &v) in out_row[ox0..ox1].iter_mut().zip(src) {
                                    *o = *o + wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * sx + kx * dx - px;
                                    out_row[ox] = out_row[ox] + wv * in_row[ix];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                let bv = b[co];
                out_plane.iter_mut().for_each(|o| *o = *o + bv);
            }
        }
    });
    Tensor::new(out_shape, out)
}

/// Gradient with respect to the convolution input.
pub fn conv2d_grad_input<T: Element>(
    exec: Exec,
    grad_out: &Tensor<T>,
    input_shape: Shape,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input_shape, weight.shape(), None)?;
    if grad_out.shape() != out_shape {
        return Err(contract!("grad_out {} does not match conv output {out_shape}", grad_out.shape()));
    }
    let g = Geometry::new(input_shape, weight.shape(), out_shape, spec.groups);
    let mut gi = vec![T::zero(); input_shape.numel()];
    let plane = g.h * g.w;
    let per = planes_per_chunk(plane);
    let (sy, sx) = spec.stride;
    let (py, px) = spec.padding;
    let (dy, dx) = spec.dilation;
    let go = grad_out.data();
    let wt = weight.data();

    exec::for_each_chunk(exec, &mut gi, plane * per, |chunk_idx, chunk| {
        for (j, gi_plane) in chunk.chunks_mut(plane).enumerate() {
            let idx = chunk_idx * per + j;
            let (ni, ci_abs) = (idx / g.cin, idx % g.cin);
            let group = ci_abs / g.cin_g;
            let ci = ci_abs % g.cin_g;
            for co in group * g.cout_g..(group + 1) * g.cout_g {
                let go_plane = &go[(ni * g.cout + co) * g.oh * g.ow..][..g.oh * g.ow];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.oh, g.h, sy, py, ky * dy);
                    for kx in 0..g.kw {
                        let wv = wt[((co * g.cin_g + ci) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = valid_range(g.ow, g.w, sx, px, kx * dx);
                        for oy in oy0..oy1 {
                            let iy = oy * sy + ky * dy - py;
                            let go_row = &go_plane[oy * g.ow..][..g.ow];
                            let gi_row = &mut gi_plane[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                let ix = ox * sx + kx * dx - px;
                                gi_row[ix] = gi_row[ix] + wv * go_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(input_shape, gi)
}

/// Gradient with respect to the convolution weight.
pub fn conv2d_grad_weight<T: Element>(
    exec: Exec,
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight_shape: Shape,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input.shape(), weight_shape, None)?;
    if grad_out.shape() != out_shape {
        return Err(contract!("grad_out {} does not match conv output {out_shape}", grad_out.shape()));
    }
    let g = Geometry::new(input.shape(), weight_shape, out_shape, spec.groups);
    let mut gw = vec![T::zero(); weight_shape.numel()];
    let filter = g.cin_g * g.kh * g.kw;
    let (sy, sx) = spec.stride;
    let (py, px) = spec.padding;
    let (dy, dx) = spec.dilation;
    let go = grad_out.data();
    let x = input.data();

    exec::for_each_chunk(exec, &mut gw, filter, |co, gw_filter| {
        let group = co / g.cout_g;
        for ci in 0..g.cin_g {
            let ci_abs = group * g.cin_g + ci;
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.oh, g.h, sy, py, ky * dy);
                for kx in 0..g.kw {
                    let (ox0, ox1) = valid_range(g.ow, g.w, sx, px, kx * dx);
                    let mut acc = T::zero();
                    for ni in 0..g.n {
                        let go_plane = &go[(ni * g.cout + co) * g.oh * g.ow..][..g.oh * g.ow];
                        let in_plane = &x[(ni * g.cin + ci_abs) * g.h * g.w..][..g.h * g.w];
                        for oy in oy0..oy1 {
                            let iy = oy * sy + ky * dy - py;
                            for ox in ox0..ox1 {
                                let ix = ox * sx + kx * dx - px;
                                acc = acc + go_plane[oy * g.ow + ox] * in_plane[iy * g.w + ix];
                            }
                        }
                    }
                    gw_filter[(ci * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });
    Tensor::new(weight_shape, gw)
}

/// Gradient with respect to the bias: per-channel sum of `grad_out`.
pub fn conv2d_grad_bias<T: Element>(grad_out: &Tensor<T>, bias_shape: Shape) -> Result<Tensor<T>> {
    let [n, c, _, _] = grad_out.dims();
    if bias_shape.numel() != c {
        return Err(contract!("bias shape {bias_shape} does not match C_out={c}"));
    }
    let mut gb = vec![T::zero(); c];
    for ni in 0..n {
        for (co, acc) in gb.iter_mut().enumerate() {
            for &v in grad_out.plane(ni, co) {
                *acc = *acc + v;
            }
        }
    }
    Tensor::new(bias_shape, gb)
}
