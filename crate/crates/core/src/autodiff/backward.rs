//! Vector-Jacobian products for every recorded operation.

use crate::element::Element;
use crate::error::Result;
use crate::exec::Exec;
use crate::kernels::conv::{conv2d_grad_bias, conv2d_grad_input, conv2d_grad_weight};
use crate::kernels::linear::linear_grads;
use crate::kernels::pool::up2_adjoint;
use crate::kernels::PoolKind;
use crate::tensor::Tensor;

use super::broadcast::{product_grad, reduce_to};
use super::tape::{Node, Op};

type Contributions<T> = Vec<(usize, Tensor<T>)>;

fn scatter<T: Element>(shape: crate::tensor::Shape, idx: &[usize], g: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(shape);
    let d = out.data_mut();
    for (&i, &v) in idx.iter().zip(g.data()) {
        d[i] = d[i] + v;
    }
    Ok(out)
}

/// Gradients flowing from `g` (the gradient of this node's output) into the
/// node's inputs. Inputs that do not require gradients may be skipped.
pub(crate) fn input_grads<T: Element>(
    nodes: &[Node<T>],
    op: &Op,
    out: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<Contributions<T>> {
    let val = |i: usize| &*nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let exec = Exec::current();
    let mut res = Vec::new();
    match op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias, spec } => {
            let (x, w) = (val(*input), val(*weight));
            if wants(*input) {
                res.push((*input, conv2d_grad_input(exec, g, x.shape(), w, spec)?));
            }
            if wants(*weight) {
                res.push((*weight, conv2d_grad_weight(exec, g, x, w.shape(), spec)?));
            }
            if let Some(b) = bias.filter(|&b| wants(b)) {
                res.push((b, conv2d_grad_bias(g, val(b).shape())?));
            }
        }
        Op::Linear { x, w, bias } => {
            let (gx, gw) = linear_grads(g, val(*x), val(*w))?;
            res.push((*x, gx));
            res.push((*w, gw));
            if let Some(b) = bias {
                res.push((*b, conv2d_grad_bias(g, val(*b).shape())?));
            }
        }
        Op::Add { a, b } => {
            res.push((*a, reduce_to(g, val(*a).shape())?));
            res.push((*b, reduce_to(g, val(*b).shape())?));
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                res.push((*a, product_grad(g, bv, av.shape())?));
            }
            if wants(*b) {
                res.push((*b, product_grad(g, av, bv.shape())?));
            }
        }
        Op::Relu { a } => {
            let x = val(*a);
            let d = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() });
            res.push((*a, Tensor::new(x.shape(), d.collect())?));
        }
        Op::Sigmoid { a } => {
            let d = g.data().iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y));
            res.push((*a, Tensor::new(out.shape(), d.collect())?));
        }
        Op::Sqrt { a } => {
            let two = T::of(2.0);
            let d = g.data().iter().zip(out.data()).map(|(&gv, &y)| gv / (two * y));
            res.push((*a, Tensor::new(out.shape(), d.collect())?));
        }
        Op::Square { a } => {
            let x = val(*a);
            let two = T::of(2.0);
            let d = g.data().iter().zip(x.data()).map(|(&gv, &xv)| gv * two * xv);
            res.push((*a, Tensor::new(x.shape(), d.collect())?));
        }
        Op::Magnitude { gx, gy } => {
            // The magnitude is not differentiable at the origin; emit zero there.
            let part = |comp: &Tensor<T>| {
                let d = g.data().iter().zip(comp.data()).zip(out.data()).map(|((&gv, &c), &r)| {
                    if r == T::zero() {
                        T::zero()
                    } else {
                        gv * c / r
                    }
                });
                Tensor::new(out.shape(), d.collect())
            };
            if wants(*gx) {
                res.push((*gx, part(val(*gx))?));
            }
            if wants(*gy) {
                res.push((*gy, part(val(*gy))?));
            }
        }
        Op::GlobalPool { a, kind, argmax } => {
            let x = val(*a);
            let [_, _, h, w] = x.dims();
            let grad = match kind {
                PoolKind::Avg => {
                    let inv = T::one() / T::of((h * w) as f64);
                    Tensor::from_fn(x.shape(), |n, c, _, _| g.at(n, c, 0, 0) * inv)
                }
                PoolKind::Max => {
                    let plane = h * w;
                    let flat: Vec<usize> = argmax.iter().enumerate().map(|(i, &k)| i * plane + k).collect();
                    scatter(x.shape(), &flat, g)?
                }
            };
            res.push((*a, grad));
        }
        Op::Up2 { a } => res.push((*a, up2_adjoint(g))),
        Op::Down2 { a, argmax } => res.push((*a, scatter(val(*a).shape(), argmax, g)?)),
        Op::Concat { parts } => {
            let mut start = 0;
            for &p in parts {
                let c = val(p).shape().c();
                if wants(p) {
                    res.push((p, g.channel_slice(start, c)?));
                }
                start += c;
            }
        }
        Op::Sum { a } => {
            let gv = g.data()[0];
            res.push((*a, Tensor::full(val(*a).shape(), gv)));
        }
        Op::ChannelMean { a } => {
            let x = val(*a);
            let inv = T::one() / T::of(x.shape().c() as f64);
            res.push((*a, Tensor::from_fn(x.shape(), |n, _, y, xx| g.at(n, 0, y, xx) * inv)));
        }
        Op::PadReplicate { a, pad } => {
            let shape = val(*a).shape();
            let [n, c, h, w] = shape.dims();
            let mut out = Tensor::zeros(shape);
            let [_, _, ph, pw] = g.dims();
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..ph {
                        let sy = y.saturating_sub(*pad).min(h - 1);
                        for x in 0..pw {
                            let sx = x.saturating_sub(*pad).min(w - 1);
                            let v = out.at(ni, ci, sy, sx) + g.at(ni, ci, y, x);
                            out.set(ni, ci, sy, sx, v);
                        }
                    }
                }
            }
            res.push((*a, out));
        }
    }
    Ok(res)
}
