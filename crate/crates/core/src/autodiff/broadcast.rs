//! Per-axis broadcasting: an axis of extent 1 stretches to match the other
//! operand.

use crate::element::Element;
use crate::error::{contract, Result};
use crate::tensor::{Shape, Tensor};

pub fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        let (x, y) = (a.0[d], b.0[d]);
        out[d] = if x == y {
            x
        } else if x == 1 {
            y
        } else if y == 1 {
            x
        } else {
            const AXES: [&str; 4] = ["N", "C", "H", "W"];
            return Err(contract!("cannot broadcast {a} with {b}: axis {} is {x} vs {y}", AXES[d]));
        };
    }
    Ok(Shape(out))
}

/// Strides of `s` seen through `out`, zero along stretched axes.
fn view_strides(s: Shape, out: Shape) -> [usize; 4] {
    let st = s.strides();
    let mut v = [0; 4];
    for d in 0..4 {
        v[d] = if s.0[d] == 1 && out.0[d] != 1 { 0 } else { st[d] };
    }
    v
}

/// Visits every output position with the matching flat offsets into `a`
/// and `b`.
fn for_each_pair(a: Shape, b: Shape, out: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = view_strides(a, out);
    let sb = view_strides(b, out);
    let [n, c, h, w] = out.dims();
    let mut o = 0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let ra = ni * sa[0] + ci * sa[1] + y * sa[2];
                let rb = ni * sb[0] + ci * sb[1] + y * sb[2];
                for x in 0..w {
                    f(o, ra + x * sa[3], rb + x * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

pub fn zip_with<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out, data);
    }
    let mut data = vec![T::zero(); out.numel()];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(a.shape(), b.shape(), out, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::new(out, data)
}

/// Sums `g` down to `target`, the adjoint of broadcasting `target` up to
/// `g`'s shape.
pub fn reduce_to<T: Element>(g: &Tensor<T>, target: Shape) -> Result<Tensor<T>> {
    if g.shape() == target {
        return Ok(g.clone());
    }
    let mut data = vec![T::zero(); target.numel()];
    let gd = g.data();
    for_each_pair(target, target, g.shape(), |o, it, _| data[it] = data[it] + gd[o]);
    Tensor::new(target, data)
}

/// `g ⊙ other` reduced to `target`, the gradient of a broadcast product.
pub fn product_grad<T: Element>(g: &Tensor<T>, other: &Tensor<T>, target: Shape) -> Result<Tensor<T>> {
    let full = zip_with(g, other, |a, b| a * b)?;
    reduce_to(&full, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        let s = broadcast_shape(Shape::new(2, 4, 3, 3), Shape::new(2, 1, 3, 3)).unwrap();
        assert_eq!(s, Shape::new(2, 4, 3, 3));
        let s = broadcast_shape(Shape::new(1, 4, 1, 1), Shape::new(2, 4, 5, 6)).unwrap();
        assert_eq!(s, Shape::new(2, 4, 5, 6));
        let err = broadcast_shape(Shape::new(1, 3, 2, 2), Shape::new(1, 4, 2, 2)).unwrap_err();
        assert!(err.to_string().contains("axis C"), "{err}");
    }

    #[test]
    fn reduce_sums_stretched_axes() {
        let g = Tensor::<f64>::from_fn([1, 2, 2, 3], |_, c, y, x| (c * 100 + y * 10 + x) as f64);
        let r = reduce_to(&g, Shape::new(1, 1, 2, 3)).unwrap();
        assert_eq!(r.at(0, 0, 1, 2), 12.0 + 112.0);
        let r = reduce_to(&g, Shape::new(1, 2, 1, 1)).unwrap();
        assert_eq!(r.data(), &[36.0, 636.0]);
    }
}
