//! Global pooling and the ×2 resampling pair.

use crate::element::Element;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resample {
    /// Doubles H and W by pixel replication.
    Up2Nearest,
    /// Halves H and W with a 2×2, stride-2 max.
    Down2Max,
}

/// Reduces every `H×W` plane to one value. For `Max` the second return
/// value holds, per plane, the in-plane index of the first maximum in
/// row-major scan order.
pub fn global_pool<T: Element>(kind: PoolKind, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    if h * w == 0 {
        return Err(Error::Domain(format!("global pooling over empty spatial extent {h}x{w}")));
    }
    let mut out = Vec::with_capacity(n * c);
    let mut argmax = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            let p = x.plane(ni, ci);
            match kind {
                PoolKind::Avg => {
                    let mut s = T::zero();
                    for &v in p {
                        s = s + v;
                    }
                    out.push(s / T::of((h * w) as f64));
                }
                PoolKind::Max => {
                    let (mut best, mut at) = (p[0], 0);
                    for (i, &v) in p.iter().enumerate().skip(1) {
                        if v > best {
                            best = v;
                            at = i;
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
    }
    Ok((Tensor::new(Shape::vector(n, c), out)?, argmax))
}

/// Up/down-samples by a factor of two. `Down2Max` also returns, per output
/// element, the flat input index it was taken from (first maximum of the
/// 2×2 window in row-major order).
pub fn resample<T: Element>(mode: Resample, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    match mode {
        Resample::Up2Nearest => {
            let y = Tensor::from_fn([n, c, 2 * h, 2 * w], |ni, ci, yy, xx| x.at(ni, ci, yy / 2, xx / 2));
            Ok((y, Vec::new()))
        }
        Resample::Down2Max => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(shape_err!("down2_max needs even H and W, got {h}x{w}"));
            }
            let (oh, ow) = (h / 2, w / 2);
            let shape = x.shape();
            let mut data = Vec::with_capacity(n * c * oh * ow);
            let mut idx = Vec::with_capacity(n * c * oh * ow);
            for ni in 0..n {
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut at = shape.offset(ni, ci, 2 * oy, 2 * ox);
                            let mut best = x.data()[at];
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let o = shape.offset(ni, ci, 2 * oy + dy, 2 * ox + dx);
                                if x.data()[o] > best {
                                    best = x.data()[o];
                                    at = o;
                                }
                            }
                            data.push(best);
                            idx.push(at);
                        }
                    }
                }
            }
            Ok((Tensor::new([n, c, oh, ow], data)?, idx))
        }
    }
}

/// Adjoint of `Up2Nearest`: sums each 2×2 block of `grad`.
pub fn up2_adjoint<T: Element>(grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad.dims();
    Tensor::from_fn([n, c, h / 2, w / 2], |ni, ci, y, x| {
        grad.at(ni, ci, 2 * y, 2 * x)
            + grad.at(ni, ci, 2 * y, 2 * x + 1)
            + grad.at(ni, ci, 2 * y + 1, 2 * x)
            + grad.at(ni, ci, 2 * y + 1, 2 * x + 1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avg_and_max_of_small_plane() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (a, _) = global_pool(PoolKind::Avg, &x).unwrap();
        let (m, arg) = global_pool(PoolKind::Max, &x).unwrap();
        assert_eq!(a.data(), &[2.5]);
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn max_ties_pick_first_in_scan_order() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = global_pool(PoolKind::Max, &x).unwrap();
        assert_eq!(arg, vec![1]);
        let (_, idx) = resample(Resample::Down2Max, &x).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn empty_plane_is_a_domain_error() {
        let x = Tensor::<f32>::zeros([1, 2, 0, 3]);
        assert!(matches!(global_pool(PoolKind::Avg, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn odd_dims_rejected_by_down2() {
        let x = Tensor::<f32>::zeros([1, 1, 3, 4]);
        assert!(matches!(resample(Resample::Down2Max, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn up2_replicates_pixels() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = resample(Resample::Up2Nearest, &x).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let single = Tensor::<f64>::scalar(7.0);
        let (y, _) = resample(Resample::Up2Nearest, &single).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
    }
}
