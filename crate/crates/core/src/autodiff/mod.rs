//! Tape-based reverse-mode differentiation.
//!
//! A forward pass pushes one node per operation onto a [`Tape`]; `backward`
//! walks the nodes in reverse creation order and accumulates
//! vector-Jacobian products.

mod backward;
pub mod broadcast;
mod ops;
mod param;
mod tape;

pub use ops::{elementwise, ElementwiseKind};
pub use param::{Bound, ParamStore, Parameter};
pub use tape::{Gradients, Kink, OpKind, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_relu_has_unit_gradient_on_positive_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform([1, 2, 3, 3], 0.5, 2.0, 1).with_requires_grad(true));
        let g = tape.backward(x.relu().sum()).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_square_via_mul_is_twice_x() {
        let tape = Tape::<f64>::new();
        let xt = Tensor::uniform([2, 3, 2, 2], -1.0, 1.0, 2).with_requires_grad(true);
        let x = tape.leaf(xt.clone());
        let g = tape.backward(x.mul(x).unwrap().sum()).unwrap();
        for (gv, xv) in g.get(x).unwrap().data().iter().zip(xt.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([1, 1, 2, 2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x.relu()), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_root_is_a_usage_error() {
        let a = Tape::<f64>::new();
        let b = Tape::<f64>::new();
        let x = b.leaf(Tensor::scalar(1.0).with_requires_grad(true));
        assert!(matches!(a.backward(x.sum()), Err(Error::Usage(_))));
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::full([1, 1, 1, 1], 3.0)).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let w = p.get("w").unwrap();
            tape.backward_into(w.square().sum(), &mut store).unwrap();
        }
        assert_eq!(store.get("w").unwrap().grad().data(), &[12.0]);
        store.zero_grads();
        assert_eq!(store.get("w").unwrap().grad().data(), &[0.0]);
    }

    #[test]
    fn shared_parameter_gets_both_contributions() {
        let tape = Tape::<f64>::new();
        let w = tape.param("w", Tensor::full([1, 1, 1, 1], 2.0));
        let x = tape.constant(Tensor::full([1, 1, 1, 1], 5.0));
        // y = w*x + w*w -> dy/dw = x + 2w = 9
        let y = w.mul(x).unwrap().add(w.mul(w).unwrap()).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[9.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([1, 1, 1, 2], -1.0));
        assert!(matches!(x.sqrt(), Err(Error::Domain(_))));
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::uniform([1, 3, 4, 4], -2.0, 2.0, 9));
        let ones = tape.constant(Tensor::ones([1, 3, 4, 4]));
        let y = elementwise(ElementwiseKind::Mul, x, Some(ones)).unwrap();
        assert!(y.value().bit_identical(&x.value()));
        let z = elementwise(ElementwiseKind::Sigmoid, tape.constant(Tensor::zeros([1, 2, 2, 2])), None).unwrap();
        assert!(z.value().data().iter().all(|&v| v == 0.5));
        let gx = tape.constant(Tensor::scalar(3.0));
        let gy = tape.constant(Tensor::scalar(4.0));
        let r = gx.square().add(gy.square()).unwrap().sqrt().unwrap();
        assert_eq!(r.value().data(), &[5.0]);
        assert!(elementwise(ElementwiseKind::Add, x, None).is_err());
        assert!(elementwise(ElementwiseKind::Relu, x, Some(x)).is_err());
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let tape = Tape::<f64>::new();
        let a = Tensor::uniform([2, 3, 4, 4], -1.0, 1.0, 1);
        let b = Tensor::uniform([2, 5, 4, 4], -1.0, 1.0, 2);
        let c = tape.concat(&[tape.constant(a.clone()), tape.constant(b.clone())]).unwrap().value();
        assert_eq!(c.dims(), [2, 8, 4, 4]);
        assert!(c.channel_slice(0, 3).unwrap().bit_identical(&a));
        assert!(c.channel_slice(3, 5).unwrap().bit_identical(&b));
        let single = tape.concat(&[tape.constant(a.clone())]).unwrap().value();
        assert!(single.bit_identical(&a));
        let bad = tape.constant(Tensor::zeros([2, 1, 3, 4]));
        assert!(matches!(tape.concat(&[tape.constant(a), bad]), Err(Error::Contract(_))));
    }

    #[test]
    fn magnitude_gradient_is_zero_at_origin() {
        let tape = Tape::<f64>::new();
        let gx = tape.leaf(Tensor::zeros([1, 1, 1, 1]).with_requires_grad(true));
        let gy = tape.leaf(Tensor::zeros([1, 1, 1, 1]).with_requires_grad(true));
        let m = gx.magnitude(gy).unwrap();
        assert_eq!(m.value().data(), &[0.0]);
        let g = tape.backward(m.sum()).unwrap();
        assert_eq!(g.get(gx).unwrap().data(), &[0.0]);
        assert_eq!(g.get(gy).unwrap().data(), &[0.0]);
    }

    #[test]
    fn kinks_are_recorded_only_when_tracking() {
        let plain = Tape::<f64>::new();
        plain.constant(Tensor::ones([1, 1, 2, 2])).relu();
        assert!(plain.kinks().is_empty());
        let tracked = Tape::<f64>::tracking_kinks();
        tracked.constant(Tensor::new([1, 1, 1, 2], vec![-1.0, 1.0]).unwrap()).relu();
        assert_eq!(tracked.kinks(), vec![Kink::Signs(vec![false, true])]);
    }
}
