use crate::element::Element;
use crate::error::{contract, Result};
use crate::tensor::{Shape, Tensor};

fn check(x: Shape, w: Shape, bias: Option<Shape>) -> Result<(usize, usize, usize)> {
    let [n, cin, h, wd] = x.dims();
    if h != 1 || wd != 1 {
        return Err(contract!("linear input must be N×C×1×1, got {x}"));
    }
    let [cout, win, kh, kw] = w.dims();
    if kh != 1 || kw != 1 {
        return Err(contract!("linear weight must be C_out×C_in×1×1, got {w}"));
    }
    if win != cin {
        return Err(contract!("linear weight expects C_in={win} but input has C={cin}"));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(contract!("bias holds {} values but C_out={cout}", b.numel()));
        }
    }
    Ok((n, cin, cout))
}

/// `y[n, o] = Σ_i w[o, i] · x[n, i] (+ b[o])`, summed in ascending `i`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, cin, cout) = check(x.shape(), w.shape(), bias.map(|b| b.shape()))?;
    let mut out = Vec::with_capacity(n * cout);
    for ni in 0..n {
        let xs = &x.data()[ni * cin..][..cin];
        for o in 0..cout {
            let ws = &w.data()[o * cin..][..cin];
            let mut acc = T::zero();
            for (&a, &b) in ws.iter().zip(xs) {
                acc = acc + a * b;
            }
            if let Some(b) = bias {
                acc = acc + b.data()[o];
            }
            out.push(acc);
        }
    }
    Tensor::new(Shape::vector(n, cout), out)
}

/// Returns `(grad_x, grad_w)` for `y = W·x`.
pub fn linear_grads<T: Element>(grad_out: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, cin, cout) = check(x.shape(), w.shape(), None)?;
    if grad_out.shape() != Shape::vector(n, cout) {
        return Err(contract!("grad_out {} does not match linear output", grad_out.shape()));
    }
    let g = grad_out.data();
    let gx = Tensor::from_fn(x.shape(), |ni, i, _, _| {
        let mut acc = T::zero();
        for o in 0..cout {
            acc = acc + g[ni * cout + o] * w.data()[o * cin + i];
        }
        acc
    });
    let gw = Tensor::from_fn(w.shape(), |o, i, _, _| {
        let mut acc = T::zero();
        for ni in 0..n {
            acc = acc + g[ni * cout + o] * x.data()[ni * cin + i];
        }
        acc
    });
    Ok((gx, gw))
}
