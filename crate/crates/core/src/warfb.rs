//! Wide and asymmetric receptive-field block.
//!
//! Five parallel branches read the same input. Branch 1 is a 1×1 reduction
//! to 32 channels; branches 2..4 add a `1×K` and a `K×1` convolution with
//! `K = d = 2k − 1` (kernel length equals the dilation rate). The four
//! 32-channel results are concatenated, mapped to `C_out` by a 1×1 `ε`, and
//! gated by branch 5 (1×1 to `C_out`):
//!
//! `out = relu(Br5(x) ⊙ ε(concat(Br1(x), Br2(x), Br3(x), Br4(x))))`

use crate::autodiff::{Bound, ParamStore, Var};
use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::init::Initializer;
use crate::kernels::ConvSpec;
use crate::tensor::Shape;

/// Channel width inside each of branches 1..4.
pub const BRANCH_WIDTH: usize = 32;
pub const BRANCHES: usize = 5;

/// Kernel length and dilation of branch `k` (`2k − 1`); 1 for branches 1, 5.
pub fn branch_rate(k: usize) -> Result<usize> {
    match k {
        1 | 5 => Ok(1),
        2..=4 => Ok(2 * k - 1),
        _ => Err(Error::Usage(format!("branch index must be in 1..=5, got {k}"))),
    }
}

/// Half-extent `(ey, ex)` of the input region that reaches one output pixel
/// through branch `k`.
pub fn receptive_extent(k: usize) -> Result<(usize, usize)> {
    let r = branch_rate(k)?;
    let e = r * (r - 1) / 2;
    Ok((e, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warfb {
    prefix: String,
    in_channels: usize,
    out_channels: usize,
}

impl Warfb {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "WA-RFB {prefix} needs nonzero channels, got {in_channels} -> {out_channels}"
            )));
        }
        Ok(Warfb { prefix: prefix.to_owned(), in_channels, out_channels })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    /// `(layer name, C_in, C_out, kh, kw, spec)` for every convolution, in
    /// registration order.
    fn layers(&self) -> Vec<(String, usize, usize, usize, usize, ConvSpec)> {
        let (cin, w) = (self.in_channels, BRANCH_WIDTH);
        let mut v = vec![(self.name("b1.reduce"), cin, w, 1, 1, ConvSpec::default())];
        for k in 2..=4 {
            let r = 2 * k - 1;
            v.push((self.name(&format!("b{k}.reduce")), cin, w, 1, 1, ConvSpec::default()));
            v.push((self.name(&format!("b{k}.row")), w, w, 1, r, ConvSpec::same(1, r, r, r)));
            v.push((self.name(&format!("b{k}.col")), w, w, r, 1, ConvSpec::same(r, 1, r, r)));
        }
        v.push((self.name("b5.reduce"), cin, self.out_channels, 1, 1, ConvSpec::default()));
        v.push((self.name("eps"), 4 * w, self.out_channels, 1, 1, ConvSpec::default()));
        v
    }

    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        for (name, cin, cout, kh, kw, _) in self.layers() {
            init.conv(store, &name, cin, cout, kh, kw)?;
        }
        Ok(())
    }

    /// Checks every registered weight against the block layout.
    pub fn validate<T: Element>(&self, store: &ParamStore<T>) -> Result<()> {
        let out_of = |layer: &str| -> Result<usize> { Ok(store.value(&format!("{}.w", self.name(layer)))?.shape().n()) };
        let (gate, eps) = (out_of("b5.reduce")?, out_of("eps")?);
        if gate != eps {
            return Err(Error::Config(format!(
                "WA-RFB {}: eps produces {eps} channels but branch 5 produces {gate}",
                self.prefix
            )));
        }
        for (name, cin, cout, kh, kw, _) in self.layers() {
            let want = Shape::new(cout, cin, kh, kw);
            let got = store.value(&format!("{name}.w"))?.shape();
            if got != want {
                return Err(Error::Config(format!("{name}.w has shape {got}, expected {want}")));
            }
        }
        Ok(())
    }

    fn conv<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, layer: &str, spec: ConvSpec) -> Result<Var<'t, T>> {
        let name = self.name(layer);
        x.conv2d(p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?), spec)
    }

    /// Output of branch `k` alone.
    pub fn branch<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>, k: usize) -> Result<Var<'t, T>> {
        let r = branch_rate(k)?;
        let s = x.shape();
        if s.c() != self.in_channels {
            return Err(contract!("WA-RFB {} built for C={} received {s}", self.prefix, self.in_channels));
        }
        let head = self.conv(p, x, &format!("b{k}.reduce"), ConvSpec::default())?;
        if r == 1 {
            return Ok(head);
        }
        let row = self.conv(p, head, &format!("b{k}.row"), ConvSpec::same(1, r, r, r))?;
        self.conv(p, row, &format!("b{k}.col"), ConvSpec::same(r, 1, r, r))
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let parts = (1..=4).map(|k| self.branch(p, x, k)).collect::<Result<Vec<_>>>()?;
        let cat = x.tape().concat(&parts)?;
        let adjusted = self.conv(p, cat, "eps", ConvSpec::default())?;
        let gate = self.branch(p, x, 5)?;
        Ok(gate.mul(adjusted)?.relu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn block(cin: usize, cout: usize) -> (Warfb, ParamStore<f64>) {
        let b = Warfb::new("rf", cin, cout).unwrap();
        let mut store = ParamStore::new();
        b.init(&mut store, &mut Initializer::new(3)).unwrap();
        (b, store)
    }

    #[test]
    fn receptive_extents() {
        assert_eq!(receptive_extent(1).unwrap(), (0, 0));
        assert_eq!(receptive_extent(2).unwrap(), (3, 3));
        assert_eq!(receptive_extent(3).unwrap(), (10, 10));
        assert_eq!(receptive_extent(4).unwrap(), (21, 21));
        assert_eq!(receptive_extent(5).unwrap(), (0, 0));
        assert!(matches!(receptive_extent(0), Err(Error::Usage(_))));
        assert!(matches!(receptive_extent(6), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_is_preserved() {
        let (b, store) = block(6, 5);
        for (h, w) in [(1, 1), (3, 7), (16, 16)] {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let x = tape.constant(Tensor::uniform([1, 6, h, w], -1.0, 1.0, 1));
            let y = b.forward(&p, x).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 5, h, w));
            assert!(y.value().data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (b, store) = block(4, 4);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = b.forward(&p, tape.constant(Tensor::zeros([1, 4, 9, 9]))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_mismatch_is_configuration_error() {
        let (b, mut store) = block(4, 4);
        b.validate(&store).unwrap();
        let mut bad = ParamStore::new();
        for prm in store.iter() {
            let v = if prm.name() == "rf.eps.w" { Tensor::zeros([3, 128, 1, 1]) } else { prm.value().clone() };
            bad.insert(prm.name(), v).unwrap();
        }
        assert!(matches!(b.validate(&bad), Err(Error::Config(_))));
        store.set_value("rf.b5.reduce.w", Tensor::zeros([4, 4, 1, 1])).unwrap();
        b.validate(&store).unwrap();
    }

    #[test]
    fn unit_gate_reduces_to_relu_of_eps() {
        let (b, mut store) = block(3, 4);
        store.set_value("rf.b5.reduce.w", Tensor::zeros([4, 3, 1, 1])).unwrap();
        store.set_value("rf.b5.reduce.b", Tensor::ones([1, 4, 1, 1])).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::uniform([1, 3, 6, 6], -1.0, 1.0, 2));
        let y = b.forward(&p, x).unwrap();
        let parts: Vec<_> = (1..=4).map(|k| b.branch(&p, x, k).unwrap()).collect();
        let cat = tape.concat(&parts).unwrap();
        let eps = cat.conv2d(p.get("rf.eps.w").unwrap(), Some(p.get("rf.eps.b").unwrap()), ConvSpec::default());
        assert!(y.value().bit_identical(&eps.unwrap().relu().value()));
    }
}
