//! Seeded parameter initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamStore;
use crate::element::Element;
use crate::error::Result;
use crate::tensor::{Shape, Tensor};

/// Draws Kaiming-uniform weights, `U(−√(6/fan_in), √(6/fan_in))`, from one
/// ChaCha stream. Values are generated in `f64` and rounded to the element
/// type, so `f32` and `f64` models built from one seed agree.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Weight of shape `C_out × C_in/groups × kH × kW`.
    pub fn kaiming<T: Element>(&mut self, shape: Shape) -> Tensor<T> {
        let [_, cin, kh, kw] = shape.dims();
        let fan_in = (cin * kh * kw).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let rng = &mut self.rng;
        let data = (0..shape.numel()).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        Tensor::new(shape, data).expect("buffer sized from shape")
    }

    /// Registers a `kh×kw` convolution weight and a zero bias under
    /// `{prefix}.w` / `{prefix}.b`.
    pub fn conv<T: Element>(
        &mut self,
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
    ) -> Result<()> {
        store.insert(&format!("{prefix}.w"), self.kaiming(Shape::new(cout, cin, kh, kw)))?;
        store.insert(&format!("{prefix}.b"), Tensor::zeros(Shape::vector(1, cout)))
    }
}
