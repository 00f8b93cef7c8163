//! Seeded convolutional stub producing five feature levels at strides
//! 4, 8, 16, 32 and 64.
//!
//! Stage 1 is two stride-2 3×3 convolutions; stages 2..5 are one stride-2
//! 3×3 convolution each. Every convolution is followed by a ReLU.

use crate::autodiff::{Bound, ParamStore, Var};
use crate::element::Element;
use crate::error::{contract, shape_err, Error, Result};
use crate::fa::{PyramidSet, BACKBONE_STRIDES};
use crate::init::Initializer;
use crate::kernels::ConvSpec;

/// Input height and width must be multiples of this.
pub const INPUT_MULTIPLE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub channels: [usize; 5],
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: [16, 32, 64, 128, 256], in_channels: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    prefix: String,
    cfg: BackboneConfig,
}

impl Backbone {
    pub fn new(prefix: &str, cfg: BackboneConfig) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.channels.contains(&0) {
            return Err(Error::Config(format!("backbone channels must be >= 1, got {:?}", cfg.channels)));
        }
        Ok(Backbone { prefix: prefix.to_owned(), cfg })
    }

    pub fn config(&self) -> BackboneConfig {
        self.cfg
    }

    /// `(layer name, C_in, C_out)` in forward order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let c = self.cfg.channels;
        let mut v = vec![
            (format!("{}.stem.conv0", self.prefix), self.cfg.in_channels, c[0]),
            (format!("{}.stem.conv1", self.prefix), c[0], c[0]),
        ];
        for s in 1..5 {
            v.push((format!("{}.stage{}.conv", self.prefix, s + 1), c[s - 1], c[s]));
        }
        v
    }

    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        for (name, cin, cout) in self.layers() {
            init.conv(store, &name, cin, cout, 3, 3)?;
        }
        Ok(())
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<PyramidSet<Var<'t, T>>> {
        let [_, c, h, w] = image.shape().dims();
        if c != self.cfg.in_channels {
            return Err(contract!("backbone expects {} input channels, got {}", self.cfg.in_channels, c));
        }
        if h == 0 || w == 0 || h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
            return Err(shape_err!("input {h}x{w} must have height and width divisible by {INPUT_MULTIPLE}"));
        }
        let spec = ConvSpec::default().stride(2, 2).padding(1, 1);
        let mut x = image;
        let mut levels = Vec::with_capacity(5);
        for (i, (name, _, _)) in self.layers().into_iter().enumerate() {
            x = x.conv2d(p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?), spec)?.relu();
            if i >= 1 {
                levels.push(x);
            }
        }
        Ok(PyramidSet::from_values(&BACKBONE_STRIDES, levels))
    }
}
