//! Top-down pyramid fusion.
//!
//! `G4 = smooth4(lateral4(RF4))` and, from coarse to fine,
//! `G_i = smooth_i(lateral_i(RF_i) + up2(G_{i+1}))`. Laterals are 1×1
//! convolutions to the pyramid width `P`; smoothing is 3×3 with padding 1.

use crate::autodiff::{Bound, ParamStore, Var};
use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::fa::{PyramidSet, AGGREGATED_STRIDES};
use crate::init::Initializer;
use crate::kernels::ConvSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fpn {
    prefix: String,
    in_channels: [usize; 4],
    width: usize,
}

impl Fpn {
    pub fn new(prefix: &str, in_channels: [usize; 4], width: usize) -> Result<Self> {
        if width == 0 || in_channels.contains(&0) {
            return Err(Error::Config(format!("pyramid needs nonzero widths, got {in_channels:?} -> {width}")));
        }
        Ok(Fpn { prefix: prefix.to_owned(), in_channels, width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn lateral(&self, i: usize) -> String {
        format!("{}.lateral{}", self.prefix, i + 1)
    }

    fn smooth(&self, i: usize) -> String {
        format!("{}.smooth{}", self.prefix, i + 1)
    }

    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        for i in 0..4 {
            init.conv(store, &self.lateral(i), self.in_channels[i], self.width, 1, 1)?;
            init.conv(store, &self.smooth(i), self.width, self.width, 3, 3)?;
        }
        Ok(())
    }

    fn conv<'t, T: Element>(p: &Bound<'t, T>, x: Var<'t, T>, name: &str, spec: ConvSpec) -> Result<Var<'t, T>> {
        x.conv2d(p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?), spec)
    }

    /// Maps `{RF1..RF4}` at strides 8..64 to `{G1..G4}`.
    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, rfs: &PyramidSet<Var<'t, T>>) -> Result<PyramidSet<Var<'t, T>>> {
        if rfs.len() != 4 {
            return Err(contract!("pyramid fusion needs 4 levels, got {}", rfs.len()));
        }
        rfs.check_contract(&AGGREGATED_STRIDES)
            .map_err(|e| contract!("pyramid input violates the stride contract: {e}"))?;
        let rf: Vec<Var<'t, T>> = rfs.values().copied().collect();
        for (i, r) in rf.iter().enumerate() {
            if r.shape().c() != self.in_channels[i] {
                return Err(contract!("RF{} has {} channels, expected {}", i + 1, r.shape().c(), self.in_channels[i]));
            }
        }
        let smooth = ConvSpec::default().padding(1, 1);
        let mut out = vec![None; 4];
        let mut above: Option<Var<'t, T>> = None;
        for i in (0..4).rev() {
            let mut lat = Self::conv(p, rf[i], &self.lateral(i), ConvSpec::default())?;
            if let Some(g) = above {
                lat = lat.add(g.up2()?)?;
            }
            let g = Self::conv(p, lat, &self.smooth(i), smooth)?;
            out[i] = Some(g);
            above = Some(g);
        }
        Ok(PyramidSet::from_values(&AGGREGATED_STRIDES, out.into_iter().flatten().collect()))
    }
}
