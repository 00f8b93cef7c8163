//! Multi-level feature aggregation.
//!
//! The five backbone levels are grouped into low `{F̃1, F̃2}`, middle `{F3}`
//! and high `{F4, F5}` and fused by channel concatenation after bringing
//! neighbours to a common resolution with 2×2 max-pooling or nearest ×2
//! upsampling:
//!
//! | level | stride | parts                              | channels     |
//! |-------|--------|------------------------------------|--------------|
//! | FA1   | 8      | down2(F̃1), F̃2                      | c1+c2        |
//! | FA2   | 16     | down2(F̃2), F3, up2(F4)             | c2+c3+c4     |
//! | FA3   | 32     | F4, up2(F5)                        | c4+c5        |
//! | FA4   | 64     | F5                                 | c5           |

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Strides of the five backbone levels.
pub const BACKBONE_STRIDES: [usize; 5] = [4, 8, 16, 32, 64];
/// Strides of the four aggregated levels.
pub const AGGREGATED_STRIDES: [usize; 4] = [8, 16, 32, 64];

/// Anything with an NCHW shape.
pub trait Spatial {
    fn spatial_shape(&self) -> Shape;
}

impl<T: Element> Spatial for Var<'_, T> {
    fn spatial_shape(&self) -> Shape {
        self.shape()
    }
}

impl<T: Element> Spatial for Tensor<T> {
    fn spatial_shape(&self) -> Shape {
        self.shape()
    }
}

#[derive(Debug, Clone)]
pub struct Level<X> {
    pub stride: usize,
    pub value: X,
}

/// Ordered multi-level feature collection, finest level first.
#[derive(Debug, Clone)]
pub struct PyramidSet<X> {
    levels: Vec<Level<X>>,
}

impl<X> PyramidSet<X> {
    pub fn new(levels: Vec<Level<X>>) -> Self {
        PyramidSet { levels }
    }

    pub fn from_values(strides: &[usize], values: Vec<X>) -> Self {
        let levels = strides.iter().zip(values).map(|(&stride, value)| Level { stride, value }).collect();
        PyramidSet { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[Level<X>] {
        &self.levels
    }

    pub fn get(&self, i: usize) -> Option<&X> {
        self.levels.get(i).map(|l| &l.value)
    }

    pub fn strides(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.stride).collect()
    }

    pub fn values(&self) -> impl Iterator<Item = &X> {
        self.levels.iter().map(|l| &l.value)
    }

    pub fn map<Y>(&self, f: impl FnMut(&X) -> Y) -> PyramidSet<Y> {
        let mut f = f;
        PyramidSet {
            levels: self.levels.iter().map(|l| Level { stride: l.stride, value: f(&l.value) }).collect(),
        }
    }
}

impl<X: Spatial> PyramidSet<X> {
    pub fn channels(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.value.spatial_shape().c()).collect()
    }

    pub fn spatial(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| (l.value.spatial_shape().h(), l.value.spatial_shape().w())).collect()
    }

    /// Checks the stride list and that spatial dims halve from one level to
    /// the next. Returns a description of the first violation.
    pub fn check_contract(&self, strides: &[usize]) -> std::result::Result<(), String> {
        if self.strides() != strides {
            return Err(format!("expected strides {strides:?}, got {:?}", self.strides()));
        }
        for pair in self.levels.windows(2) {
            let (a, b) = (pair[0].value.spatial_shape(), pair[1].value.spatial_shape());
            if pair[1].stride != 2 * pair[0].stride {
                return Err(format!("strides {} -> {} do not double", pair[0].stride, pair[1].stride));
            }
            if a.h() != 2 * b.h() || a.w() != 2 * b.w() || a.n() != b.n() {
                return Err(format!(
                    "level at stride {} is {a} but the next level at stride {} is {b}; spatial dims must halve",
                    pair[0].stride, pair[1].stride
                ));
            }
        }
        Ok(())
    }
}

/// Which backbone levels take part in aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FaMode {
    /// All five levels.
    #[default]
    Full,
    /// Only `{F̃1, F̃2, F3}`.
    Low3,
    /// Only `{F3, F4, F5}`.
    High3,
}

impl FaMode {
    pub fn name(self) -> &'static str {
        match self {
            FaMode::Full => "full",
            FaMode::Low3 => "low3",
            FaMode::High3 => "high3",
        }
    }

    pub const ALL: [FaMode; 3] = [FaMode::Full, FaMode::Low3, FaMode::High3];
}

impl fmt::Display for FaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation mode {s:?} (full, low3, high3)")))
    }
}

/// Channel counts of FA1..FA4 for the backbone plan `c`.
///
/// `Low3` keeps the full layout for the levels it can form and fills the
/// coarse end from F3: `(c1+c2, c2+c3, c3, c3)`. `High3` mirrors it from the
/// fine end: `(c3, c3+c4, c4+c5, c5)`.
pub fn aggregated_channels(c: [usize; 5], mode: FaMode) -> [usize; 4] {
    let [c1, c2, c3, c4, c5] = c;
    match mode {
        FaMode::Full => [c1 + c2, c2 + c3 + c4, c4 + c5, c5],
        FaMode::Low3 => [c1 + c2, c2 + c3, c3, c3],
        FaMode::High3 => [c3, c3 + c4, c4 + c5, c5],
    }
}

/// Aggregates `{F̃1, F̃2, F3, F4, F5}` into `{FA1..FA4}`.
pub fn aggregate<'t, T: Element>(feats: &PyramidSet<Var<'t, T>>) -> Result<PyramidSet<Var<'t, T>>> {
    aggregate_ablation(feats, FaMode::Full)
}

/// [`aggregate`] restricted to the levels selected by `mode`; the output
/// never depends on the excluded levels.
pub fn aggregate_ablation<'t, T: Element>(feats: &PyramidSet<Var<'t, T>>, mode: FaMode) -> Result<PyramidSet<Var<'t, T>>> {
    if feats.len() != 5 {
        return Err(Error::Config(format!("aggregation needs 5 levels, got {}", feats.len())));
    }
    feats
        .check_contract(&BACKBONE_STRIDES)
        .map_err(|e| Error::Config(format!("aggregation input violates the stride contract: {e}")))?;
    let f: Vec<Var<'t, T>> = feats.values().copied().collect();
    let tape = f[0].tape();
    let [f1, f2, f3, f4, f5] = [f[0], f[1], f[2], f[3], f[4]];
    let out = match mode {
        FaMode::Full => vec![
            tape.concat(&[f1.down2()?, f2])?,
            tape.concat(&[f2.down2()?, f3, f4.up2()?])?,
            tape.concat(&[f4, f5.up2()?])?,
            f5,
        ],
        FaMode::Low3 => {
            let f3_down = f3.down2()?;
            vec![
                tape.concat(&[f1.down2()?, f2])?,
                tape.concat(&[f2.down2()?, f3])?,
                f3_down,
                f3_down.down2()?,
            ]
        }
        FaMode::High3 => vec![
            f3.up2()?,
            tape.concat(&[f3, f4.up2()?])?,
            tape.concat(&[f4, f5.up2()?])?,
            f5,
        ],
    };
    Ok(PyramidSet::from_values(&AGGREGATED_STRIDES, out))
}
