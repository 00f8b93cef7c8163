//! Line-oriented `key=value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use edgeneck_core::{DType, FaMode, PipelineConfig};

use crate::error::{CliError, Result};

pub const KEYS: [&str; 8] = ["input", "seed", "channels", "pyramid_width", "fa_mode", "reduction_ratio", "dtype", "dump_dir"];

/// Where the forward pass gets its image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    /// Seeded uniform noise of the given height and width.
    Noise { height: usize, width: usize },
    File(PathBuf),
}

impl FromStr for InputSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let Some(size) = s.strip_prefix("noise:") else {
            return Ok(InputSource::File(PathBuf::from(s)));
        };
        let bad = || CliError::Config(format!("input {s:?}: expected noise:<H>x<W>"));
        let (h, w) = size.split_once('x').ok_or_else(bad)?;
        Ok(InputSource::Noise { height: h.parse().map_err(|_| bad())?, width: w.parse().map_err(|_| bad())? })
    }
}

impl std::fmt::Display for InputSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputSource::Noise { height, width } => write!(f, "noise:{height}x{width}"),
            InputSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub input: InputSource,
    pub seed: u64,
    pub channels: [usize; 5],
    pub pyramid_width: usize,
    pub fa_mode: FaMode,
    pub reduction_ratio: usize,
    pub dtype: DType,
    pub dump_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            input: InputSource::Noise { height: 256, width: 256 },
            seed: 7,
            channels: p.channels,
            pyramid_width: p.pyramid_width,
            fa_mode: p.fa_mode,
            reduction_ratio: p.reduction,
            dtype: DType::F32,
            dump_dir: None,
        }
    }
}

fn number<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::Config(format!("{key}: {v:?} is not a valid number")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(CliError::Config(format!("line {}: key {key} given twice", i + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = value.parse()?,
            "seed" => self.seed = number(key, value)?,
            "channels" => {
                let parts: Vec<usize> = value.split(',').map(|v| number(key, v.trim())).collect::<Result<_>>()?;
                self.channels = parts
                    .try_into()
                    .map_err(|p: Vec<usize>| CliError::Config(format!("channels needs 5 values, got {}", p.len())))?;
            }
            "pyramid_width" => self.pyramid_width = number(key, value)?,
            "fa_mode" => self.fa_mode = value.parse().map_err(|e: edgeneck_core::Error| CliError::Config(e.to_string()))?,
            "reduction_ratio" => self.reduction_ratio = number(key, value)?,
            "dtype" => {
                self.dtype = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(CliError::Config(format!("dtype {value:?} must be f32 or f64"))),
                }
            }
            "dump_dir" => self.dump_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(CliError::Config(format!("unknown key {key:?} (known: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            channels: self.channels,
            pyramid_width: self.pyramid_width,
            reduction: self.reduction_ratio,
            fa_mode: self.fa_mode,
            in_channels: 3,
        }
    }

    /// Canonical text form; parsing it gives back `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let c: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "input={}", self.input);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "channels={}", c.join(","));
        let _ = writeln!(s, "pyramid_width={}", self.pyramid_width);
        let _ = writeln!(s, "fa_mode={}", self.fa_mode);
        let _ = writeln!(s, "reduction_ratio={}", self.reduction_ratio);
        let _ = writeln!(s, "dtype={}", self.dtype);
        if let Some(d) = &self.dump_dir {
            let _ = writeln!(s, "dump_dir={}", d.display());
        }
        s
    }
}
