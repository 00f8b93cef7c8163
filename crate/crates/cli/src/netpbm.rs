//! Binary PGM (`P5`) and PPM (`P6`) with 8-bit samples.

use std::fmt;

use edgeneck_core::{Element, Tensor};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PixelFormat {
    Gray,
    Rgb,
}

impl PixelFormat {
    pub fn channels(&self) -> usize {
        match self {
            PixelFormat::Gray => 1,
            PixelFormat::Rgb => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub format: PixelFormat,
    /// Row-major samples, interleaved for RGB.
    pub data: Vec<u8>,
}

/// Parse failure at a byte offset into the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ParseError {}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Format(e.to_string())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset: self.pos, message: message.into() })
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ParseError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.bytes.get(self.pos) {
                None => self.err(format!("unexpected end of header, expected {what}")),
                Some(&b) => self.err(format!("expected {what}, found {:?}", b as char)),
            };
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        text.parse().or_else(|_| {
            self.pos = start;
            self.err(format!("{what} {text} is out of range"))
        })
    }
}

pub fn parse(bytes: &[u8]) -> Result<Image, ParseError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let format = match bytes.get(..2) {
        Some(b"P5") => PixelFormat::Gray,
        Some(b"P6") => PixelFormat::Rgb,
        _ => return cur.err("expected magic P5 or P6"),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space();
    let before_max = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(ParseError { offset: before_max, message: format!("unsupported maxval {maxval}, only 255 is accepted") });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return cur.err("expected a single whitespace byte after maxval"),
        None => return cur.err("unexpected end of header after maxval"),
    }
    if width == 0 || height == 0 {
        return Err(ParseError { offset: 2, message: format!("image dimensions {width}x{height} must be nonzero") });
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(format.channels()))
        .ok_or(ParseError { offset: 2, message: format!("image dimensions {width}x{height} overflow") })?;
    let have = bytes.len() - cur.pos;
    if have < len {
        return Err(ParseError {
            offset: bytes.len(),
            message: format!("truncated pixel data: expected {len} bytes, found {have}"),
        });
    }
    let data = bytes[cur.pos..cur.pos + len].to_vec();
    Ok(Image { width, height, format, data })
}

/// Canonical encoding: magic, `width height`, `255`, each on its own line.
pub fn write(img: &Image) -> Vec<u8> {
    let magic = match img.format {
        PixelFormat::Gray => "P5",
        PixelFormat::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

impl Image {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        Image { width, height, format: PixelFormat::Gray, data }
    }

    /// `1×1×H×W` in `[0, 1]`; RGB is reduced to `(r + g + b) / 3`.
    pub fn to_luma<T: Element>(&self) -> Tensor<T> {
        let c = self.format.channels();
        Tensor::from_fn([1, 1, self.height, self.width], |_, _, y, x| {
            let px = &self.data[(y * self.width + x) * c..][..c];
            let sum: f64 = px.iter().map(|&v| v as f64).sum();
            T::of(sum / c as f64 / 255.0)
        })
    }

    /// `1×3×H×W` in `[0, 1]`; gray is repeated into all three channels.
    pub fn to_rgb<T: Element>(&self) -> Tensor<T> {
        let c = self.format.channels();
        Tensor::from_fn([1, 3, self.height, self.width], |_, ch, y, x| {
            let v = self.data[(y * self.width + x) * c + ch.min(c - 1)];
            T::of(v as f64 / 255.0)
        })
    }

    /// Min-max normalizes a single-channel map to `0..=255`. A map with no
    /// range becomes all black.
    pub fn from_map<T: Element>(map: &Tensor<T>) -> Self {
        let [_, _, h, w] = map.dims();
        let stats = map.stats();
        let range = stats.max - stats.min;
        let data = map
            .data()
            .iter()
            .take(h * w)
            .map(|&v| if range > 0.0 { ((v.as_f64() - stats.min) / range * 255.0).round() as u8 } else { 0 })
            .collect();
        Image::gray(w, h, data)
    }
}
