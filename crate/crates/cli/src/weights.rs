//! The `ERLW` named-tensor container.
//!
//! Layout, all integers little-endian: magic `ERLW`, `u16` version, `u32`
//! tensor count, then per tensor a `u16` name length and UTF-8 name, `u8`
//! rank (always 4), four `u32` dims, `u8` dtype code (0 = f32, 1 = f64) and
//! the raw payload.

use std::collections::HashSet;

use edgeneck_core::{DType, Element, ParamStore, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"ERLW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    /// Element type conversion is never implicit.
    pub fn into_typed<T: Element>(self, name: &str) -> Result<Tensor<T>> {
        let dtype = self.dtype();
        let refused = || {
            CliError::Load(format!("conversion refused: tensor {name} is stored as {dtype}, the run uses {}", T::DTYPE))
        };
        if dtype != T::DTYPE {
            return Err(refused());
        }
        // The dtypes match, so the cast is the identity.
        Ok(match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        })
    }
}

pub trait IntoAny {
    fn into_any(self) -> AnyTensor;
}

impl IntoAny for Tensor<f32> {
    fn into_any(self) -> AnyTensor {
        AnyTensor::F32(self)
    }
}

impl IntoAny for Tensor<f64> {
    fn into_any(self) -> AnyTensor {
        AnyTensor::F64(self)
    }
}

/// Ordered, uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, AnyTensor)>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push(&mut self, name: &str, t: AnyTensor) -> Result<()> {
        if name.len() > u16::MAX as usize {
            return Err(CliError::Format(format!("tensor name of {} bytes is too long", name.len())));
        }
        if self.get(name).is_some() {
            return Err(CliError::Format(format!("duplicate tensor name {name}")));
        }
        self.entries.push((name.to_owned(), t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, AnyTensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and returns the entries whose names start with `prefix`.
    pub fn split_off_prefix(&mut self, prefix: &str) -> Container {
        let (taken, kept) = std::mem::take(&mut self.entries).into_iter().partition(|(n, _)| n.starts_with(prefix));
        self.entries = kept;
        Container { entries: taken }
    }

    pub fn from_store<T: Element>(store: &ParamStore<T>) -> Result<Self>
    where
        Tensor<T>: IntoAny,
    {
        let mut c = Container::new();
        for p in store.iter() {
            c.push(p.name(), p.value().clone().into_any())?;
        }
        Ok(c)
    }

    pub fn into_store<T: Element>(self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for (name, t) in self.entries {
            let t = t.into_typed::<T>(&name)?;
            store.insert(&name, t).map_err(|e| CliError::Load(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(4);
            for d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(t.dtype().code());
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CliError::Format("bad magic, not an ERLW container".into()));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported container version {version}, expected {VERSION}")));
        }
        let count = r.u32("tensor count")?;
        let mut c = Container::new();
        let mut seen = HashSet::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| CliError::Format(format!("tensor {i} has a name that is not UTF-8")))?
                .to_owned();
            if !seen.insert(name.clone()) {
                return Err(CliError::Format(format!("duplicate tensor name {name}")));
            }
            let rank = r.take(1, "rank")?[0];
            if rank != 4 {
                return Err(CliError::Format(format!("tensor {name} has rank {rank}, only 4 is supported")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dims")? as usize;
            }
            let code = r.take(1, "dtype")?[0];
            let dtype = DType::from_code(code)
                .ok_or_else(|| CliError::Format(format!("tensor {name} has unknown dtype code {code}")))?;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let size = numel
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| CliError::Format(format!("tensor {name} dims {dims:?} overflow")))?;
            let payload = r.take(size, &format!("payload of {name}"))?;
            let t = match dtype {
                DType::F32 => AnyTensor::F32(read_tensor(dims, payload)?),
                DType::F64 => AnyTensor::F64(read_tensor(dims, payload)?),
            };
            c.entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CliError::Format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(c)
    }
}

fn read_tensor<T: Element>(dims: [usize; 4], payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Ok(Tensor::new(dims, data)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < n {
            return Err(CliError::Format(format!(
                "truncated container: {what} at offset {} needs {n} bytes, only {have} remain (file is {} bytes, expected at least {})",
                self.pos,
                self.bytes.len(),
                self.pos + n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
