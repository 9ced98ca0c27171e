//! Named tensor container and the TRUW weight file.
//!
//! Layout, little-endian, no padding:
//!
//! ```text
//! magic "TRUW" | version u32 = 1 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | dtype u8 (0 f32, 1 i8) | ndim u8
//!             | dims u32 x ndim | scale f64 (i8 only) | raw data
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result, WeightFileError};

pub const MAGIC: &[u8; 4] = b"TRUW";
pub const VERSION: u32 = 1;
/// Prefix of static activation scales; not counted as parameters.
pub const QSCALE_PREFIX: &str = "qscale.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I8 => "i8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8 { values: Vec<i8>, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl StoredTensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn i8(shape: Vec<usize>, values: Vec<i8>, scale: f64) -> Self {
        Self {
            shape,
            data: TensorData::I8 { values, scale },
        }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I8 { .. } => DType::I8,
        }
    }

    pub fn numel(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::I8 { values, .. } => values.len(),
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match self.data {
            TensorData::I8 { scale, .. } => Some(scale),
            TensorData::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: StoredTensor) -> Result<()> {
        let name = name.into();
        let expected: usize = tensor.shape.iter().product();
        if expected != tensor.numel() {
            return Err(Error::BadTensor {
                name,
                detail: format!("shape {:?} vs {} values", tensor.shape, tensor.numel()),
            });
        }
        if let Some(scale) = tensor.scale() {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(WeightFileError::BadScale(name).into());
            }
        }
        if self.tensors.contains_key(&name) {
            return Err(WeightFileError::DuplicateName(name).into());
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<()> {
        self.insert(name, StoredTensor::f32(shape.to_vec(), data))
    }

    pub fn remove(&mut self, name: &str) -> Option<StoredTensor> {
        self.tensors.shift_remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn require(&self, name: &str) -> Result<&StoredTensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// f32 tensor with an exact expected shape.
    pub fn f32_exact(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let t = self.require(name)?;
        if t.shape != shape {
            return Err(Error::BadTensor {
                name: name.to_string(),
                detail: format!("expected shape {shape:?}, found {:?}", t.shape),
            });
        }
        match &t.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I8 { .. } => Err(Error::BadTensor {
                name: name.to_string(),
                detail: "expected f32, found i8".into(),
            }),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_quantized(&self) -> bool {
        self.tensors.values().any(|t| t.dtype() == DType::I8)
    }

    /// Sum of element counts over all tensors except calibration metadata.
    pub fn parameter_count(&self) -> usize {
        self.iter()
            .filter(|(name, _)| !name.starts_with(QSCALE_PREFIX))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().code());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::I8 { values, scale } => {
                    out.extend_from_slice(&scale.to_le_bytes());
                    out.extend(values.iter().map(|&q| q as u8));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| WeightFileError::BadMagic)? != MAGIC {
            return Err(WeightFileError::BadMagic.into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(WeightFileError::UnsupportedVersion(version).into());
        }
        let count = r.u32("tensor count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| WeightFileError::BadName)?
                .to_string();
            let code = r.u8("dtype")?;
            let ndim = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dims")? as usize);
            }
            let numel: usize = shape.iter().product();
            let tensor = match code {
                0 => {
                    let raw = r.take(numel * 4, "f32 data")?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    StoredTensor::f32(shape, data)
                }
                1 => {
                    let scale = f64::from_le_bytes(r.array("scale")?);
                    if !(scale > 0.0 && scale.is_finite()) {
                        return Err(WeightFileError::BadScale(name).into());
                    }
                    let values = r.take(numel, "i8 data")?.iter().map(|&b| b as i8).collect();
                    StoredTensor::i8(shape, values, scale)
                }
                code => return Err(WeightFileError::BadDtype { name, code }.into()),
            };
            if store.tensors.contains_key(&name) {
                return Err(WeightFileError::DuplicateName(name).into());
            }
            store.tensors.insert(name, tensor);
        }
        if r.pos != bytes.len() {
            return Err(WeightFileError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], WeightFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WeightFileError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> std::result::Result<[u8; N], WeightFileError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }

    fn u8(&mut self, what: &'static str) -> std::result::Result<u8, WeightFileError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> std::result::Result<u16, WeightFileError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}
