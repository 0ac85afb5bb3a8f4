//! Feature pack (`.fpk`) files: a little-endian tensor container used to
//! move intermediate-layer features between tools.
//!
//! Layout:
//!
//! ```text
//! "FPAK1"            5 bytes
//! version            u32   (currently 1)
//! dtype              u32   (0 = f32, 1 = f64)
//! ndim               u32
//! dims               u32 × ndim, sample axis first
//! payload            product(dims) values, row-major
//! metadata           UTF-8 `key=value` lines until end of file
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::disentangler::ByteCursor;
use crate::error::{Error, Result};
use crate::training::FeatureBatch;

pub const MAGIC: &[u8; 5] = b"FPAK1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    pub dims: Vec<usize>,
    pub payload: Payload,
    pub metadata: Vec<(String, String)>,
}

impl FeaturePack {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = dims.iter().product();
        let len = match &payload {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        };
        if dims.is_empty() || n != len {
            return Err(Error::Shape {
                left: dims,
                right: vec![len],
                context: "feature pack dims vs payload",
            });
        }
        Ok(Self {
            dims,
            payload,
            metadata: Vec::new(),
        })
    }

    pub fn from_batch(batch: &FeatureBatch, dtype: Dtype) -> Self {
        let payload = match dtype {
            Dtype::F32 => Payload::F32(batch.data().iter().map(|&v| v as f32).collect()),
            Dtype::F64 => Payload::F64(batch.data().to_vec()),
        };
        Self {
            dims: batch.shape().to_vec(),
            payload,
            metadata: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.metadata.push((key.to_string(), value.to_string())),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn dtype(&self) -> Dtype {
        match self.payload {
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
        }
    }

    pub fn samples(&self) -> usize {
        self.dims[0]
    }

    /// Values promoted to `f64`, tagged `net/layer` from the metadata.
    pub fn to_batch(&self) -> Result<FeatureBatch> {
        if self.samples() == 0 {
            return Err(Error::NoSamples);
        }
        let data = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        };
        let tag = match (self.meta("net"), self.meta("layer")) {
            (Some(n), Some(l)) => format!("{n}/{l}"),
            (Some(n), None) => n.to_string(),
            (None, Some(l)) => l.to_string(),
            (None, None) => String::new(),
        };
        Ok(FeatureBatch::new(self.dims.clone(), data)?.with_tag(tag))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.dtype().code().to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        match &self.payload {
            Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry `{k}` cannot be encoded")));
            }
            writeln!(w, "{k}={v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = ByteCursor::new(&buf);
        if cur.take(5)? != MAGIC {
            return Err(Error::Format("bad magic, expected FPAK1".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported feature pack version {version}")));
        }
        let dtype = match cur.u32()? {
            0 => Dtype::F32,
            1 => Dtype::F64,
            c => return Err(Error::Format(format!("unknown dtype code {c}"))),
        };
        let ndim = cur.u32()? as usize;
        if ndim == 0 {
            return Err(Error::Format("feature pack needs at least one dimension".into()));
        }
        let dims = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        if cur.remaining() < count * dtype.size() {
            return Err(Error::Format(format!(
                "payload truncated: need {} bytes, have {}",
                count * dtype.size(),
                cur.remaining()
            )));
        }
        let payload = match dtype {
            Dtype::F32 => Payload::F32(cur.f32s(count)?),
            Dtype::F64 => Payload::F64(cur.f64s(count)?),
        };
        let text = std::str::from_utf8(cur.rest())
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let mut metadata = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metadata line without `=`: {line}")))?;
            metadata.push((k.to_string(), v.to_string()));
        }
        Ok(Self {
            dims,
            payload,
            metadata,
        })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let pack = FeaturePack::new(vec![1, 2], Payload::F32(vec![1.0, -2.0]))
            .unwrap()
            .with_meta("net", "alex")
            .with_meta("layer", "conv5");
        let mut bytes = Vec::new();
        pack.write_to(&mut bytes).unwrap();
        let mut expect = b"FPAK1".to_vec();
        for v in [1u32, 0, 2, 1, 2] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        expect.extend_from_slice(b"net=alex\nlayer=conv5\n");
        assert_eq!(bytes, expect);
        let back = FeaturePack::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.to_batch().unwrap().tag(), "alex/conv5");
    }

    #[test]
    fn empty_sample_axis_parses_but_has_no_batch() {
        let pack = FeaturePack::new(vec![0, 4], Payload::F32(vec![])).unwrap();
        let mut bytes = Vec::new();
        pack.write_to(&mut bytes).unwrap();
        let back = FeaturePack::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.samples(), 0);
        let err = back.to_batch().unwrap_err();
        assert_eq!(err.to_string(), "no samples");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(FeaturePack::read_from(&b"FPAK2"[..]).is_err());
        let pack = FeaturePack::new(vec![2], Payload::F64(vec![1.0, 2.0])).unwrap();
        let mut bytes = Vec::new();
        pack.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(FeaturePack::read_from(bytes.as_slice()), Err(Error::Format(_))));
        assert!(FeaturePack::new(vec![3], Payload::F64(vec![1.0])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(any::<f64>(), 1..40),
            wide in any::<bool>(),
        ) {
            let payload = if wide {
                Payload::F64(values.clone())
            } else {
                Payload::F32(values.iter().map(|&v| v as f32).collect())
            };
            let pack = FeaturePack::new(vec![values.len()], payload).unwrap().with_meta("dataset", "toy");
            let mut bytes = Vec::new();
            pack.write_to(&mut bytes).unwrap();
            let back = FeaturePack::read_from(bytes.as_slice()).unwrap();
            let bits = |p: &Payload| -> Vec<u64> {
                match p {
                    Payload::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
                    Payload::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
                }
            };
            prop_assert_eq!(bits(&back.payload), bits(&pack.payload));
            prop_assert_eq!(back.metadata, pack.metadata);
        }
    }
}
