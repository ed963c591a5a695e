//! Binary tensor container.
//!
//! Layout (all integers little-endian): `b"NEAI"`, `u32` version, `u32`
//! record count, then per record `u32` name length, UTF-8 name, `u8` dtype,
//! `u32` rank, `rank × u64` dims and the raw values. The file ends with the
//! first eight bytes of the SHA-256 of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"NEAI";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
            TensorData::U64(_) => 4,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Result<()> {
        let name = name.into();
        let numel: u64 = dims.iter().product();
        if numel != data.len() as u64 {
            return Err(Error::Shape(format!(
                "record {name}: dims {dims:?} hold {numel} values, got {}",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {name}")));
        }
        self.records.push(Record { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn f64s(&self, name: &str) -> Result<(&[u64], &[f64])> {
        match self.get(name) {
            Some(Record {
                dims,
                data: TensorData::F64(v),
                ..
            }) => Ok((dims, v)),
            Some(_) => Err(Error::Checkpoint(format!("record {name} is not f64"))),
            None => Err(Error::Checkpoint(format!("missing record {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(Record {
                data: TensorData::U8(v),
                ..
            }) => Ok(v),
            Some(_) => Err(Error::Checkpoint(format!("record {name} is not u8"))),
            None => Err(Error::Checkpoint(format!("missing record {name}"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Record {
                data: TensorData::U64(v),
                ..
            }) => Ok(v),
            Some(_) => Err(Error::Checkpoint(format!("record {name} is not u64"))),
            None => Err(Error::Checkpoint(format!("missing record {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.code());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + 4 + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        if &buf[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let (payload, tail) = buf.split_at(buf.len() - 8);
        if checksum(payload) != tail {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut rd = Reader { buf: payload, pos: 4 };
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = rd.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name_len = rd.u32()? as usize;
            let name = std::str::from_utf8(rd.take(name_len)?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
                .to_owned();
            let code = rd.u8()?;
            let rank = rd.u32()? as usize;
            let dims = (0..rank).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: size overflow")))?;
            let elem = match code {
                1 => 4,
                2 | 4 => 8,
                3 => 1,
                _ => return Err(Error::Checkpoint(format!("record {name}: unknown dtype {code}"))),
            };
            let raw = rd.take(
                numel
                    .checked_mul(elem)
                    .ok_or_else(|| Error::Checkpoint(format!("record {name}: size overflow")))?,
            )?;
            let data = match code {
                1 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                3 => TensorData::U8(raw.to_vec()),
                _ => TensorData::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            let finite = match &data {
                TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
                TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
                _ => true,
            };
            if !finite {
                return Err(Error::Checkpoint(format!("record {name} contains NaN or Inf")));
            }
            ck.push(name, dims, data)?;
        }
        if rd.pos != payload.len() {
            return Err(Error::Checkpoint("trailing bytes after last record".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never clobbers a good file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Stores every parameter tensor and, if given, the matching Adam state.
    pub fn put_params(&mut self, store: &ParamStore, adam: Option<&Adam>) -> Result<()> {
        for info in store.infos() {
            let dims: Vec<u64> = info.shape.iter().map(|&d| d as u64).collect();
            let r = info.range();
            self.push(
                format!("param/{}", info.name),
                dims.clone(),
                TensorData::F64(store.values()[r.clone()].to_vec()),
            )?;
            if let Some(a) = adam {
                self.push(
                    format!("adam.m/{}", info.name),
                    dims.clone(),
                    TensorData::F64(a.m[r.clone()].to_vec()),
                )?;
                self.push(format!("adam.v/{}", info.name), dims, TensorData::F64(a.v[r].to_vec()))?;
            }
        }
        if let Some(a) = adam {
            self.push("adam.counters", vec![2], TensorData::U64(vec![a.step, a.skipped]))?;
        }
        Ok(())
    }

    /// Restores tensors registered in `store` (shapes must match exactly).
    pub fn get_params(&self, store: &mut ParamStore, adam: Option<&mut Adam>) -> Result<()> {
        let infos = store.infos().to_vec();
        for info in &infos {
            let shape = self.checked_shape(&format!("param/{}", info.name), &info.shape)?;
            let (_, v) = self.f64s(&format!("param/{}", info.name))?;
            store.set_tensor(&info.name, &shape, v)?;
        }
        if let Some(a) = adam {
            if a.m.len() != store.len() {
                return Err(Error::Shape("optimizer size does not match parameters".into()));
            }
            for info in &infos {
                let r = info.range();
                for (key, buf) in [("adam.m", &mut a.m), ("adam.v", &mut a.v)] {
                    let name = format!("{key}/{}", info.name);
                    self.checked_shape(&name, &info.shape)?;
                    buf[r.clone()].copy_from_slice(self.f64s(&name)?.1);
                }
            }
            let counters = self.u64s("adam.counters")?;
            if counters.len() != 2 {
                return Err(Error::Checkpoint("adam.counters must hold two values".into()));
            }
            a.step = counters[0];
            a.skipped = counters[1];
        }
        Ok(())
    }

    fn checked_shape(&self, name: &str, expected: &[usize]) -> Result<Vec<usize>> {
        let (dims, _) = self.f64s(name)?;
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        if shape != expected {
            return Err(Error::Checkpoint(format!(
                "record {name}: shape {shape:?}, expected {expected:?}"
            )));
        }
        Ok(shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("w", vec![2, 3], TensorData::F64(vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]))
            .unwrap();
        ck.push("h", vec![2], TensorData::F32(vec![0.5, 0.25])).unwrap();
        ck.push("meta", vec![3], TensorData::U8(b"abc".to_vec())).unwrap();
        ck.push("n", vec![1], TensorData::U64(vec![42])).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"NEAI");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut ck = Checkpoint::new();
        ck.push("w", vec![2], TensorData::F64(vec![1.0, f64::NAN])).unwrap();
        let err = Checkpoint::from_bytes(&ck.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("NaN"), "{err}");
        let mut ck = Checkpoint::new();
        ck.push("w", vec![1], TensorData::F32(vec![f32::INFINITY])).unwrap();
        assert!(Checkpoint::from_bytes(&ck.to_bytes()).is_err());
    }

    #[test]
    fn dims_must_match_data() {
        let mut ck = Checkpoint::new();
        assert!(ck.push("w", vec![2, 2], TensorData::F64(vec![1.0; 3])).is_err());
    }

    #[test]
    fn params_and_adam_round_trip() {
        let mut store = ParamStore::new();
        let mut k = 0.0;
        store
            .add("a", &[2, 2], || {
                k += 1.0;
                k
            })
            .unwrap();
        store
            .add("b", &[3], || {
                k += 1.0;
                k
            })
            .unwrap();
        let mut adam = Adam::new(store.len(), Default::default());
        let grads: Vec<f64> = (0..store.len()).map(|i| i as f64 - 3.0).collect();
        let mut vals = store.values().to_vec();
        adam.step(&mut vals, &grads, 0.01).unwrap();
        store.values_mut().copy_from_slice(&vals);

        let mut ck = Checkpoint::new();
        ck.put_params(&store, Some(&adam)).unwrap();
        let ck = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();

        let mut store2 = store.clone();
        store2.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut adam2 = Adam::new(store.len(), Default::default());
        ck.get_params(&mut store2, Some(&mut adam2)).unwrap();
        assert_eq!(store2, store);
        assert_eq!(adam2, adam);

        let mut other = ParamStore::new();
        other.add("a", &[4], || 0.0).unwrap();
        assert!(ck.get_params(&mut other, None).is_err());
    }
}
