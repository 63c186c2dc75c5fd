//! Binary checkpoints of named arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HATCKPT1"  entry_count: u64
//! per entry:   name_len: u64  name: [u8; name_len] (UTF-8)
//!              dtype: u8 (0 = f64, 1 = f32, 2 = u8 mask, one byte per element)
//!              rank: u64  extents: [u64; rank]  payload (numel elements)
//! ```
//!
//! A network checkpoint holds every parameter and buffer under its state
//! key, each masker's cumulative mask as `<tag>.cumulative`, each stored
//! binary mask as `<tag>.stored.<task>`, and free-form text under
//! `meta.config`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::HatNetwork;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HATCKPT1";
const META_KEY: &str = "meta.config";

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F64(Tensor<f64>),
    F32(Tensor<f32>),
    Mask { shape: Vec<usize>, bits: Vec<u8> },
}

impl Entry {
    fn dtype(&self) -> u8 {
        match self {
            Entry::F64(_) => 0,
            Entry::F32(_) => 1,
            Entry::Mask { .. } => 2,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Entry::F64(t) => t.shape(),
            Entry::F32(t) => t.shape(),
            Entry::Mask { shape, .. } => shape,
        }
    }
}

/// Ordered collection of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name, entry)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn meta(&self) -> Option<String> {
        match self.get(META_KEY)? {
            Entry::Mask { bits, .. } => String::from_utf8(bits.clone()).ok(),
            _ => None,
        }
    }

    pub fn set_meta(&mut self, text: &str) {
        let bits = text.as_bytes().to_vec();
        self.insert(
            META_KEY,
            Entry::Mask {
                shape: vec![bits.len()],
                bits,
            },
        );
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, self.entries.len());
        for (name, entry) in &self.entries {
            put_u64(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            out.push(entry.dtype());
            put_u64(&mut out, entry.shape().len());
            for &d in entry.shape() {
                put_u64(&mut out, d);
            }
            match entry {
                Entry::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::Mask { bits, .. } => out.extend_from_slice(bits),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let count = r.u64()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u64()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_owned();
            let dtype = r.take(1)?[0];
            let rank = r.u64()?;
            let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: extents overflow")))?;
            let entry = match dtype {
                0 => {
                    let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Entry::F64(tensor(&name, shape, data)?)
                }
                1 => {
                    let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Entry::F32(tensor(&name, shape, data)?)
                }
                2 => Entry::Mask {
                    bits: r.take(numel)?.to_vec(),
                    shape,
                },
                other => return Err(Error::Format(format!("{name}: unknown dtype {other}"))),
            };
            ck.insert(name, entry);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Snapshot of everything needed to evaluate, continue training or
    /// forget on `net`.
    pub fn from_network(net: &HatNetwork) -> Self {
        let mut ck = Checkpoint::new();
        for (key, t) in net.state() {
            ck.insert(key, Entry::F64(t.clone()));
        }
        for m in net.maskers() {
            ck.insert(format!("{}.cumulative", m.tag()), Entry::F64(m.cumulative().clone()));
            for t in m.finalized_tasks() {
                let bits = m.stored_mask(t).expect("finalized").iter().map(|&b| u8::from(b)).collect();
                ck.insert(
                    format!("{}.stored.{t}", m.tag()),
                    Entry::Mask {
                        shape: vec![m.features()],
                        bits,
                    },
                );
            }
        }
        ck
    }

    /// Loads parameters and masker state into a network of the same
    /// architecture.
    pub fn restore(&self, net: &mut HatNetwork) -> Result<()> {
        for (key, dst) in net.state_mut() {
            match self.get(&key) {
                Some(Entry::F64(src)) if src.shape() == dst.shape() => {
                    dst.data_mut().copy_from_slice(src.data());
                }
                Some(_) => return Err(Error::Format(format!("{key}: wrong dtype or shape"))),
                None => return Err(Error::Format(format!("missing entry {key}"))),
            }
        }
        for m in net.maskers_mut() {
            let tag = m.tag().to_owned();
            let cumulative = match self.get(&format!("{tag}.cumulative")) {
                Some(Entry::F64(t)) => t.clone(),
                _ => return Err(Error::Format(format!("missing cumulative mask for {tag}"))),
            };
            let mut stored = BTreeMap::new();
            for t in 0..m.task_count() {
                match self.get(&format!("{tag}.stored.{t}")) {
                    Some(Entry::Mask { bits, .. }) => {
                        stored.insert(t, bits.iter().map(|&b| b != 0).collect());
                    }
                    Some(_) => return Err(Error::Format(format!("{tag}.stored.{t}: wrong dtype"))),
                    None => {}
                }
            }
            let embeddings = m.embeddings().to_vec();
            m.restore(embeddings, cumulative, stored)?;
        }
        Ok(())
    }
}

fn tensor<T: crate::tensor::Scalar>(name: &str, shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
    if shape.is_empty() {
        return Ok(Tensor::scalar(data[0]));
    }
    Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format("length does not fit in memory".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::MlpSpec;
    use crate::payload::TaskId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn byte_layout() {
        let mut ck = Checkpoint::new();
        ck.insert("w", Entry::F64(Tensor::vector(vec![1.5])));
        let b = ck.to_bytes();
        let mut expect = b"HATCKPT1".to_vec();
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.push(b'w');
        expect.push(0);
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn all_dtypes_round_trip() {
        let mut ck = Checkpoint::new();
        ck.insert("a", Entry::F64(Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap()));
        ck.insert("b", Entry::F32(Tensor::vector(vec![0.1f32, 2.5])));
        ck.insert(
            "c",
            Entry::Mask {
                shape: vec![3],
                bits: vec![1, 0, 1],
            },
        );
        ck.set_meta("tasks = 5\n");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta().unwrap(), "tasks = 5\n");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(Error::Format(_))));
        let mut ck = Checkpoint::new();
        ck.insert("w", Entry::F64(Tensor::vector(vec![1.0, 2.0])));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad_dtype = bytes;
        bad_dtype[8 + 8 + 8 + 1] = 9;
        assert!(Checkpoint::from_bytes(&bad_dtype).is_err());
    }

    #[test]
    fn network_round_trip_is_bit_identical() {
        let spec = MlpSpec {
            inputs: 3,
            hidden: vec![4],
            classes: 2,
            input_gate: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = HatNetwork::mlp(&spec, 2, 400.0, &mut rng).unwrap();
        crate::training::init_embeddings(&mut net, crate::training::EmbeddingInit::Gaussian, &mut rng).unwrap();
        for m in net.maskers_mut() {
            m.finalize(0, 400.0).unwrap();
        }
        let ck = Checkpoint::from_bytes(&Checkpoint::from_network(&net).to_bytes()).unwrap();
        let mut fresh = HatNetwork::mlp(&spec, 2, 400.0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        ck.restore(&mut fresh).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 1.0, -2.0, 0.5]).unwrap();
        for t in 0..2 {
            assert_eq!(net.predict(&x, TaskId::new(t)).unwrap(), fresh.predict(&x, TaskId::new(t)).unwrap());
        }
        for (a, b) in net.maskers().zip(fresh.maskers()) {
            assert_eq!(a.cumulative(), b.cumulative());
            assert_eq!(a.stored_mask(0), b.stored_mask(0));
            assert!(!b.is_finalized(1));
        }
    }

    #[test]
    fn missing_entries_are_reported() {
        let spec = MlpSpec {
            inputs: 3,
            hidden: vec![4],
            classes: 2,
            input_gate: false,
        };
        let mut net = HatNetwork::mlp(&spec, 1, 400.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(matches!(Checkpoint::new().restore(&mut net), Err(Error::Format(_))));
    }
}
