//! Named parameter storage and its binary file format.
//!
//! Layout, little-endian throughout, no padding:
//!
//! ```text
//! magic      b"DGEW"
//! version    u32 = 1
//! count      u32
//! count × {
//!     name_len  u16
//!     name      name_len bytes of UTF-8
//!     rank      u8
//!     extents   rank × u32
//!     data      product(extents) × f32
//! }
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::Lcg;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGEW";
pub const VERSION: u32 = 1;
/// Magic, version and entry count.
pub const HEADER_LEN: usize = 12;

/// Ordered map from parameter path to tensor. Iteration order is insertion
/// order, which is also file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Weights(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sum of element counts over all entries.
    pub fn total_elements(&self) -> u64 {
        self.entries.values().map(|t| t.numel() as u64).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.total_elements() as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Weights(format!("parameter name `{name}` longer than 65535 bytes")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Weights(format!("extent of `{name}` exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected \"DGEW\""),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        let count = r.u32("entry count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let at = r.pos;
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format {
                    offset: at + 2,
                    msg: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank_at = r.pos;
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4, &format!("data of `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format {
                offset: rank_at,
                msg: format!("tensor `{name}`: {e}"),
            })?;
            if store.entries.contains_key(&name) {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("duplicate parameter `{name}`"),
                });
            }
            store.entries.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                msg: format!("{} trailing bytes after last entry", bytes.len() - r.pos),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!(
                    "truncated while reading {what}: expected length at least {end} bytes, actual length {}",
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Initial value of a freshly declared parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// Where blocks obtain their parameter tensors during construction.
pub trait ParamSource {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
}

/// Draws fresh parameters and records them, in declaration order.
pub struct Initializer {
    rng: Lcg,
    store: WeightStore,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Lcg::new(seed),
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }
}

impl ParamSource for Initializer {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let t = match init {
            Init::HeNormal { fan_in } => self.rng.normal_tensor(shape, (2.0 / fan_in as f64).sqrt()),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
        };
        self.store.insert(name, t.clone())?;
        Ok(t)
    }
}

/// Draws every parameter at random, including the ones [`Initializer`] would
/// set to constants, so that structural identities are tested on generic
/// values. `Ones` parameters (scales and variances) stay positive.
pub struct RandomSource {
    rng: Lcg,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: Lcg::new(seed) }
    }
}

impl ParamSource for RandomSource {
    fn tensor(&mut self, _name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        Ok(match init {
            Init::HeNormal { fan_in } => self.rng.normal_tensor(shape, (2.0 / fan_in as f64).sqrt()),
            Init::Zeros => self.rng.uniform_tensor(shape, -0.5, 0.5),
            Init::Ones => self.rng.uniform_tensor(shape, 0.5, 1.5),
        })
    }
}

/// Reads parameters from a store, checking names and shapes.
pub struct StoreReader<'a> {
    store: &'a WeightStore,
    used: Vec<bool>,
}

impl<'a> StoreReader<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        Self {
            store,
            used: vec![false; store.len()],
        }
    }

    /// Fails if the store holds entries nothing asked for.
    pub fn finish(self) -> Result<()> {
        let unused: Vec<&str> = self
            .store
            .names()
            .zip(&self.used)
            .filter(|(_, u)| !**u)
            .map(|(n, _)| n)
            .collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::Weights(format!(
                "{} unexpected parameter(s), first `{}`",
                unused.len(),
                unused[0]
            )))
        }
    }
}

impl ParamSource for StoreReader<'_> {
    fn tensor(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let (idx, _, t) = self
            .store
            .entries
            .get_full(name)
            .ok_or_else(|| Error::Weights(format!("missing parameter `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Weights(format!(
                "parameter `{name}`: expected shape {shape:?}, found {:?}",
                t.shape()
            )));
        }
        if self.used[idx] {
            return Err(Error::Weights(format!("parameter `{name}` requested twice")));
        }
        self.used[idx] = true;
        Ok(t.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tensor_layout_length() {
        let mut ws = WeightStore::new();
        ws.insert("ab", Tensor::zeros(&[2, 3])).unwrap();
        let bytes = ws.to_bytes().unwrap();
        // header + u16 name length + name + rank byte + 2 u32 extents + 6 f32
        assert_eq!(bytes.len(), 12 + 2 + 2 + 1 + 4 * 2 + 24);
        assert_eq!(&bytes[..4], b"DGEW");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut ws = WeightStore::new();
        ws.insert("x.weight", Lcg::new(1).normal_tensor(&[3, 2, 1, 1], 1.0)).unwrap();
        ws.insert("x.bias", Tensor::new(&[2], vec![-0.0, f32::MIN_POSITIVE]).unwrap()).unwrap();
        let back = WeightStore::from_bytes(&ws.to_bytes().unwrap()).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), ["x.weight", "x.bias"]);
        for ((_, a), (_, b)) in ws.iter().zip(back.iter()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn malformed_files_report_offsets() {
        let mut ws = WeightStore::new();
        ws.insert("w", Tensor::ones(&[4])).unwrap();
        let good = ws.to_bytes().unwrap();

        let err = WeightStore::from_bytes(&good[..good.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("expected length at least {}", good.len())), "{msg}");
        assert!(msg.contains(&format!("actual length {}", good.len() - 3)), "{msg}");

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));

        let mut bad = good;
        bad.push(0);
        assert!(WeightStore::from_bytes(&bad).is_err());
    }

    #[test]
    fn reader_checks_shapes_and_leftovers() {
        let mut ws = WeightStore::new();
        ws.insert("a", Tensor::ones(&[2])).unwrap();
        ws.insert("b", Tensor::ones(&[3])).unwrap();
        let mut r = StoreReader::new(&ws);
        assert!(r.tensor("a", &[3], Init::Zeros).is_err());
        assert!(r.tensor("c", &[3], Init::Zeros).is_err());
        r.tensor("a", &[2], Init::Zeros).unwrap();
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains("`b`"));
    }
}
