//! Versioned parameter container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic  "JDETCKPT"
//! version
//! n_meta, then n_meta × (key_len, key utf-8, value_len, value utf-8)
//! n_groups, then n_groups × (name_len, name utf-8, ndims, dims...)
//! group data in manifest order, little-endian f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"JDETCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub groups: Vec<ParamTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} overflows u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn group(&self, name: &str) -> Option<&ParamTensor> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, self.meta.len())?;
        for (k, v) in &self.meta {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        put_u32(&mut out, self.groups.len())?;
        for g in &self.groups {
            if g.dims.iter().product::<usize>() != g.data.len() {
                return Err(Error::Checkpoint(format!("group {} dims do not match data", g.name)));
            }
            put_str(&mut out, &g.name)?;
            put_u32(&mut out, g.dims.len())?;
            for &d in &g.dims {
                put_u32(&mut out, d)?;
            }
        }
        for g in &self.groups {
            for v in &g.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = r.u32()?;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let n_groups = r.u32()?;
        let mut manifest = Vec::with_capacity(n_groups.min(1024));
        for _ in 0..n_groups {
            let name = r.string()?;
            let nd = r.u32()?;
            let dims = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            manifest.push((name, dims));
        }
        let mut groups = Vec::with_capacity(manifest.len());
        for (name, dims) in manifest {
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            groups.push(ParamTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { meta, groups })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: vec![("stage".into(), "2".into()), ("mode".into(), "quadratic".into())],
            groups: vec![
                ParamTensor { name: "a".into(), dims: vec![2, 3], data: vec![1.0, -2.5, 3.0, 0.0, -0.0, 7.25] },
                ParamTensor { name: "b".into(), dims: vec![1], data: vec![f32::MIN_POSITIVE] },
            ],
        }
    }

    #[test]
    fn round_trip_bytes() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.meta_value("mode"), Some("quadratic"));
        assert_eq!(back.group("a").unwrap().dims, vec![2, 3]);
    }

    #[test]
    fn corrupt_input() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
