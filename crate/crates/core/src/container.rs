//! Versioned binary container shared by model checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "STNPCKPT"
//! version    u32       currently 1
//! kind       str       model family, e.g. "anp", "qrf", "gbq"
//! header     str       `key=value` lines, sorted by key
//! n_entries  u32
//! entry*     name: str, dtype: u8, ndim: u32, dims: u64 × ndim, values
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. `dtype` is 0 for f32,
//! 1 for f64 and 2 for u32; values are packed little-endian in row-major
//! order. Entries are written sorted by name, so equal contents always give
//! equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STNPCKPT";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl EntryData {
    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::U32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub data: EntryData,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Container {
    pub kind: String,
    pub header: BTreeMap<String, String>,
    pub entries: BTreeMap<String, Entry>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated container at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
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

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in container".into()))
    }
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.insert(key.to_string(), value.to_string());
    }

    /// Parses a header value, failing with a format error when absent or malformed.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .header
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing header key {key}")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad header value {key}={raw}")))
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: EntryData) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("entry {name}: shape {shape:?} does not match {} values", data.len())));
        }
        self.entries.insert(name.to_string(), Entry { shape, data });
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing entry {name}")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.entry(name)?.data {
            EntryData::F64(v) => Ok(v),
            _ => Err(Error::Format(format!("entry {name} is not f64"))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match &self.entry(name)?.data {
            EntryData::U32(v) => Ok(v),
            _ => Err(Error::Format(format!("entry {name} is not u32"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        let header: String = self.header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_str(&mut out, &header);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            put_str(&mut out, name);
            let tag = match e.data {
                EntryData::F32(_) => 0u8,
                EntryData::F64(_) => 1,
                EntryData::U32(_) => 2,
            };
            out.push(tag);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a model container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let kind = r.str()?;
        let mut header = BTreeMap::new();
        for line in r.str()?.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let n = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let name = r.str()?;
            let tag = r.u8()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = match tag {
                0 => EntryData::F32(r.take(count * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
                1 => EntryData::F64(r.take(count * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
                2 => EntryData::U32(r.take(count * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4"))).collect()),
                t => return Err(Error::Format(format!("entry {name}: unknown dtype {t}"))),
            };
            entries.insert(name, Entry { shape, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(Self { kind, header, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a container and checks that it holds the expected model family.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.kind != kind {
            return Err(Error::Format(format!("{} holds a {} model, expected {kind}", path.display(), c.kind)));
        }
        Ok(c)
    }
}
