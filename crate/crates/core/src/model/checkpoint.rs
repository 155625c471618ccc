//! Flat binary parameter checkpoints.
//!
//! Layout (all integers `u64` little-endian):
//!
//! ```text
//! b"MIROCKPT"  version(=1)  element_bytes(4|8)  tensor_count
//! repeated: name_len  name(utf-8)  ndim  extents[ndim]  elements (little-endian)
//! ```

use std::path::Path;

use crate::diffcore::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MIROCKPT";
const VERSION: u64 = 1;

fn put(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_params<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + store.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    put(&mut out, T::BYTES as u64);
    put(&mut out, store.len() as u64);
    for (name, p) in store.iter() {
        put(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, p.value.shape().len() as u64);
        for &e in p.value.shape() {
            put(&mut out, e as u64);
        }
        for &x in p.value.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Data(format!("checkpoint truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Data("checkpoint extent overflows usize".into()))
    }
}

pub fn read_params<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Data("not a parameter checkpoint".into()));
    }
    let version = r.u64()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let width = r.usize()?;
    if width != T::BYTES {
        return Err(Error::Data(format!(
            "checkpoint stores {width}-byte elements, caller expects {}",
            T::BYTES
        )));
    }
    let count = r.usize()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Data("parameter name is not utf-8".into()))?
            .to_string();
        let ndim = r.usize()?;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Data("tensor size overflows".into()))?;
        let raw = r.take(n.checked_mul(width).ok_or_else(|| Error::Data("tensor size overflows".into()))?)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        store.insert(name, Tensor::new(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Data("trailing bytes after checkpoint".into()));
    }
    Ok(store)
}

pub fn save_params<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, write_params(store)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Real>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&bytes)
}
