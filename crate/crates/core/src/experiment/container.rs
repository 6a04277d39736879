//! Binary container shared by datasets and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SDBPCONT" | version u32 = 1 | kind u8 | digest [u8; 32] | count u32
//! count x { name_len u16 | name | dtype u8 | ndim u8 | dims u64 x ndim | data }
//! ```
//!
//! `dtype` 0 is f64, 1 is complex f64 (real, imaginary), 2 is u8 and 3 is
//! UTF-8 text (one dimension, the byte length). Files are written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result, C64};

const MAGIC: &[u8; 8] = b"SDBPCONT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dataset = 1,
    Checkpoint = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    C64 { shape: Vec<usize>, data: Vec<C64> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
    Text(String),
}

impl Array {
    fn dtype(&self) -> u8 {
        match self {
            Array::F64 { .. } => 0,
            Array::C64 { .. } => 1,
            Array::U8 { .. } => 2,
            Array::Text(_) => 3,
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self {
            Array::F64 { shape, .. } | Array::C64 { shape, .. } | Array::U8 { shape, .. } => shape.clone(),
            Array::Text(s) => vec![s.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    /// Hex-encoded SHA-256 digest.
    pub digest: String,
    pub arrays: Vec<(String, Array)>,
}

impl Container {
    pub fn new(kind: Kind, digest: &str) -> Self {
        Container { kind, digest: digest.to_string(), arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array) {
        self.arrays.push((name.into(), array));
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Array::Text(s) => Ok(s),
            _ => Err(Error::Format(format!("{name} is not text"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Array::F64 { data, .. } => Ok(data),
            _ => Err(Error::Format(format!("{name} is not an f64 array"))),
        }
    }

    pub fn complex(&self, name: &str) -> Result<&[C64]> {
        match self.get(name)? {
            Array::C64 { data, .. } => Ok(data),
            _ => Err(Error::Format(format!("{name} is not a complex array"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Array::U8 { data, .. } => Ok(data),
            _ => Err(Error::Format(format!("{name} is not a byte array"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let digest = hex::decode(&self.digest).map_err(|e| Error::Format(format!("digest: {e}")))?;
        if digest.len() != 32 {
            return Err(Error::Format("digest must be 32 bytes".into()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&digest);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            let shape = a.shape();
            if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
                return Err(Error::Format(format!("array {name} cannot be encoded")));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(a.dtype());
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            let count: usize = shape.iter().product();
            match a {
                Array::F64 { data, .. } => {
                    check_len(name, count, data.len())?;
                    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Array::C64 { data, .. } => {
                    check_len(name, count, data.len())?;
                    for v in data {
                        out.extend_from_slice(&v.re.to_le_bytes());
                        out.extend_from_slice(&v.im.to_le_bytes());
                    }
                }
                Array::U8 { data, .. } => {
                    check_len(name, count, data.len())?;
                    out.extend_from_slice(data);
                }
                Array::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            1 => Kind::Dataset,
            2 => Kind::Checkpoint,
            k => return Err(Error::Format(format!("unknown kind {k}"))),
        };
        let digest = hex::encode(r.take(32)?);
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| Error::Format(format!("array {name} is too large")))?;
            let array = match dtype {
                0 => Array::F64 {
                    data: r.chunks(count, 8)?.map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                    shape,
                },
                1 => Array::C64 {
                    data: r
                        .chunks(count, 16)?
                        .map(|c| {
                            C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap()))
                        })
                        .collect(),
                    shape,
                },
                2 => Array::U8 { data: r.take(count)?.to_vec(), shape },
                3 => Array::Text(
                    String::from_utf8(r.take(count)?.to_vec()).map_err(|_| Error::Format(format!("{name} is not UTF-8")))?,
                ),
                d => return Err(Error::Format(format!("array {name} has unknown dtype {d}"))),
            };
            arrays.push((name, array));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { kind, digest, arrays })
    }
}

fn check_len(name: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Format(format!("array {name}: shape holds {expected} values, data has {actual}")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn chunks(&mut self, count: usize, size: usize) -> Result<std::slice::ChunksExact<'a, u8>> {
        let n = count.checked_mul(size).ok_or_else(|| Error::Format("array is too large".into()))?;
        Ok(self.take(n)?.chunks_exact(size))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Write atomically; an existing file is only replaced when `overwrite`.
pub fn write_container(path: &Path, c: &Container, overwrite: bool) -> Result<()> {
    let bytes = c.to_bytes()?;
    write_atomic(path, &bytes, overwrite)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8], overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists (use --force to overwrite)", path.display()),
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a container and check its kind.
pub fn read_container(path: &Path, kind: Kind) -> Result<Container> {
    let c = Container::from_bytes(&fs::read(path)?)?;
    if c.kind != kind {
        return Err(Error::Format(format!("{} holds a {:?}, expected a {kind:?}", path.display(), c.kind)));
    }
    Ok(c)
}
