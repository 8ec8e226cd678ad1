//! Binary tensor container.
//!
//! ```text
//! "SBPP" | version u16 LE | rank u8 | dims u32 LE x rank
//!        | payload f32 LE, row-major, product(dims) values
//!        | optional labels: count u32 LE | f32 LE x count
//! ```
//!
//! Datasets are stored as rank 4 `[count, height, width, bands]` (rank 2
//! `[count, bands]` is read as 1x1 patches).

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Patch};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SBPP";
pub const FORMAT_VERSION: u16 = 1;

/// Raw contents of one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub payload: Vec<f32>,
    pub labels: Option<Vec<f32>>,
}

impl TensorFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let rank = u8::try_from(self.dims.len())
            .map_err(|_| Error::InvalidArgument(format!("rank {} too large", self.dims.len())))?;
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        let n = element_count(&self.dims)?;
        if n != self.payload.len() {
            return Err(Error::InvalidArgument(format!(
                "dims {:?} describe {n} values, payload has {}",
                self.dims,
                self.payload.len()
            )));
        }
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(rank);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            let count = u32::try_from(labels.len())
                .map_err(|_| Error::InvalidArgument("too many labels".into()))?;
            out.extend_from_slice(&count.to_le_bytes());
            for v in labels {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::UnrecognizedContainer(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(MAGIC),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != FORMAT_VERSION {
            return Err(Error::UnrecognizedContainer(format!("unsupported version {version}")));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        if rank == 0 {
            return Err(Error::Malformed("rank 0".into()));
        }
        let dims: Vec<u32> =
            (0..rank).map(|_| r.array("dims").map(u32::from_le_bytes)).collect::<Result<_>>()?;
        let n = element_count(&dims)?;
        let needed = n.checked_mul(4).ok_or_else(|| Error::Malformed("dimension overflow".into()))?;
        if r.remaining() < needed {
            return Err(Error::Truncated(format!(
                "header declares {n} values ({needed} bytes) but only {} bytes follow",
                r.remaining()
            )));
        }
        let payload = r.f32s(n, "payload")?;
        let labels = if r.remaining() == 0 {
            None
        } else {
            let count = u32::from_le_bytes(r.array("label count")?) as usize;
            if r.remaining() < count.saturating_mul(4) {
                return Err(Error::Truncated(format!(
                    "label block declares {count} values but only {} bytes follow",
                    r.remaining()
                )));
            }
            Some(r.f32s(count, "labels")?)
        };
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { dims, payload, labels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        if d == 0 {
            return Err(Error::Malformed("zero dimension".into()));
        }
        acc.checked_mul(d as usize).ok_or_else(|| Error::Malformed("dimension overflow".into()))
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!("file ends inside {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("dimension {v} exceeds u32")))
}

pub fn dataset_to_tensor(data: &Dataset) -> Result<TensorFile> {
    let (h, w, b) = data.dims();
    let dims = vec![dim_u32(data.len())?, dim_u32(h)?, dim_u32(w)?, dim_u32(b)?];
    let payload = data.patches().iter().flat_map(|p| p.cube.iter().copied()).collect();
    Ok(TensorFile { dims, payload, labels: data.targets().map(<[f32]>::to_vec) })
}

pub fn dataset_from_tensor(t: TensorFile) -> Result<Dataset> {
    let (count, h, w, b) = match t.dims[..] {
        [c, b] => (c as usize, 1, 1, b as usize),
        [c, h, w, b] => (c as usize, h as usize, w as usize, b as usize),
        _ => {
            return Err(Error::Malformed(format!(
                "dataset must be rank 2 or 4, got dims {:?}",
                t.dims
            )))
        }
    };
    if let Some(l) = &t.labels {
        if l.len() != count {
            return Err(Error::Malformed(format!("{} labels for {count} samples", l.len())));
        }
    }
    let per = h * w * b;
    let patches = t
        .payload
        .chunks_exact(per)
        .map(|c| Patch::new(h, w, b, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(patches, t.labels)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    dataset_to_tensor(data)?.write(path)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_tensor(TensorFile::read(path)?)
}
