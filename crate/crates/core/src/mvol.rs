//! MVOL: the on-disk format for volumes and label maps.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MVL1"                       magic
//! u8                           dtype (0 = f32 voxels, 1 = u8 labels)
//! u8                           ndim (3 or 4)
//! ndim x u32                   dims, outermost first
//! 3 x f32                      spacing in mm (slice, row, col)
//! u16 + bytes                  channel or class names, UTF-8, joined by ';'
//! payload                      row-major elements
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};

use crate::error::{CoreError, Result};
use crate::volume::{default_class_names, SegMap, Volume};

pub const MAGIC: [u8; 4] = *b"MVL1";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U8: u8 = 1;

/// Anything that can live in an MVOL file.
#[derive(Debug, Clone, PartialEq)]
pub enum MvolObject {
    Volume(Volume),
    Labels(SegMap),
}

impl MvolObject {
    pub fn into_volume(self) -> Result<Volume> {
        match self {
            Self::Volume(v) => Ok(v),
            Self::Labels(_) => Err(CoreError::BadHeader("expected f32 volume, found u8 labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<SegMap> {
        match self {
            Self::Labels(s) => Ok(s),
            Self::Volume(_) => Err(CoreError::BadHeader("expected u8 labels, found f32 volume".into())),
        }
    }
}

impl From<Volume> for MvolObject {
    fn from(v: Volume) -> Self {
        Self::Volume(v)
    }
}

impl From<SegMap> for MvolObject {
    fn from(s: SegMap) -> Self {
        Self::Labels(s)
    }
}

fn header(dtype: u8, dims: &[usize], spacing: [f32; 3], names: &[String]) -> Result<Vec<u8>> {
    let joined = names.join(";");
    if joined.len() > u16::MAX as usize {
        return Err(CoreError::BadHeader("name block longer than 65535 bytes".into()));
    }
    let mut out = Vec::with_capacity(16 + dims.len() * 4 + joined.len());
    out.extend_from_slice(&MAGIC);
    out.push(dtype);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| CoreError::BadHeader(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(joined.len() as u16).to_le_bytes());
    out.extend_from_slice(joined.as_bytes());
    Ok(out)
}

/// Serializes a volume or label map to bytes.
pub fn encode(obj: &MvolObject) -> Result<Vec<u8>> {
    match obj {
        MvolObject::Volume(v) => {
            let d = v.voxels().dim();
            let mut out = header(DTYPE_F32, &[d.0, d.1, d.2, d.3], v.spacing(), v.modality_names())?;
            out.reserve(v.voxels().len() * 4);
            for x in v.voxels().iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            Ok(out)
        }
        MvolObject::Labels(s) => {
            let labels = s
                .labels()
                .ok_or_else(|| CoreError::InvalidSegMap("only hard label maps are stored in MVOL".into()))?;
            let d = labels.dim();
            let mut out = header(DTYPE_U8, &[d.0, d.1, d.2], s.spacing(), s.class_names())?;
            out.extend(labels.iter().copied());
            Ok(out)
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(CoreError::Truncated {
                section,
                expected: n,
                found: left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}

/// Parses MVOL bytes. `patient_id` is attached to decoded volumes.
pub fn decode(bytes: &[u8], patient_id: &str) -> Result<MvolObject> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = {
        let left = bytes.len().min(4);
        let mut m = [0u8; 4];
        m[..left].copy_from_slice(&bytes[..left]);
        m
    };
    if magic != MAGIC {
        return Err(CoreError::BadMagic(magic));
    }
    cur.pos = 4;
    let dtype = cur.u8("header")?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(CoreError::UnknownDtype(dtype));
    }
    let ndim = cur.u8("header")?;
    if ndim != 3 && ndim != 4 {
        return Err(CoreError::BadNdim(ndim));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        dims.push(cur.u32("header")? as usize);
    }
    let spacing = [cur.f32("header")?, cur.f32("header")?, cur.f32("header")?];
    let name_len = cur.u16("header")? as usize;
    let names_raw = cur.take(name_len, "name block")?;
    let names_str = std::str::from_utf8(names_raw)
        .map_err(|e| CoreError::BadHeader(format!("name block is not UTF-8: {e}")))?;
    let names: Vec<String> = if names_str.is_empty() {
        Vec::new()
    } else {
        names_str.split(';').map(str::to_string).collect()
    };

    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CoreError::BadHeader("element count overflows".into()))?;
    let elem = if dtype == DTYPE_F32 { 4 } else { 1 };
    let payload_len = count
        .checked_mul(elem)
        .ok_or_else(|| CoreError::BadHeader("payload size overflows".into()))?;
    let payload = cur.take(payload_len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(CoreError::BadHeader(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }

    match dtype {
        DTYPE_F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let shape = if ndim == 4 {
                (dims[0], dims[1], dims[2], dims[3])
            } else {
                (dims[0], dims[1], dims[2], 1)
            };
            let voxels = Array4::from_shape_vec(shape, data)
                .map_err(|e| CoreError::BadHeader(e.to_string()))?;
            let names = if names.is_empty() {
                (0..shape.3).map(|c| format!("ch{c}")).collect()
            } else {
                names
            };
            Ok(MvolObject::Volume(Volume::new(voxels, spacing, names, patient_id)?))
        }
        _ => {
            let shape = if ndim == 3 {
                (dims[0], dims[1], dims[2])
            } else if dims[3] == 1 {
                (dims[0], dims[1], dims[2])
            } else {
                return Err(CoreError::BadHeader("u8 labels must have a singleton channel axis".into()));
            };
            let labels = Array3::from_shape_vec(shape, payload.to_vec())
                .map_err(|e| CoreError::BadHeader(e.to_string()))?;
            let names = if names.is_empty() {
                let max = labels.iter().copied().max().unwrap_or(0) as usize;
                default_class_names((max + 1).max(2))
            } else {
                names
            };
            Ok(MvolObject::Labels(SegMap::from_labels(labels, names, spacing)?))
        }
    }
}

/// Patient id derived from a path: the file name up to its first '.'.
pub fn patient_id_from_path(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.split('.').next().unwrap_or(n).to_string())
        .unwrap_or_default()
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<MvolObject> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, &patient_id_from_path(path))
}

pub fn write_mvol(obj: &MvolObject, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(obj)?)?;
    Ok(())
}
