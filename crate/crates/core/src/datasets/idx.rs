//! IDX tensors: `00 00 <type> <ndim>`, `ndim` big-endian u32 sizes, then
//! big-endian data. Unsigned bytes (`0x08`) and f32 (`0x0D`) are supported.

use std::fs;
use std::path::Path;

use super::{DatasetError, InstancePool};
use crate::autograd::Tensor;

const UBYTE: u8 = 0x08;
const FLOAT: u8 = 0x0D;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxArray {
    fn type_code(&self) -> u8 {
        match self.data {
            IdxData::U8(_) => UBYTE,
            IdxData::F32(_) => FLOAT,
        }
    }

    /// The 4-byte magic number as a big-endian integer.
    pub fn magic(&self) -> u32 {
        u32::from_be_bytes([0, 0, self.type_code(), self.dims.len() as u8])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, self.type_code(), self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.data {
            IdxData::U8(v) => out.extend_from_slice(v),
            IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    pub fn parse(bytes: &[u8], path: &str) -> Result<Self, DatasetError> {
        let err = |offset: usize, detail: String| DatasetError::Idx {
            path: path.to_string(),
            offset,
            detail,
        };
        if bytes.len() < 4 {
            return Err(err(bytes.len(), "truncated magic number".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(err(0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
        }
        let (code, ndim) = (bytes[2], bytes[3] as usize);
        let width = match code {
            UBYTE => 1,
            FLOAT => 4,
            other => return Err(err(2, format!("unsupported data type 0x{other:02x}"))),
        };
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(err(bytes.len(), format!("truncated header, expected {ndim} dimensions")));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count: usize = dims.iter().product();
        let body = &bytes[header..];
        if body.len() != count * width {
            let offset = header + body.len().min(count * width);
            return Err(err(
                offset,
                format!("expected {} data bytes for dims {dims:?}, found {}", count * width, body.len()),
            ));
        }
        let data = match code {
            UBYTE => IdxData::U8(body.to_vec()),
            _ => IdxData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray, DatasetError> {
    IdxArray::parse(&fs::read(path)?, &path.display().to_string())
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<(), DatasetError> {
    fs::write(path, array.to_bytes())?;
    Ok(())
}

/// Reads an image file (magic `0x00000803`) and its label file (magic
/// `0x00000801`) into a pool of `[N, 1, rows, cols]` pixels scaled to [0, 1].
pub fn load_idx_images(images: &Path, labels: &Path) -> Result<InstancePool, DatasetError> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    let wrong_magic = |path: &Path, got: u32, want: u32| DatasetError::Idx {
        path: path.display().to_string(),
        offset: 0,
        detail: format!("magic 0x{got:08x}, expected 0x{want:08x}"),
    };
    if img.magic() != 0x0000_0803 {
        return Err(wrong_magic(images, img.magic(), 0x0000_0803));
    }
    if lab.magic() != 0x0000_0801 {
        return Err(wrong_magic(labels, lab.magic(), 0x0000_0801));
    }
    let (IdxData::U8(pixels), IdxData::U8(label_bytes)) = (img.data, lab.data) else {
        unreachable!("magic checked");
    };
    if img.dims[0] != lab.dims[0] {
        return Err(DatasetError::Idx {
            path: labels.display().to_string(),
            offset: 4,
            detail: format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        });
    }
    if let Some(pos) = label_bytes.iter().position(|&l| l > 9) {
        return Err(DatasetError::Idx {
            path: labels.display().to_string(),
            offset: 8 + pos,
            detail: format!("label {} outside 0-9", label_bytes[pos]),
        });
    }
    let shape = vec![img.dims[0], 1, img.dims[1], img.dims[2]];
    let data = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    InstancePool::new(Tensor::new(shape, data)?, label_bytes)
}
