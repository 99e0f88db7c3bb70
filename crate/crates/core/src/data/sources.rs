//! Readers for the two benchmark on-disk formats: IDX (MNIST) and MATLAB level-5
//! MAT files (SVHN cropped digits, `X` as 32x32x3xN uint8 and `y` as Nx1).

use std::io::Read;
use std::path::Path;

use flate2::read::{GzDecoder, ZlibDecoder};

use super::types::{ImageTensor, LabeledSource, ModalityInput};
use crate::error::{Error, Result};

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let ctx = "idx";
    if bytes.len() < 4 {
        return Err(Error::format(ctx, "truncated header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(ctx, "bad magic"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(
            ctx,
            format!("unsupported element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(ctx, "truncated dimensions"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() < header + n {
        return Err(Error::format(
            ctx,
            format!("expected {n} data bytes, found {}", bytes.len() - header),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..header + n].to_vec(),
    })
}

/// Load an MNIST-style image/label IDX pair (optionally gzipped).
pub fn load_idx_source(id: &str, images: &Path, labels: &Path, num_classes: usize) -> Result<LabeledSource> {
    let imgs = parse_idx(&read_maybe_gz(images)?)?;
    let labs = parse_idx(&read_maybe_gz(labels)?)?;
    if imgs.dims.len() != 3 || labs.dims.len() != 1 || imgs.dims[0] != labs.dims[0] {
        return Err(Error::format(
            "idx",
            format!("image dims {:?} do not match label dims {:?}", imgs.dims, labs.dims),
        ));
    }
    let (n, h, w) = (imgs.dims[0], imgs.dims[1], imgs.dims[2]);
    let items = (0..n)
        .map(|i| {
            let px = &imgs.data[i * h * w..(i + 1) * h * w];
            ModalityInput::Image(ImageTensor {
                channels: 1,
                height: h,
                width: w,
                data: px.iter().map(|&b| f32::from(b) / 255.0).collect(),
            })
        })
        .collect();
    let labels = labs.data.iter().map(|&b| b as usize).collect();
    LabeledSource::new(id, num_classes, items, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

/// One numeric variable from a MAT file, stored column-major as MATLAB does.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: MatData,
}

impl MatArray {
    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            MatData::U8(v) => v.iter().map(|&b| f64::from(b)).collect(),
            MatData::F64(v) => v.clone(),
        }
    }
}

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b: [u8; 4] = self
            .buf
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format("mat", "truncated element"))?
            .try_into()
            .unwrap();
        self.pos += 4;
        Ok(if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        })
    }

    /// Returns (type, payload). Handles the packed small-element form.
    fn element(&mut self) -> Result<(u32, &'a [u8])> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            let ty = first & 0xffff;
            let size = (first >> 16) as usize;
            let data = self
                .buf
                .get(self.pos..self.pos + size)
                .ok_or_else(|| Error::format("mat", "truncated small element"))?;
            self.pos += 4;
            return Ok((ty, data));
        }
        let size = self.u32()? as usize;
        let data = self
            .buf
            .get(self.pos..self.pos + size)
            .ok_or_else(|| Error::format("mat", "truncated element payload"))?;
        self.pos += size;
        if first != MI_COMPRESSED {
            self.pos += (8 - size % 8) % 8;
        }
        Ok((first, data))
    }
}

fn numeric(ty: u32, data: &[u8], big: bool) -> Result<MatData> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            data.chunks_exact($n)
                .map(|c| {
                    let a = c.try_into().unwrap();
                    (if big {
                        <$t>::from_be_bytes(a)
                    } else {
                        <$t>::from_le_bytes(a)
                    }) as f64
                })
                .collect()
        };
    }
    Ok(match ty {
        MI_UINT8 => MatData::U8(data.to_vec()),
        MI_INT8 => MatData::F64(data.iter().map(|&b| f64::from(b as i8)).collect()),
        MI_INT16 => MatData::F64(conv!(i16, 2)),
        MI_UINT16 => MatData::F64(conv!(u16, 2)),
        MI_INT32 => MatData::F64(conv!(i32, 4)),
        MI_UINT32 => MatData::F64(conv!(u32, 4)),
        MI_SINGLE => MatData::F64(conv!(f32, 4)),
        MI_DOUBLE => MatData::F64(conv!(f64, 8)),
        MI_INT64 => MatData::F64(conv!(i64, 8)),
        MI_UINT64 => MatData::F64(conv!(u64, 8)),
        other => return Err(Error::format("mat", format!("unsupported numeric type {other}"))),
    })
}

fn parse_matrix(payload: &[u8], big_endian: bool) -> Result<Option<MatArray>> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
        big_endian,
    };
    let (_, flags) = r.element()?;
    let class = flags.first().copied().unwrap_or(0);
    let class = if big_endian {
        flags.get(3).copied().unwrap_or(0)
    } else {
        class
    };
    // Numeric classes are 6..=15; skip cells, structs, chars, sparse.
    if !(6..=15).contains(&class) {
        return Ok(None);
    }
    let (_, dims_raw) = r.element()?;
    let dims = match numeric(MI_INT32, dims_raw, big_endian)? {
        MatData::F64(v) => v.into_iter().map(|d| d as usize).collect::<Vec<_>>(),
        MatData::U8(_) => unreachable!(),
    };
    let (_, name) = r.element()?;
    let name = String::from_utf8_lossy(name).into_owned();
    let (ty, real) = r.element()?;
    let data = numeric(ty, real, big_endian)?;
    let n: usize = dims.iter().product();
    let len = match &data {
        MatData::U8(v) => v.len(),
        MatData::F64(v) => v.len(),
    };
    if len != n {
        return Err(Error::format(
            "mat",
            format!("variable `{name}` has {len} values for dims {dims:?}"),
        ));
    }
    Ok(Some(MatArray { name, dims, data }))
}

/// Parse the numeric variables of a level-5 MAT file.
pub fn parse_mat(bytes: &[u8]) -> Result<Vec<MatArray>> {
    if bytes.len() < 128 {
        return Err(Error::format("mat", "file shorter than the 128-byte header"));
    }
    let big_endian = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err(Error::format("mat", "bad endian indicator (not a level-5 MAT file?)")),
    };
    let mut out = Vec::new();
    let mut r = Reader {
        buf: bytes,
        pos: 128,
        big_endian,
    };
    while r.pos + 8 <= bytes.len() {
        let (ty, payload) = r.element()?;
        let inflated;
        let (ty, payload) = if ty == MI_COMPRESSED {
            let mut buf = Vec::new();
            ZlibDecoder::new(payload).read_to_end(&mut buf)?;
            inflated = buf;
            let mut inner = Reader {
                buf: &inflated,
                pos: 0,
                big_endian,
            };
            inner.element()?
        } else {
            (ty, payload)
        };
        if ty == MI_MATRIX {
            if let Some(arr) = parse_matrix(payload, big_endian)? {
                out.push(arr);
            }
        }
    }
    Ok(out)
}

/// Load an SVHN cropped-digit MAT file. Label 10 denotes digit 0.
pub fn load_svhn_source(id: &str, path: &Path) -> Result<LabeledSource> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let vars = parse_mat(&std::fs::read(path)?)?;
    let x = vars
        .iter()
        .find(|v| v.name == "X")
        .ok_or_else(|| Error::format("svhn", "variable `X` not found"))?;
    let y = vars
        .iter()
        .find(|v| v.name == "y")
        .ok_or_else(|| Error::format("svhn", "variable `y` not found"))?;
    if x.dims.len() != 4 {
        return Err(Error::format("svhn", format!("`X` must be 4-D, got {:?}", x.dims)));
    }
    let (h, w, c, n) = (x.dims[0], x.dims[1], x.dims[2], x.dims[3]);
    let labels_raw = y.as_f64();
    if labels_raw.len() != n {
        return Err(Error::format(
            "svhn",
            format!("{n} images but {} labels", labels_raw.len()),
        ));
    }
    let pixels = match &x.data {
        MatData::U8(v) => v.iter().map(|&b| f32::from(b) / 255.0).collect::<Vec<f32>>(),
        MatData::F64(v) => v.iter().map(|&b| (b / 255.0) as f32).collect(),
    };
    let items = (0..n)
        .map(|s| {
            let mut img = ImageTensor::filled(c, h, w, 0.0);
            for ch in 0..c {
                for row in 0..h {
                    for col in 0..w {
                        *img.at_mut(ch, row, col) = pixels[row + h * (col + w * (ch + c * s))];
                    }
                }
            }
            ModalityInput::Image(img)
        })
        .collect();
    let labels = labels_raw.iter().map(|&l| (l as usize) % 10).collect();
    LabeledSource::new(id, 10, items, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let mut bytes = vec![0, 0, 8, 3];
        for d in [2u32, 2, 3] {
            bytes.extend(d.to_be_bytes());
        }
        bytes.extend(0u8..12);
        let arr = parse_idx(&bytes).unwrap();
        assert_eq!(arr.dims, vec![2, 2, 3]);
        assert_eq!(arr.data, (0u8..12).collect::<Vec<_>>());
    }

    #[test]
    fn idx_truncated() {
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend(5u32.to_be_bytes());
        bytes.extend([1, 2]);
        assert!(parse_idx(&bytes).is_err());
    }

    #[test]
    fn mat_rejects_non_mat() {
        assert!(parse_mat(&[0u8; 200]).is_err());
    }
}
