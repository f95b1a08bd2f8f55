//! `KST1` tensor files.
//!
//! Layout, all little-endian:
//! - magic `KST1`
//! - version: u8 (currently 1)
//! - dtype: u8 (0 = complex f32 interleaved re/im, 1 = real f32)
//! - rank: u8
//! - dims: rank × u64
//! - payload: row-major f32 values
//!
//! Computation is f64; values are narrowed to f32 on the way to disk.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, MagnitudeImage, MultiCoilKSpace, C64};
use crate::operators::SamplingMask;

pub const MAGIC: &[u8; 4] = b"KST1";
pub const VERSION: u8 = 1;
const HEADER_FIXED: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Complex32 = 0,
    Real32 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::Complex32),
            1 => Ok(DType::Real32),
            other => Err(Error::InvalidData(format!("unknown tensor dtype code {other}"))),
        }
    }

    /// f32 values per element.
    pub fn width(self) -> usize {
        match self {
            DType::Complex32 => 2,
            DType::Real32 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dtype: DType,
    dims: Vec<usize>,
    /// Interleaved for complex tensors.
    data: Vec<f32>,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidData(format!("tensor dims {dims:?} overflow")))
}

impl TensorFile {
    pub fn new(dtype: DType, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("rank {} exceeds 255", dims.len())));
        }
        let n = element_count(&dims)?;
        if n.checked_mul(dtype.width()) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?} of {dtype:?}",
                data.len()
            )));
        }
        Ok(Self { dtype, dims, data })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_FIXED + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_FIXED || &bytes[..4] != MAGIC {
            return Err(Error::InvalidData("not a KST1 tensor file".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::InvalidData(format!("unsupported tensor file version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5])?;
        let rank = bytes[6] as usize;
        let dims_end = HEADER_FIXED + 8 * rank;
        if bytes.len() < dims_end {
            return Err(Error::InvalidData("truncated tensor header".into()));
        }
        let dims = bytes[HEADER_FIXED..dims_end]
            .chunks_exact(8)
            .map(|c| {
                let d = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                usize::try_from(d).map_err(|_| Error::InvalidData(format!("dimension {d} too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = element_count(&dims)?
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::InvalidData("tensor size overflow".into()))?;
        let payload = &bytes[dims_end..];
        if Some(payload.len()) != values.checked_mul(4) {
            return Err(Error::InvalidData(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                values.saturating_mul(4)
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Self { dtype, dims, data })
    }

    /// Whole-file atomic write: temp file in the same directory, then rename.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::InvalidData(m) => Error::InvalidData(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `[coils, rows, cols]` complex tensor.
    pub fn from_kspace(k: &MultiCoilKSpace) -> Self {
        let (coils, rows, cols) = k.dims();
        let mut data = Vec::with_capacity(2 * coils * rows * cols);
        for g in k.grids() {
            for v in g.data() {
                data.push(v.re as f32);
                data.push(v.im as f32);
            }
        }
        Self {
            dtype: DType::Complex32,
            dims: vec![coils, rows, cols],
            data,
        }
    }

    pub fn to_kspace(&self) -> Result<MultiCoilKSpace> {
        let (coils, rows, cols) = match (self.dtype, self.dims.as_slice()) {
            (DType::Complex32, &[c, r, k]) => (c, r, k),
            _ => {
                return Err(Error::InvalidData(format!(
                    "expected a rank-3 complex tensor, found {:?} {:?}",
                    self.dtype, self.dims
                )))
            }
        };
        let per = rows * cols;
        let grids = (0..coils)
            .map(|c| {
                let vals = self.data[2 * c * per..2 * (c + 1) * per]
                    .chunks_exact(2)
                    .map(|p| C64::new(p[0] as f64, p[1] as f64))
                    .collect();
                ComplexGrid::new(rows, cols, vals)
            })
            .collect::<Result<Vec<_>>>()?;
        MultiCoilKSpace::new(grids)
    }

    /// `[rows, cols]` real tensor.
    pub fn from_image(img: &MagnitudeImage) -> Self {
        Self {
            dtype: DType::Real32,
            dims: vec![img.rows(), img.cols()],
            data: img.values().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_image(&self) -> Result<MagnitudeImage> {
        match (self.dtype, self.dims.as_slice()) {
            (DType::Real32, &[r, c]) => MagnitudeImage::new(r, c, self.data.iter().map(|&v| v as f64).collect()),
            _ => Err(Error::InvalidData(format!(
                "expected a rank-2 real tensor, found {:?} {:?}",
                self.dtype, self.dims
            ))),
        }
    }

    /// Mask entries as 0/1 reals; the ACS band is stored elsewhere.
    pub fn from_mask(mask: &SamplingMask) -> Self {
        Self {
            dtype: DType::Real32,
            dims: vec![mask.rows(), mask.cols()],
            data: mask.kept().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_mask(&self, acs: std::ops::Range<usize>) -> Result<SamplingMask> {
        let (rows, cols) = match (self.dtype, self.dims.as_slice()) {
            (DType::Real32, &[r, c]) => (r, c),
            _ => {
                return Err(Error::InvalidData(format!(
                    "expected a rank-2 real mask, found {:?} {:?}",
                    self.dtype, self.dims
                )))
            }
        };
        let kept = self
            .data
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0u8),
                1.0 => Ok(1u8),
                other => Err(Error::InvalidData(format!("mask value {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        SamplingMask::new(rows, cols, kept, acs)
    }
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Narrows every value to f32 and back, as a file round trip would.
pub fn quantize(k: &MultiCoilKSpace) -> MultiCoilKSpace {
    k.map(|v| C64::new(v.re as f32 as f64, v.im as f32 as f64))
}
