//! Binary raster container (`STV1`).
//!
//! Layout: magic `STV1`, one kind byte, little-endian `u32` dimensions
//! (`width, height` for rasters, `width, height, n` for stacks and signature
//! fields), a payload of little-endian `f64`, then the CRC32 of the payload.
//!
//! Payloads are row-major with components outermost. A stack stores its
//! `n` components, the residual image, then a trailer `(dt, source_mean)`.
//! A signature field stores `n` scale planes, then one trailer value: the
//! enhancement exponent, or NaN for raw signatures.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, StvError};
use crate::image::GrayImage;
use crate::spectral::{SignatureField, SpectralStack};

pub const MAGIC: &[u8; 4] = b"STV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Raster = 0,
    Stack = 1,
    Signatures = 2,
}

impl ContainerKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ContainerKind::Raster),
            1 => Ok(ContainerKind::Stack),
            2 => Ok(ContainerKind::Signatures),
            other => Err(StvError::Format(format!("unknown container kind {other}"))),
        }
    }

    fn dim_count(self) -> usize {
        match self {
            ContainerKind::Raster => 2,
            _ => 3,
        }
    }
}

/// A decoded container of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Raster(GrayImage),
    Stack(SpectralStack),
    Signatures(SignatureField),
}

fn encode(kind: ContainerKind, dims: &[u32], payload: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    let start = out.len();
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| StvError::Format(format!("dimension {v} exceeds u32")))
}

pub fn encode_raster(img: &GrayImage) -> Result<Vec<u8>> {
    let dims = [dim(img.width())?, dim(img.height())?];
    Ok(encode(ContainerKind::Raster, &dims, img.values().iter().copied()))
}

pub fn encode_stack(stack: &SpectralStack) -> Result<Vec<u8>> {
    let dims = [dim(stack.width())?, dim(stack.height())?, dim(stack.n_components())?];
    let payload = stack
        .components()
        .iter()
        .chain(std::iter::once(stack.residual()))
        .flat_map(|img| img.values().iter().copied())
        .chain([stack.dt(), stack.source_mean()]);
    Ok(encode(ContainerKind::Stack, &dims, payload))
}

pub fn encode_signatures(field: &SignatureField) -> Result<Vec<u8>> {
    let (w, h, n) = (field.width(), field.height(), field.len());
    let dims = [dim(w)?, dim(h)?, dim(n)?];
    let trailer = if field.is_enhanced() { field.p_enh() } else { f64::NAN };
    let payload = (1..=n)
        .flat_map(|k| field.plane(k).into_values())
        .chain(std::iter::once(trailer));
    Ok(encode(ContainerKind::Signatures, &dims, payload))
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(StvError::Format("missing STV1 magic".into()));
    }
    let kind = ContainerKind::from_byte(bytes[4])?;
    let header = 5 + 4 * kind.dim_count();
    if bytes.len() < header + 4 {
        return Err(StvError::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let plane = dims[0]
        .checked_mul(dims[1])
        .ok_or_else(|| StvError::Format("dimensions overflow".into()))?;
    let count = match kind {
        ContainerKind::Raster => Some(plane),
        ContainerKind::Stack => (dims[2] + 1).checked_mul(plane).and_then(|c| c.checked_add(2)),
        ContainerKind::Signatures => dims[2].checked_mul(plane).and_then(|c| c.checked_add(1)),
    }
    .ok_or_else(|| StvError::Format("dimensions overflow".into()))?;
    let expected = count
        .checked_mul(8)
        .and_then(|p| p.checked_add(header + 4))
        .ok_or_else(|| StvError::Format("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(StvError::Format(format!(
            "declared {}x{}{} needs {expected} bytes, found {}",
            dims[0],
            dims[1],
            dims.get(2).map(|n| format!("x{n}")).unwrap_or_default(),
            bytes.len()
        )));
    }
    let payload = &bytes[header..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(StvError::Format(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (w, h) = (dims[0], dims[1]);
    match kind {
        ContainerKind::Raster => Ok(Container::Raster(GrayImage::new(w, h, values)?)),
        ContainerKind::Stack => {
            let n = dims[2];
            let mut planes = values[..(n + 1) * plane]
                .chunks_exact(plane.max(1))
                .map(|c| GrayImage::new(w, h, c.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let residual = planes
                .pop()
                .ok_or_else(|| StvError::Format("stack without residual".into()))?;
            let (dt, mean) = (values[(n + 1) * plane], values[(n + 1) * plane + 1]);
            Ok(Container::Stack(SpectralStack::new(planes, residual, dt, mean)?))
        }
        ContainerKind::Signatures => {
            let n = dims[2];
            let mut data = vec![0.0; n * plane];
            for k in 0..n {
                for p in 0..plane {
                    data[p * n + k] = values[k * plane + p];
                }
            }
            let field = SignatureField::new(w, h, n, data)?;
            let trailer = values[n * plane];
            Ok(Container::Signatures(if trailer.is_nan() {
                field
            } else {
                field.into_enhanced(trailer)
            }))
        }
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| StvError::io(path, e))?;
    file.write_all(bytes).map_err(|e| StvError::io(path, e))
}

pub fn read(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| StvError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        StvError::Format(msg) => StvError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_raster(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_raster(img)?)
}

pub fn write_stack(path: &Path, stack: &SpectralStack) -> Result<()> {
    write_bytes(path, &encode_stack(stack)?)
}

pub fn read_raster(path: &Path) -> Result<GrayImage> {
    match read(path)? {
        Container::Raster(img) => Ok(img),
        _ => Err(StvError::Format(format!("{}: not a raster container", path.display()))),
    }
}

pub fn read_stack(path: &Path) -> Result<SpectralStack> {
    match read(path)? {
        Container::Stack(s) => Ok(s),
        _ => Err(StvError::Format(format!("{}: not a stack container", path.display()))),
    }
}
