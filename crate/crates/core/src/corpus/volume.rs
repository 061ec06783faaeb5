//! Volumes, anatomy masks, and their binary on-disk format.
//!
//! Files carry a 32-byte header — 8-byte magic, three u32 dims (H, W, D),
//! three f32 spacings (x, y, z) — followed by the payload: little-endian f32
//! voxels for volumes, u8 class indices for masks. Voxel layout is d-major:
//! `index = (id * H + ih) * W + iw`, so axial slices are contiguous.

use crate::error::CoreError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const VOLUME_MAGIC: [u8; 8] = *b"VXVOL1\0\0";
pub const MASK_MAGIC: [u8; 8] = *b"VXMSK1\0\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityDomain {
    RawHu,
    Normalized,
    Zscored,
}

/// Dense 3D scalar grid with physical spacing metadata.
///
/// Values are held as f64 in memory and stored as f32 on disk; generators
/// quantize to f32 at creation so write/read round-trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeTensor {
    /// (H, W, D)
    pub shape: [usize; 3],
    /// (x, y, z) mm; x runs along W, y along H, z along D.
    pub spacing_mm: [f64; 3],
    pub domain: IntensityDomain,
    /// d-major layout; length H*W*D.
    pub data: Vec<f64>,
}

impl VolumeTensor {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], domain: IntensityDomain) -> Result<Self, CoreError> {
        if shape.iter().any(|&s| s == 0) {
            return Err(CoreError::Data(format!("volume dims must be >= 1, got {shape:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::Data(format!(
                "spacing must be strictly positive, got {spacing_mm:?}"
            )));
        }
        Ok(VolumeTensor {
            shape,
            spacing_mm,
            domain,
            data: vec![0.0; shape[0] * shape[1] * shape[2]],
        })
    }

    #[inline]
    pub fn idx(&self, ih: usize, iw: usize, id: usize) -> usize {
        (id * self.shape[0] + ih) * self.shape[1] + iw
    }

    #[inline]
    pub fn get(&self, ih: usize, iw: usize, id: usize) -> f64 {
        self.data[self.idx(ih, iw, id)]
    }

    #[inline]
    pub fn set(&mut self, ih: usize, iw: usize, id: usize, v: f64) {
        let i = self.idx(ih, iw, id);
        self.data[i] = v;
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Quantize every voxel to its nearest f32, so disk round-trips are exact.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CoreError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(&VOLUME_MAGIC);
        for &d in &self.shape {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &s in &self.spacing_mm {
            header.extend_from_slice(&(s as f32).to_le_bytes());
        }
        debug_assert_eq!(header.len(), 32);
        f.write_all(&header)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        f.write_all(&payload)
            .map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self, CoreError> {
        let mut f = std::fs::File::open(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let (shape, spacing) = read_header(&mut f, path, &VOLUME_MAGIC)?;
        let n = shape[0] * shape[1] * shape[2];
        let mut buf = vec![0u8; n * 4];
        f.read_exact(&mut buf)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(VolumeTensor {
            shape,
            spacing_mm: spacing,
            // The file format does not tag the domain; callers track it.
            domain: IntensityDomain::RawHu,
            data,
        })
    }

    /// Read only the header, for cheap slice-count filters.
    pub fn read_header(path: &Path) -> Result<([usize; 3], [f64; 3]), CoreError> {
        let mut f = std::fs::File::open(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        read_header(&mut f, path, &VOLUME_MAGIC)
    }
}

fn read_header(
    f: &mut std::fs::File,
    path: &Path,
    magic: &[u8; 8],
) -> Result<([usize; 3], [f64; 3]), CoreError> {
    let mut header = [0u8; 32];
    f.read_exact(&mut header)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    if &header[0..8] != magic {
        return Err(CoreError::Data(format!(
            "{}: bad magic {:?}",
            path.display(),
            &header[0..8]
        )));
    }
    let d = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let s = |i: usize| f32::from_le_bytes(header[20 + 4 * i..24 + 4 * i].try_into().unwrap()) as f64;
    let shape = [d(0), d(1), d(2)];
    if shape.iter().any(|&x| x == 0) {
        return Err(CoreError::Data(format!("{}: zero dimension", path.display())));
    }
    Ok((shape, [s(0), s(1), s(2)]))
}

/// Integer anatomy mask with the same layout as [`VolumeTensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub shape: [usize; 3],
    pub data: Vec<u8>,
}

impl MaskVolume {
    pub fn zeros(shape: [usize; 3]) -> Self {
        MaskVolume {
            shape,
            data: vec![0; shape[0] * shape[1] * shape[2]],
        }
    }

    #[inline]
    pub fn idx(&self, ih: usize, iw: usize, id: usize) -> usize {
        (id * self.shape[0] + ih) * self.shape[1] + iw
    }

    pub fn write(&self, path: &Path) -> Result<(), CoreError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(&MASK_MAGIC);
        for &d in &self.shape {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for _ in 0..3 {
            header.extend_from_slice(&1.0f32.to_le_bytes());
        }
        f.write_all(&header)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        f.write_all(&self.data)
            .map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self, CoreError> {
        let mut f = std::fs::File::open(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let (shape, _) = read_header(&mut f, path, &MASK_MAGIC)?;
        let mut data = vec![0u8; shape[0] * shape[1] * shape[2]];
        f.read_exact(&mut data)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Ok(MaskVolume { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_round_trips_exactly_after_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vxvol");
        let mut v = VolumeTensor::new([4, 5, 3], [1.5, 1.5, 3.0], IntensityDomain::RawHu).unwrap();
        for (i, x) in v.data.iter_mut().enumerate() {
            *x = (i as f64).sin() * 700.0;
        }
        v.quantize_f32();
        v.write(&path).unwrap();
        let r = VolumeTensor::read(&path).unwrap();
        assert_eq!(r.shape, v.shape);
        assert_eq!(r.spacing_mm, v.spacing_mm);
        assert_eq!(r.data, v.data);
        let (shape, spacing) = VolumeTensor::read_header(&path).unwrap();
        assert_eq!(shape, v.shape);
        assert_eq!(spacing, v.spacing_mm);
    }

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vxmsk");
        let mut m = MaskVolume::zeros([3, 3, 2]);
        m.data[5] = 2;
        m.data[9] = 1;
        m.write(&path).unwrap();
        assert_eq!(MaskVolume::read(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vxmsk");
        let m = MaskVolume::zeros([2, 2, 2]);
        m.write(&path).unwrap();
        assert!(VolumeTensor::read(&path).is_err());
    }

    #[test]
    fn invalid_construction_rejected() {
        assert!(VolumeTensor::new([0, 2, 2], [1.0; 3], IntensityDomain::RawHu).is_err());
        assert!(VolumeTensor::new([2, 2, 2], [1.0, 0.0, 1.0], IntensityDomain::RawHu).is_err());
    }
}
