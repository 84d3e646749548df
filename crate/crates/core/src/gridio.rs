//! Flat little-endian float32 grids and PNG export.
//!
//! Grid layout: 16-byte header `{magic: b"SPLG", height: u32, width: u32,
//! channels: u32}` followed by `height·width·channels` f32 values in
//! row-major, channel-interleaved order.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::render::{ColorImage, RenderBuffers};

pub const GRID_MAGIC: [u8; 4] = *b"SPLG";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a float grid (bad magic)")]
    BadMagic,
    #[error("grid payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("grid shape {0}x{1}x{2} does not match {3} values")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("png encoding failed: {0}")]
    Png(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatGrid {
    pub fn from_f64(
        height: usize,
        width: usize,
        channels: usize,
        values: &[f64],
    ) -> Result<Self, GridError> {
        if values.len() != height * width * channels {
            return Err(GridError::ShapeMismatch(height, width, channels, values.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: values.iter().map(|v| *v as f32).collect(),
        })
    }

    /// A single-row vector, used for per-Gaussian quantities.
    pub fn vector(values: &[f64]) -> Self {
        Self::from_f64(1, values.len(), 1, values).expect("shape matches by construction")
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(&GRID_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() < 16 {
            return Err(GridError::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        if bytes[0..4] != GRID_MAGIC {
            return Err(GridError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (word(4), word(8), word(12));
        let count = height * width * channels;
        let expected = 16 + 4 * count;
        if bytes.len() != expected {
            return Err(GridError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), GridError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, GridError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

/// Rounds every value through f32, matching what a grid cache stores.
pub fn quantize_f32(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| f64::from(*v as f32)).collect()
}

pub fn depth_grid(buffers: &RenderBuffers) -> FloatGrid {
    FloatGrid::from_f64(buffers.height, buffers.width, 1, &buffers.depth).expect("buffer shape")
}

pub fn uncertainty_grid(buffers: &RenderBuffers) -> FloatGrid {
    FloatGrid::from_f64(buffers.height, buffers.width, 1, &buffers.uncertainty)
        .expect("buffer shape")
}

pub fn write_png(image: &ColorImage, path: &Path) -> Result<(), GridError> {
    let mut img = image::RgbImage::new(image.width as u32, image.height as u32);
    for (i, px) in image.data.iter().enumerate() {
        let x = (i % image.width) as u32;
        let y = (i / image.width) as u32;
        let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.put_pixel(x, y, image::Rgb([to8(px[0]), to8(px[1]), to8(px[2])]));
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| GridError::Png(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let g = FloatGrid::from_f64(2, 3, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = g.encode();
        assert_eq!(&bytes[0..4], b"SPLG");
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn malformed_grids_are_rejected() {
        assert!(matches!(FloatGrid::decode(b"SPL"), Err(GridError::Truncated { .. })));
        let mut bytes = FloatGrid::vector(&[1.0, 2.0]).encode();
        bytes[0] = b'X';
        assert!(matches!(FloatGrid::decode(&bytes), Err(GridError::BadMagic)));
        let bytes = FloatGrid::vector(&[1.0, 2.0]).encode();
        assert!(matches!(
            FloatGrid::decode(&bytes[..bytes.len() - 1]),
            Err(GridError::Truncated { .. })
        ));
    }

    #[test]
    fn png_export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        write_png(&ColorImage::filled(4, 3, [0.2, 0.5, 1.0]), &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (4, 3));
        assert_eq!(back.get_pixel(1, 1).0, [51, 128, 255]);
    }

    proptest! {
        #[test]
        fn grid_round_trip_preserves_f32(values in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let g = FloatGrid::vector(&values);
            let back = FloatGrid::decode(&g.encode()).unwrap();
            prop_assert_eq!(back.to_f64(), quantize_f32(&values));
        }
    }
}
