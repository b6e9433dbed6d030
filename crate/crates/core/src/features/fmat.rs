//! `FMAT` feature-matrix files (little-endian):
//!
//! ```text
//! "FMAT" | version u32 | rows u32 | cols u32 | frame_rate f32 | rows·cols f32 (row-major)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Matrix;

pub const FMAT_MAGIC: [u8; 4] = *b"FMAT";
pub const FMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
/// Largest payload accepted, in elements.
const MAX_ELEMENTS: u64 = 1 << 30;

/// An `F×T` matrix as stored on disk, with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f32>,
    pub frame_rate: f32,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f32>, frame_rate: f32) -> Self {
        Self { values, frame_rate }
    }

    /// Round to single precision for storage.
    pub fn from_f64(m: &Matrix, frame_rate: f64) -> Self {
        Self {
            values: m.mapv(|v| v as f32),
            frame_rate: frame_rate as f32,
        }
    }

    pub fn to_f64(&self) -> Matrix {
        self.values.mapv(f64::from)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(&FMAT_MAGIC);
        out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |field: &'static str, message: String| Error::Format { field, message };
        if bytes.len() < HEADER_LEN {
            return Err(err(
                "header",
                format!("{} bytes, need {HEADER_LEN}", bytes.len()),
            ));
        }
        if bytes[0..4] != FMAT_MAGIC {
            return Err(err(
                "magic",
                format!("expected FMAT, found {:?}", &bytes[0..4]),
            ));
        }
        let word =
            |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let version = word(4);
        if version != FMAT_VERSION {
            return Err(err("version", format!("unsupported version {version}")));
        }
        let rows = word(8) as u64;
        let cols = word(12) as u64;
        let frame_rate = f32::from_le_bytes([bytes[16], bytes[17], bytes[18], bytes[19]]);
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(err(
                "frame_rate",
                format!("{frame_rate} is not a positive rate"),
            ));
        }
        let elements = rows * cols;
        if elements > MAX_ELEMENTS {
            return Err(err("dims", format!("{rows}x{cols} exceeds the size limit")));
        }
        let expected = HEADER_LEN as u64 + 4 * elements;
        let got = bytes.len() as u64;
        if got < expected {
            return Err(err(
                "payload",
                format!("truncated: {rows}x{cols} needs {expected} bytes, file has {got}"),
            ));
        }
        if got > expected {
            return Err(err(
                "payload",
                format!(
                    "{} trailing bytes after {rows}x{cols} payload",
                    got - expected
                ),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let values =
            Array2::from_shape_vec((rows as usize, cols as usize), data).expect("length checked");
        Ok(Self { values, frame_rate })
    }
}

pub fn store_feature_matrix(m: &FeatureMatrix, path: &Path) -> Result<()> {
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}
