use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 8;

/// Unit-norm calibration embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f32; EMBEDDING_DIM]", into = "[f32; EMBEDDING_DIM]")]
pub struct CalibrationEmbedding([f32; EMBEDDING_DIM]);

impl CalibrationEmbedding {
    /// Accepts values whose Euclidean norm is 1 within 1e-6.
    pub fn new(values: [f32; EMBEDDING_DIM]) -> Result<Self> {
        let norm = norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "calibration embedding must have unit norm, got {norm}"
            )));
        }
        Ok(Self(values))
    }

    /// Normalizes a raw network output, `v / (‖v‖ + 1e-12)`.
    pub fn from_raw(raw: &[f64; EMBEDDING_DIM]) -> Self {
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
        let mut out = [0.0f32; EMBEDDING_DIM];
        for (o, r) in out.iter_mut().zip(raw) {
            *o = (r / n) as f32;
        }
        Self(out)
    }

    pub fn values(&self) -> &[f32; EMBEDDING_DIM] {
        &self.0
    }

    pub fn to_f64(&self) -> [f64; EMBEDDING_DIM] {
        self.0.map(f64::from)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &CalibrationEmbedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn norm(v: &[f32; EMBEDDING_DIM]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

impl TryFrom<[f32; EMBEDDING_DIM]> for CalibrationEmbedding {
    type Error = Error;
    fn try_from(v: [f32; EMBEDDING_DIM]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CalibrationEmbedding> for [f32; EMBEDDING_DIM] {
    fn from(e: CalibrationEmbedding) -> Self {
        e.0
    }
}
