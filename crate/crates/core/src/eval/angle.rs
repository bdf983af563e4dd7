//! Linear pixel-to-eye-angle conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Published `(pixel error, eye angle in degrees)` pairs for a 1280×720
/// scene camera; they pin the conversion factor for that camera.
pub const REFERENCE_TABLE: [(f64, f64); 12] = [
    (159.95, 15.87),
    (140.78, 13.97),
    (124.00, 12.30),
    (151.82, 15.06),
    (155.31, 15.41),
    (198.44, 19.69),
    (154.53, 15.33),
    (184.84, 18.34),
    (70.24, 6.97),
    (29.69, 2.95),
    (121.19, 12.02),
    (48.59, 4.82),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleModel {
    pub deg_per_px: f64,
}

impl AngleModel {
    pub fn new(deg_per_px: f64) -> Result<Self> {
        if !(deg_per_px.is_finite() && deg_per_px > 0.0) {
            return Err(Error::InvalidInput(format!("deg_per_px must be positive, got {deg_per_px}")));
        }
        Ok(Self { deg_per_px })
    }

    /// The fit over [`REFERENCE_TABLE`].
    pub fn reference() -> Self {
        fit_angle_model(&REFERENCE_TABLE).expect("reference table is well formed")
    }

    /// The same angular resolution transferred to a scene `width` pixels
    /// wide (the reference camera is 1280 wide).
    pub fn for_width(width: f64) -> Result<Self> {
        Self::new(Self::reference().deg_per_px * 1280.0 / width)
    }
}

pub fn px_to_degrees(err: f64, m: &AngleModel) -> f64 {
    err * m.deg_per_px
}

/// Least-squares slope through the origin.
pub fn fit_angle_model(pairs: &[(f64, f64)]) -> Result<AngleModel> {
    if pairs.iter().any(|(p, d)| !p.is_finite() || !d.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput("angle pairs must be finite with non-negative pixels".into()));
    }
    let sxx: f64 = pairs.iter().map(|(p, _)| p * p).sum();
    let sxy: f64 = pairs.iter().map(|(p, d)| p * d).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidInput("angle fit needs at least one pair with positive pixels".into()));
    }
    AngleModel::new(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_fit_matches_every_row() {
        let m = AngleModel::reference();
        assert!((m.deg_per_px - 0.0992).abs() < 1e-3);
        for (p, d) in REFERENCE_TABLE {
            assert!((px_to_degrees(p, &m) - d).abs() < 0.05, "{p} -> {d}");
        }
        assert!((px_to_degrees(29.69, &m) - 2.95).abs() < 0.05);
        assert!((px_to_degrees(159.95, &m) - 15.87).abs() < 0.05);
        assert_eq!(px_to_degrees(0.0, &m), 0.0);
    }

    #[test]
    fn small_fits() {
        assert!((fit_angle_model(&[(100.0, 9.92)]).unwrap().deg_per_px - 0.0992).abs() < 1e-15);
        assert_eq!(fit_angle_model(&[(1.0, 1.0)]).unwrap().deg_per_px, 1.0);
        assert!(fit_angle_model(&[(0.0, 1.0)]).is_err());
        assert!(fit_angle_model(&[]).is_err());
    }

    proptest! {
        #[test]
        fn conversion_is_additive(a in 0.0f64..1e3, b in 0.0f64..1e3) {
            // Power-of-two slope keeps the products exact.
            let m = AngleModel::new(0.125).unwrap();
            prop_assert_eq!(px_to_degrees(a + b, &m), px_to_degrees(a, &m) + px_to_degrees(b, &m));
            let r = AngleModel::reference();
            prop_assert!((px_to_degrees(a + b, &r) - px_to_degrees(a, &r) - px_to_degrees(b, &r)).abs() < 1e-12);
        }
    }
}
