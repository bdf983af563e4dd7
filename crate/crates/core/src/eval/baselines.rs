//! Non-learned reference predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};

/// Image center.
pub fn baseline_center(size: (f64, f64)) -> GazePoint {
    GazePoint::new(size.0 / 2.0, size.1 / 2.0)
}

/// Mean of the training gaze points.
pub fn baseline_fixed(train_gazes: &[GazePoint]) -> Result<GazePoint> {
    if train_gazes.is_empty() {
        return Err(Error::InvalidInput("fixed-point baseline needs training gazes".into()));
    }
    let n = train_gazes.len() as f64;
    let (sx, sy) = train_gazes.iter().fold((0.0, 0.0), |(x, y), g| (x + g.x, y + g.y));
    Ok(GazePoint::new(sx / n, sy / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarInFront {
    pub point: GazePoint,
    /// No car box was available and the image center was used.
    pub fallback: bool,
}

/// Center of the car box whose center is nearest the image center; the
/// image center itself when there is no box. Ties keep the earlier box.
pub fn baseline_car_in_front(car_boxes: &[BoundingBox], size: (f64, f64)) -> CarInFront {
    let center = baseline_center(size);
    let best = car_boxes
        .iter()
        .map(BoundingBox::center)
        .fold(None::<GazePoint>, |best, c| match best {
            Some(b) if b.distance_sq(&center) <= c.distance_sq(&center) => Some(b),
            _ => Some(c),
        });
    match best {
        Some(point) => CarInFront { point, fallback: false },
        None => CarInFront {
            point: center,
            fallback: true,
        },
    }
}

/// Affine least-squares map from features to gaze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub feature_mean: Vec<f64>,
    /// One weight row per output coordinate, on centered features.
    pub weights: [Vec<f64>; 2],
    pub intercept: [f64; 2],
    /// The centered design was rank deficient and a tiny ridge term was added.
    pub ridge_fallback: bool,
}

const RANK_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-9;

impl LinearFit {
    pub fn fit(train: &[(Vec<f64>, GazePoint)]) -> Result<Self> {
        let dim = train.first().map_or(0, |(f, _)| f.len());
        if train.len() < dim + 1 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "linear baseline needs at least {} rows of non-empty features, got {}",
                dim + 1,
                train.len()
            )));
        }
        if train.iter().any(|(f, g)| f.len() != dim || f.iter().any(|v| !v.is_finite()) || !g.is_finite()) {
            return Err(Error::InvalidInput("linear baseline rows must be finite with equal length".into()));
        }
        let n = train.len();
        let mut mean = vec![0.0; dim];
        for (f, _) in train {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let gaze_mean = [
            train.iter().map(|(_, g)| g.x).sum::<f64>() / n as f64,
            train.iter().map(|(_, g)| g.y).sum::<f64>() / n as f64,
        ];
        let x = DMatrix::from_fn(n, dim, |r, c| train[r].0[c] - mean[c]);
        let y = DMatrix::from_fn(n, 2, |r, c| {
            let g = train[r].1;
            [g.x, g.y][c] - gaze_mean[c]
        });
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let sv = xtx.clone().symmetric_eigenvalues();
        let top = sv.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let low = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let ridge_fallback = !(top > 0.0 && low > RANK_TOL * top);
        let w = if ridge_fallback {
            let lambda = RIDGE * top.max(1.0);
            let reg = xtx + DMatrix::identity(dim, dim) * lambda;
            reg.cholesky()
                .ok_or_else(|| Error::InvalidInput("ridge system is not positive definite".into()))?
                .solve(&xty)
        } else {
            x.svd(true, true)
                .solve(&y, 0.0)
                .map_err(|e| Error::InvalidInput(format!("least-squares solve failed: {e}")))?
        };
        let col = |c: usize| -> Vec<f64> { DVector::from(w.column(c)).iter().copied().collect() };
        Ok(Self {
            feature_mean: mean,
            weights: [col(0), col(1)],
            intercept: gaze_mean,
            ridge_fallback,
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<GazePoint> {
        if features.len() != self.feature_mean.len() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.feature_mean.len(),
                features.len()
            )));
        }
        let out = |k: usize| -> f64 {
            self.intercept[k]
                + self.weights[k]
                    .iter()
                    .zip(features.iter().zip(&self.feature_mean))
                    .map(|(w, (f, m))| w * (f - m))
                    .sum::<f64>()
        };
        Ok(GazePoint::new(out(0), out(1)))
    }
}

/// Fits on `train` and predicts for `test_features`.
pub fn baseline_linreg(train: &[(Vec<f64>, GazePoint)], test_features: &[f64]) -> Result<GazePoint> {
    LinearFit::fit(train)?.predict(test_features)
}
