//! Error metrics, the saliency-style AUC, baselines, the evaluation report
//! and the leave-one-subject-out protocol.

mod angle;
mod auc;
mod baselines;
mod loso;
mod report;

pub use angle::{fit_angle_model, px_to_degrees, AngleModel, REFERENCE_TABLE};
pub use auc::{auc_full_grid, auc_score, mean_auc};
pub use baselines::{baseline_car_in_front, baseline_center, baseline_fixed, baseline_linreg, CarInFront, LinearFit};
pub use loso::{leave_one_subject_out, LosoFold, LosoReport};
pub use report::{embedding_separation, evaluate, evaluate_baselines, predict_samples, BaselineReport, EmbeddingSeparation, EvalOptions, EvalReport, MethodRow, REPORT_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazePoint;

/// Euclidean distance in pixels.
pub fn pixel_error(pred: &GazePoint, gt: &GazePoint) -> f64 {
    pred.distance(gt)
}

/// Mean, median and empirical CDF of a set of pixel errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// `(threshold, fraction of errors <= threshold)`, thresholds ascending.
    pub cdf: Vec<(f64, f64)>,
}

/// Thresholds `0, step, 2·step, ...` up to the first one covering `max`.
pub fn default_thresholds(max: f64, steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    if !(max > 0.0) {
        return vec![0.0];
    }
    let step = max / steps as f64;
    (0..=steps).map(|k| if k == steps { max } else { k as f64 * step }).collect()
}

/// Summarizes `errors` with the CDF evaluated at `thresholds`
/// (20 evenly spaced thresholds up to the max when `None`).
pub fn summarize_errors(errors: &[f64], thresholds: Option<&[f64]>) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("cannot summarize an empty error list".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::InvalidInput(format!("error values must be finite and non-negative, got {e}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let max = sorted[n - 1];
    let owned;
    let thresholds = match thresholds {
        Some(t) => {
            let mut t = t.to_vec();
            t.sort_by(f64::total_cmp);
            owned = t;
            &owned
        }
        None => {
            owned = default_thresholds(max, 20);
            &owned
        }
    };
    let cdf = thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / n as f64))
        .collect();
    Ok(ErrorSummary {
        count: n,
        mean,
        median,
        max,
        cdf,
    })
}
