//! Test-split evaluation of a trained model against the baselines.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    baseline_car_in_front, baseline_center, baseline_fixed, mean_auc, px_to_degrees, summarize_errors, AngleModel,
    ErrorSummary, LinearFit,
};
use crate::data::{load_samples, DatasetManifest, Landmarks, Sample, Split};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};
use crate::model::{prepare_input, CalibrationEmbedding, Dpen};
use crate::rng::stream;
use crate::training::Checkpoint;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Negatives per sample for the AUC.
    pub auc_negatives: usize,
    pub rng_seed: u64,
    /// Bootstrap resamples for the embedding-separation interval.
    pub bootstrap: usize,
    /// Inference chunk size.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            auc_negatives: 1000,
            rng_seed: 0,
            bootstrap: 1000,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodRow {
    pub method: String,
    pub mean_px: f64,
    pub median_px: f64,
    pub mean_deg: f64,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Intra- versus inter-session distances between calibration embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSeparation {
    pub intra_mean: f64,
    pub inter_mean: f64,
    /// `inter_mean - intra_mean`.
    pub gap: f64,
    /// Percentile bootstrap interval (2.5%, 97.5%) of the gap.
    pub gap_ci: [f64; 2],
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub test_sessions: Vec<String>,
    pub samples: usize,
    /// Test samples without a gaze annotation.
    pub unlabeled: usize,
    pub scene_size: [f64; 2],
    pub deg_per_px: f64,
    pub methods: Vec<MethodRow>,
    pub dpen: ErrorSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSeparation>,
    /// Per-sample model errors in test order (kept for plotting).
    #[serde(skip)]
    pub dpen_errors: Vec<f64>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

const MAX_PAIRS: usize = 20_000;

/// Compares mean intra-session and inter-session embedding distances, with
/// a bootstrap interval for the gap. At most 20k pairs of each kind are
/// drawn (all of them when fewer exist).
pub fn embedding_separation<R: Rng + ?Sized>(
    embeddings: &[CalibrationEmbedding],
    sessions: &[String],
    bootstrap: usize,
    rng: &mut R,
) -> Result<EmbeddingSeparation> {
    if embeddings.len() != sessions.len() {
        return Err(Error::InvalidInput("embeddings and sessions must align".into()));
    }
    let n = embeddings.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    let mut push = |i: usize, j: usize| {
        let d = embeddings[i].distance(&embeddings[j]);
        if sessions[i] == sessions[j] {
            intra.push(d);
        } else {
            inter.push(d);
        }
    };
    if total_pairs <= 2 * MAX_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                push(i, j);
            }
        }
    } else {
        for _ in 0..2 * MAX_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            push(i, j);
        }
    }
    if intra.is_empty() || inter.is_empty() {
        return Err(Error::InvalidInput(
            "embedding separation needs at least two sessions with two samples".into(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mi, mx) = (mean(&intra), mean(&inter));
    let mut gaps: Vec<f64> = (0..bootstrap.max(1))
        .map(|_| {
            let a = (0..intra.len()).map(|_| intra[rng.random_range(0..intra.len())]).sum::<f64>();
            let b = (0..inter.len()).map(|_| inter[rng.random_range(0..inter.len())]).sum::<f64>();
            b / inter.len() as f64 - a / intra.len() as f64
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    let pick = |q: f64| gaps[((q * gaps.len() as f64).floor() as usize).min(gaps.len() - 1)];
    Ok(EmbeddingSeparation {
        intra_mean: mi,
        inter_mean: mx,
        gap: mx - mi,
        gap_ci: [pick(0.025), pick(0.975)],
        intra_pairs: intra.len(),
        inter_pairs: inter.len(),
    })
}

fn labeled_train_rows(manifest: &DatasetManifest) -> Result<Vec<(Vec<f64>, GazePoint)>> {
    let train = manifest.sessions_in(Split::Train);
    let mut rows = Vec::new();
    for s in manifest.sessions.iter().filter(|s| train.contains(&s.session_id)) {
        for rec in &s.samples {
            if let Some(g) = rec.gaze {
                let lm = Landmarks::new(rec.landmarks.clone(), manifest.landmark_layout.clone())?;
                rows.push((lm.eye_features(), g));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("train split has no labeled samples".into()));
    }
    Ok(rows)
}

/// Runs `net` over `samples` in order.
pub fn predict_samples(
    net: &Dpen,
    samples: &[Sample],
    roi: &BoundingBox,
    batch_size: usize,
) -> Result<Vec<crate::model::GazePrediction>> {
    let inputs = samples
        .iter()
        .map(|s| prepare_input(s, roi, net.config().input_side))
        .collect::<Result<Vec<_>>>()?;
    net.predict_prepared(&inputs, batch_size.max(1))
}

fn row(
    method: &str,
    preds: &[GazePoint],
    gts: &[GazePoint],
    size: (f64, f64),
    angle: &AngleModel,
    opts: &EvalOptions,
    note: Option<String>,
) -> Result<(MethodRow, ErrorSummary, Vec<f64>)> {
    let errors: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| p.distance(g)).collect();
    let summary = summarize_errors(&errors, None)?;
    let mut rng = stream(opts.rng_seed, &format!("auc-{method}"));
    let auc = mean_auc(preds, gts, size, opts.auc_negatives, &mut rng)?;
    Ok((
        MethodRow {
            method: method.to_string(),
            mean_px: summary.mean,
            median_px: summary.median,
            mean_deg: px_to_degrees(summary.mean, angle),
            auc,
            note,
        },
        summary,
        errors,
    ))
}

struct TestSplit {
    sessions: Vec<String>,
    samples: Vec<Sample>,
    gts: Vec<GazePoint>,
    unlabeled: usize,
    size: (f64, f64),
    angle: AngleModel,
}

fn load_test_split(manifest: &DatasetManifest, base_dir: &Path) -> Result<TestSplit> {
    let sessions = manifest.sessions_in(Split::Test);
    if sessions.is_empty() {
        return Err(Error::InvalidInput("manifest has no test sessions".into()));
    }
    let all = load_samples(manifest, base_dir, Some(&sessions))?;
    let unlabeled = all.iter().filter(|s| s.gaze.is_none()).count();
    let samples: Vec<Sample> = all.into_iter().filter(|s| s.gaze.is_some()).collect();
    if samples.is_empty() {
        return Err(Error::InvalidInput("test split has no labeled samples".into()));
    }
    let size = samples[0].scene_size();
    if samples.iter().any(|s| s.scene_size() != size) {
        return Err(Error::InvalidInput("test scene images differ in size".into()));
    }
    let gts = samples.iter().map(|s| s.gaze.expect("filtered")).collect();
    let angle = AngleModel::for_width(size.0)?;
    Ok(TestSplit {
        sessions,
        samples,
        gts,
        unlabeled,
        size,
        angle,
    })
}

/// Rows for `center`, `fixed`, `linear` and `car_in_front`; the fitted
/// baselines use the train split.
fn baseline_rows(manifest: &DatasetManifest, t: &TestSplit, opts: &EvalOptions) -> Result<Vec<MethodRow>> {
    let (gts, size, angle) = (&t.gts, t.size, &t.angle);
    let mut methods = Vec::new();
    let center = vec![baseline_center(size); gts.len()];
    methods.push(row("center", &center, gts, size, angle, opts, None)?.0);

    let rows = labeled_train_rows(manifest)?;
    let fixed_pt = baseline_fixed(&rows.iter().map(|(_, g)| *g).collect::<Vec<_>>())?;
    methods.push(row("fixed", &vec![fixed_pt; gts.len()], gts, size, angle, opts, None)?.0);

    let fit = LinearFit::fit(&rows)?;
    let linear = t
        .samples
        .iter()
        .map(|s| fit.predict(&s.landmarks.eye_features()))
        .collect::<Result<Vec<_>>>()?;
    let note = fit.ridge_fallback.then(|| "rank-deficient design; ridge fallback".to_string());
    methods.push(row("linear", &linear, gts, size, angle, opts, note)?.0);

    let cars: Vec<_> = t
        .samples
        .iter()
        .map(|s| baseline_car_in_front(&s.boxes_of_class("car").collect::<Vec<_>>(), size))
        .collect();
    let fallbacks = cars.iter().filter(|c| c.fallback).count();
    let note = (fallbacks > 0).then(|| format!("{fallbacks} sample(s) without car boxes used the image center"));
    let car_pts: Vec<GazePoint> = cars.iter().map(|c| c.point).collect();
    methods.push(row("car_in_front", &car_pts, gts, size, angle, opts, note)?.0);
    Ok(methods)
}

/// Baseline-only comparison on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineReport {
    pub test_sessions: Vec<String>,
    pub samples: usize,
    pub unlabeled: usize,
    pub scene_size: [f64; 2],
    pub deg_per_px: f64,
    pub methods: Vec<MethodRow>,
}

impl BaselineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Evaluates the baselines alone, without a trained model.
pub fn evaluate_baselines(manifest: &DatasetManifest, base_dir: &Path, opts: &EvalOptions) -> Result<BaselineReport> {
    let t = load_test_split(manifest, base_dir)?;
    Ok(BaselineReport {
        methods: baseline_rows(manifest, &t, opts)?,
        samples: t.samples.len(),
        unlabeled: t.unlabeled,
        scene_size: [t.size.0, t.size.1],
        deg_per_px: t.angle.deg_per_px,
        test_sessions: t.sessions,
    })
}

/// Evaluates the checkpoint and every baseline on the manifest's test split.
///
/// Method names in the report: `dpen`, `center`, `fixed`, `linear`,
/// `car_in_front`. Baselines are fitted on the train split.
pub fn evaluate(
    manifest: &DatasetManifest,
    base_dir: &Path,
    checkpoint: &Checkpoint,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let net = checkpoint.restore_model()?;
    let t = load_test_split(manifest, base_dir)?;
    let preds = predict_samples(&net, &t.samples, &checkpoint.facial_roi, opts.batch_size)?;
    let points: Vec<GazePoint> = preds.iter().map(|p| p.point).collect();
    let (dpen_row, dpen, dpen_errors) = row("dpen", &points, &t.gts, t.size, &t.angle, opts, None)?;
    let mut methods = vec![dpen_row];
    methods.extend(baseline_rows(manifest, &t, opts)?);

    let embeddings: Vec<CalibrationEmbedding> = preds.iter().map(|p| p.embedding).collect();
    let sessions: Vec<String> = t.samples.iter().map(|s| s.session_id.clone()).collect();
    let mut rng = stream(opts.rng_seed, "embedding-bootstrap");
    let embedding = embedding_separation(&embeddings, &sessions, opts.bootstrap, &mut rng).ok();

    Ok(EvalReport {
        samples: t.samples.len(),
        unlabeled: t.unlabeled,
        scene_size: [t.size.0, t.size.1],
        deg_per_px: t.angle.deg_per_px,
        test_sessions: t.sessions,
        methods,
        dpen,
        embedding,
        dpen_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(i: usize) -> CalibrationEmbedding {
        let mut v = [0.0f64; 8];
        v[i] = 1.0;
        CalibrationEmbedding::from_raw(&v)
    }

    #[test]
    fn clustered_embeddings_separate() {
        let e: Vec<_> = (0..20).map(|i| unit(i % 2)).collect();
        let s: Vec<String> = (0..20).map(|i| format!("s{}", i % 2)).collect();
        let sep = embedding_separation(&e, &s, 200, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(sep.intra_mean < 1e-12);
        assert!((sep.inter_mean - 2f64.sqrt()).abs() < 1e-6);
        assert!(sep.gap_ci[0] > 0.0);
        assert_eq!(sep.intra_pairs + sep.inter_pairs, 190);
    }

    #[test]
    fn single_session_has_no_separation() {
        let e: Vec<_> = (0..4).map(|_| unit(0)).collect();
        let s = vec!["a".to_string(); 4];
        assert!(embedding_separation(&e, &s, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
