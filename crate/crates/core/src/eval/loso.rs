//! Leave-one-subject-out: one model per test subject, trained without any
//! of that subject's sessions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::predict_samples;
use super::{summarize_errors, ErrorSummary};
use crate::data::{load_samples, DatasetManifest, Sample, Split};
use crate::error::Result;
use crate::geometry::GazePoint;
use crate::model::Dpen;
use crate::training::{load_training_set_for, run_to_completion, Checkpoint, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosoFold {
    pub subject: String,
    /// Sessions the fold's model was trained on.
    pub train_sessions: Vec<String>,
    /// The held-out subject's test sessions.
    pub test_sessions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loso: Option<ErrorSummary>,
    /// The reference model on the same test sessions, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<ErrorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosoReport {
    pub folds: Vec<LosoFold>,
}

fn errors_on(net: &Dpen, samples: &[Sample], ck: &Checkpoint) -> Result<ErrorSummary> {
    let preds = predict_samples(net, samples, &ck.facial_roi, 64)?;
    let errors: Vec<f64> = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| p.point.distance(&s.gaze.unwrap_or(GazePoint::new(f64::NAN, f64::NAN))))
        .collect();
    summarize_errors(&errors, None)
}

/// Trains one model per subject with test sessions, each into
/// `out_dir/<subject>/`, and evaluates it on that subject's test sessions.
/// `full`, when given, is evaluated on the same sessions for comparison.
pub fn leave_one_subject_out(
    manifest: &DatasetManifest,
    base_dir: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
    full: Option<&Checkpoint>,
) -> Result<LosoReport> {
    cfg.validate()?;
    let train_all = manifest.sessions_in(Split::Train);
    let test_all = manifest.sessions_in(Split::Test);
    let full_net = full.map(Checkpoint::restore_model).transpose()?;
    let mut folds = Vec::new();
    for subject in manifest.subjects() {
        let own: Vec<&str> = manifest
            .sessions
            .iter()
            .filter(|s| s.subject_id == subject)
            .map(|s| s.session_id.as_str())
            .collect();
        let test_sessions: Vec<String> = test_all.iter().filter(|s| own.contains(&s.as_str())).cloned().collect();
        if test_sessions.is_empty() {
            continue;
        }
        let train_sessions: Vec<String> = train_all.iter().filter(|s| !own.contains(&s.as_str())).cloned().collect();
        let mut fold = LosoFold {
            subject: subject.clone(),
            train_sessions,
            test_sessions,
            loso: None,
            full: None,
            skipped: None,
        };
        if fold.train_sessions.len() < 2 {
            fold.skipped = Some(format!(
                "only {} training session(s) remain without this subject",
                fold.train_sessions.len()
            ));
            folds.push(fold);
            continue;
        }
        let set = load_training_set_for(manifest, base_dir, &fold.train_sessions, cfg.model.input_side)?;
        let outcome = run_to_completion(Trainer::new(cfg.clone(), &set)?, &out_dir.join(&subject))?;
        let ck = Checkpoint::load(&outcome.best_checkpoint)?;
        let net = ck.restore_model()?;
        let test: Vec<Sample> = load_samples(manifest, base_dir, Some(&fold.test_sessions))?
            .into_iter()
            .filter(|s| s.gaze.is_some())
            .collect();
        if test.is_empty() {
            fold.skipped = Some("held-out sessions have no labeled samples".into());
            folds.push(fold);
            continue;
        }
        fold.loso = Some(errors_on(&net, &test, &ck)?);
        if let (Some(f), Some(fck)) = (&full_net, full) {
            fold.full = Some(errors_on(f, &test, fck)?);
        }
        folds.push(fold);
    }
    Ok(LosoReport { folds })
}
