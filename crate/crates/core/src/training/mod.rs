//! Joint optimization of both network modules with Adam on the combined
//! distance + triplet objective, plus checkpointing and resumption.
//!
//! Every random choice in epoch `e` (batch order, triplets, dropout) comes
//! from a stream derived from `(rng_seed, e)`, so a run resumed from a
//! checkpoint continues exactly as an uninterrupted one would.

mod checkpoint;
mod sampler;

pub use checkpoint::{decode_f32, encode_f32, AdamRecord, Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use sampler::stratified_batches;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_samples, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};
use crate::losses::{sample_triplets, total_loss_with_grad, LossConfig};
use crate::model::{prepare_input, Dpen, Hooks, ModelConfig, PreparedInput};
use crate::nn::{Adam, AdamConfig, Ctx, Grads};
use crate::rng::{derive_seed, stream};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Write the last-epoch checkpoint every this many epochs.
    #[serde(default = "one")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// When false the triplet term is reported but not optimized.
    #[serde(default = "yes")]
    pub use_triplet_loss: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Desk-scale defaults: batch 64, 30 epochs, desk model preset.
    pub fn desk(rng_seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            rng_seed,
            checkpoint_every: 1,
            loss: LossConfig::default(),
            model: ModelConfig::desk(),
            use_triplet_loss: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("train.learning_rate must be finite and non-negative".into()));
        }
        if self.batch_size < 4 {
            return Err(Error::Config("train.batch_size must be at least 4".into()));
        }
        if self.epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("train.epochs and train.checkpoint_every must be positive".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_distance_loss: f64,
    pub mean_triplet_loss: f64,
    /// Mean pixel error of the training-mode predictions made during the epoch.
    pub train_pixel_error: f64,
    pub degenerate_batches: usize,
    pub skipped_anchor_fraction: f64,
}

/// Labeled samples resized once into network inputs.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<PreparedInput>,
    pub gaze: Vec<GazePoint>,
    pub sessions: Vec<String>,
    pub facial_roi: BoundingBox,
    /// Common scene width and height.
    pub output_size: (f64, f64),
}

impl TrainingSet {
    pub fn from_samples(samples: &[Sample], facial_roi: BoundingBox, side: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Training("training split has no samples".into()))?;
        let output_size = first.scene_size();
        let mut set = Self {
            inputs: Vec::with_capacity(samples.len()),
            gaze: Vec::with_capacity(samples.len()),
            sessions: Vec::with_capacity(samples.len()),
            facial_roi,
            output_size,
        };
        for s in samples {
            if s.scene_size() != output_size {
                return Err(Error::Training(format!(
                    "scene images differ in size: {:?} vs {output_size:?}",
                    s.scene_size()
                )));
            }
            let g = s.gaze.ok_or_else(|| {
                Error::Training(format!("sample in session {} has no gaze annotation", s.session_id))
            })?;
            set.inputs.push(prepare_input(s, &facial_roi, side)?);
            set.gaze.push(g);
            set.sessions.push(s.session_id.clone());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn session_count(&self) -> usize {
        let mut s: Vec<&str> = self.sessions.iter().map(String::as_str).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }
}

/// Optimization state over a fixed training set.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    set: &'a TrainingSet,
    net: Dpen,
    adam: Adam,
    grads: Grads,
    metrics: Vec<EpochMetrics>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, set: &'a TrainingSet) -> Result<Self> {
        cfg.validate()?;
        Self::check_set(set, &cfg)?;
        let net = Dpen::new(cfg.model.clone(), set.output_size, derive_seed(cfg.rng_seed, "init"))?;
        let adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), net.params());
        let grads = Grads::zeros_like(net.params());
        Ok(Self {
            cfg,
            set,
            net,
            adam,
            grads,
            metrics: Vec::new(),
        })
    }

    pub fn resume(checkpoint: &Checkpoint, set: &'a TrainingSet) -> Result<Self> {
        let cfg = checkpoint.train.clone();
        cfg.validate()?;
        Self::check_set(set, &cfg)?;
        if checkpoint.facial_roi != set.facial_roi {
            return Err(Error::Checkpoint("training set facial ROI differs from the checkpoint".into()));
        }
        let net = checkpoint.restore_model()?;
        let adam = checkpoint.restore_adam(net.params())?;
        let grads = Grads::zeros_like(net.params());
        if checkpoint.metrics.len() != checkpoint.epochs_done {
            return Err(Error::Checkpoint("metrics history does not match completed epochs".into()));
        }
        Ok(Self {
            cfg,
            set,
            net,
            adam,
            grads,
            metrics: checkpoint.metrics.clone(),
        })
    }

    fn check_set(set: &TrainingSet, cfg: &TrainConfig) -> Result<()> {
        if set.session_count() < 2 {
            return Err(Error::Training(
                "training split must contain at least two sessions (triplets need a negative session)".into(),
            ));
        }
        if set.inputs.iter().any(|p| p.side != cfg.model.input_side) {
            return Err(Error::Training("prepared inputs do not match model.input_side".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &Dpen {
        &self.net
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn epochs_done(&self) -> usize {
        self.metrics.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.net,
            &self.adam,
            self.set.facial_roi,
            &self.cfg,
            self.epochs_done(),
            &self.metrics,
        )
    }

    /// Runs one pass over the training set.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epochs_done() + 1;
        let mut rng = stream(self.cfg.rng_seed, &format!("epoch-{epoch}"));
        let sessions: Vec<&str> = self.set.sessions.iter().map(String::as_str).collect();
        let batches = stratified_batches(&sessions, self.cfg.batch_size, &mut rng)?;
        let weight = if self.cfg.use_triplet_loss { 1.0 } else { 0.0 };
        let (mut sum_dist, mut sum_trip, mut sum_err) = (0.0, 0.0, 0.0);
        let (mut degenerate, mut skipped, mut anchors) = (0usize, 0usize, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let positions: Vec<(usize, &str)> = batch.iter().enumerate().map(|(k, &i)| (k, sessions[i])).collect();
            let trip = sample_triplets(&positions, &mut rng);
            degenerate += usize::from(trip.degenerate);
            skipped += trip.skipped.len();
            anchors += batch.len();

            let refs: Vec<&PreparedInput> = batch.iter().map(|&i| &self.set.inputs[i]).collect();
            let mut ctx = Ctx::train(&mut rng);
            let (out, cache) = self.net.forward(&refs, &mut ctx, Hooks::default())?;
            let bn_updates = std::mem::take(&mut ctx.bn_updates);
            drop(ctx);

            let preds: Vec<GazePoint> = out.points.iter().map(|p| GazePoint::new(p[0], p[1])).collect();
            let gts: Vec<GazePoint> = batch.iter().map(|&i| self.set.gaze[i]).collect();
            let loss = total_loss_with_grad(&preds, &out.embeddings, &gts, &trip.triplets, &self.cfg.loss, weight)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: distance {}, triplet {}",
                    loss.mean_distance, loss.mean_triplet
                )));
            }
            self.grads.zero();
            self.net.backward(&cache, &loss.d_preds, &loss.d_embeddings, &mut self.grads)?;
            if !self.grads.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient at epoch {epoch}, batch {b} (loss {})",
                    loss.total
                )));
            }
            self.adam.update(self.net.params_mut(), &self.grads);
            self.net.params_mut().apply_bn_updates(bn_updates);

            let n = batch.len() as f64;
            sum_dist += loss.mean_distance * n;
            sum_trip += loss.mean_triplet * n;
            sum_err += preds.iter().zip(&gts).map(|(p, g)| p.distance(g)).sum::<f64>();
        }
        let total = self.set.len() as f64;
        let m = EpochMetrics {
            epoch,
            mean_distance_loss: sum_dist / total,
            mean_triplet_loss: sum_trip / total,
            train_pixel_error: sum_err / total,
            degenerate_batches: degenerate,
            skipped_anchor_fraction: skipped as f64 / anchors.max(1) as f64,
        };
        self.metrics.push(m.clone());
        Ok(m)
    }
}

/// Files produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    /// 1-based epoch with the lowest training pixel error.
    pub best_epoch: usize,
}

/// Loads the train split of `manifest` (paths relative to `base_dir`).
pub fn load_training_set(manifest: &DatasetManifest, base_dir: &Path, side: usize) -> Result<TrainingSet> {
    load_training_set_for(manifest, base_dir, &manifest.sessions_in(Split::Train), side)
}

/// Loads the given sessions as a training set.
pub fn load_training_set_for(
    manifest: &DatasetManifest,
    base_dir: &Path,
    sessions: &[String],
    side: usize,
) -> Result<TrainingSet> {
    if sessions.len() < 2 {
        return Err(Error::Training(format!(
            "training split has {} session(s); at least two are required",
            sessions.len()
        )));
    }
    let samples = load_samples(manifest, base_dir, Some(sessions))?;
    let labeled: Vec<Sample> = samples.into_iter().filter(|s| s.gaze.is_some()).collect();
    TrainingSet::from_samples(&labeled, manifest.facial_roi()?, side)
}

fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut text = String::new();
    for m in metrics {
        text.push_str(&serde_json::to_string(m)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(path, e))
}

/// Runs the trainer to `cfg.epochs`, writing checkpoints and the metrics log
/// into `out_dir`.
pub fn run_to_completion(mut trainer: Trainer<'_>, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_log = out_dir.join(METRICS_FILE);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    write_metrics(&metrics_log, trainer.metrics())?;
    let mut best = trainer
        .metrics()
        .iter()
        .min_by(|a, b| a.train_pixel_error.total_cmp(&b.train_pixel_error))
        .map(|m| (m.epoch, m.train_pixel_error));
    if trainer.epochs_done() > 0 && !best_path.exists() {
        trainer.checkpoint().save(&best_path)?;
    }
    let epochs = trainer.config().epochs;
    let every = trainer.config().checkpoint_every;
    while trainer.epochs_done() < epochs {
        let m = trainer.run_epoch()?;
        append_metrics(&metrics_log, &m)?;
        if best.is_none_or(|(_, e)| m.train_pixel_error < e) {
            best = Some((m.epoch, m.train_pixel_error));
            trainer.checkpoint().save(&best_path)?;
        }
        if m.epoch % every == 0 || m.epoch == epochs {
            trainer.checkpoint().save(&last_path)?;
        }
    }
    if !last_path.exists() {
        trainer.checkpoint().save(&last_path)?;
    }
    Ok(TrainOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        metrics_log,
        metrics: trainer.metrics().to_vec(),
        best_epoch: best.map_or(0, |(e, _)| e),
    })
}

/// Trains from scratch on the manifest's train split.
pub fn train(manifest: &DatasetManifest, base_dir: &Path, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let set = load_training_set(manifest, base_dir, cfg.model.input_side)?;
    run_to_completion(Trainer::new(cfg.clone(), &set)?, out_dir)
}

/// Continues a run from a checkpoint up to its configured epoch count.
pub fn resume(checkpoint: &Checkpoint, manifest: &DatasetManifest, base_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let set = load_training_set(manifest, base_dir, checkpoint.model.input_side)?;
    run_to_completion(Trainer::resume(checkpoint, &set)?, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: 6,
            epochs: 3,
            rng_seed: 5,
            checkpoint_every: 1,
            loss: LossConfig::default(),
            model: ModelConfig {
                input_side: 8,
                backbone_width: 4,
                backbone_depth: 2,
                blocks_per_stage: 1,
                stem_kernel: 3,
                stem_stride: 1,
                stem_pool: false,
                head_hidden: 8,
                dropout_rate: 0.5,
                ..ModelConfig::desk()
            },
            use_triplet_loss: true,
        }
    }

    fn random_set(sessions: usize, per: usize) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plane = 64;
        let mut set = TrainingSet {
            inputs: vec![],
            gaze: vec![],
            sessions: vec![],
            facial_roi: BoundingBox::new(0.0, 0.0, 8.0, 8.0).unwrap(),
            output_size: (32.0, 32.0),
        };
        for s in 0..sessions {
            for _ in 0..per {
                set.inputs.push(PreparedInput {
                    side: 8,
                    calib: (0..6 * plane).map(|_| rng.random()).collect(),
                    images: (0..12 * plane).map(|_| rng.random()).collect(),
                });
                set.gaze.push(GazePoint::new(rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)));
                set.sessions.push(format!("s{s}"));
            }
        }
        set
    }

    #[test]
    fn single_session_split_is_rejected() {
        let set = random_set(1, 8);
        assert!(matches!(Trainer::new(tiny_cfg(1e-3), &set), Err(Error::Training(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let set = random_set(2, 6);
        let mut t = Trainer::new(tiny_cfg(0.0), &set).unwrap();
        let before = t.checkpoint();
        t.run_epoch().unwrap();
        t.run_epoch().unwrap();
        let after = t.checkpoint();
        for (a, b) in before.tensors.iter().zip(&after.tensors) {
            if a.kind == crate::nn::ParamKind::Weight {
                assert_eq!(a.data, b.data, "{}", a.name);
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let set = random_set(3, 5);
        let mut full = Trainer::new(tiny_cfg(1e-3), &set).unwrap();
        let m1 = full.run_epoch().unwrap();
        let ck = full.checkpoint();
        let m2 = full.run_epoch().unwrap();

        let text = serde_json::to_string(&ck).unwrap();
        let restored = Checkpoint::parse(&text).unwrap();
        assert_eq!(restored, ck);
        let mut resumed = Trainer::resume(&restored, &set).unwrap();
        assert_eq!(resumed.metrics(), &[m1]);
        let r2 = resumed.run_epoch().unwrap();
        assert_eq!(r2, m2);
        assert_eq!(resumed.checkpoint(), full.checkpoint());
    }

    #[test]
    fn checkpoint_round_trip_restores_parameters_bit_exactly() {
        let set = random_set(2, 6);
        let mut t = Trainer::new(tiny_cfg(1e-3), &set).unwrap();
        t.run_epoch().unwrap();
        let ck = t.checkpoint();
        let net = ck.restore_model().unwrap();
        assert_eq!(net.params(), t.net().params());
    }

    #[test]
    fn run_writes_metrics_and_checkpoints() {
        let set = random_set(2, 6);
        let dir = tempfile::tempdir().unwrap();
        let out = run_to_completion(Trainer::new(tiny_cfg(1e-3), &set).unwrap(), dir.path()).unwrap();
        let log = std::fs::read_to_string(&out.metrics_log).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(out.best_checkpoint.exists() && out.last_checkpoint.exists());
        let last = Checkpoint::load(&out.last_checkpoint).unwrap();
        assert_eq!(last.epochs_done, 3);
    }
}
