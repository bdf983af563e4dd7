//! Procedural two-camera world with known per-session camera geometry.
//!
//! Each session draws a [`SessionCameraConfig`] that fixes how a gaze
//! direction `g ∈ [−1,1]²` lands in the scene image. The face image shows
//! pupils displaced by `eye_gain·g` and a cabin structure posed by the same
//! session transform; the scene image holds look-alike disks, one of which
//! sits exactly on the gaze point.

mod render;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    split_sessions, save_manifest, DatasetManifest, LandmarkLayout, SampleRecord, SessionRecord,
    TaggedBox,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};
use crate::image::{Image, LabelMap};
use crate::rng::stream;

use render::{Canvas, Rgb};

/// Scene object classes, in label-map order after background (label 0).
pub const SCENE_CLASSES: [&str; 3] = ["car", "pedestrian", "sign"];
const CLASS_COLORS: [Rgb; 3] = [[0.85, 0.2, 0.15], [0.2, 0.35, 0.9], [0.95, 0.85, 0.1]];
pub const FACE_CLASS: &str = "face";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLASSES_FILE: &str = "classes.txt";
pub const LATENTS_DIR: &str = "latents";

/// Latent driver/camera placement of one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionCameraConfig {
    /// In-plane rotation of the gaze-to-scene mapping, degrees.
    pub rotation_deg: f64,
    /// Gaze-to-scene gain as a fraction of the image side.
    pub scale: f64,
    /// Shift of the mapping origin from the image center, pixels.
    pub offset: [f64; 2],
    /// Pupil displacement (and face size) multiplier.
    pub eye_gain: f64,
}

impl SessionCameraConfig {
    pub fn identity(scale: f64) -> Self {
        Self {
            rotation_deg: 0.0,
            scale,
            offset: [0.0, 0.0],
            eye_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scale.is_finite()
            && self.scale > 0.0
            && self.rotation_deg.abs() <= 45.0
            && self.offset.iter().all(|v| v.is_finite())
            && self.eye_gain.is_finite()
            && self.eye_gain > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!("invalid session camera config {self:?}")))
        }
    }

    /// `A·v` for the linear part `A = scale·side·R(rotation)`.
    fn linear(&self, v: [f64; 2], side: usize) -> [f64; 2] {
        let (s, c) = (self.rotation_deg * PI / 180.0).sin_cos();
        let k = self.scale * side as f64;
        [k * (c * v[0] - s * v[1]), k * (s * v[0] + c * v[1])]
    }

    /// Errors unless every `g ∈ [−1,1]²` maps inside the image.
    pub fn check_in_frame(&self, side: usize) -> Result<()> {
        self.validate()?;
        let s = side as f64;
        for g in [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]] {
            let p = oracle_gaze(g, self, side);
            if !p.in_frame(s, s) {
                return Err(Error::Geometry(format!(
                    "config {self:?} maps gaze direction {g:?} to {p:?}, outside the {side}px frame"
                )));
            }
        }
        Ok(())
    }
}

/// `p = center + offset + scale·side·R(rotation)·g`.
pub fn oracle_gaze(g: [f64; 2], config: &SessionCameraConfig, side: usize) -> GazePoint {
    let c = side as f64 / 2.0;
    let a = config.linear(g, side);
    GazePoint::new(c + config.offset[0] + a[0], c + config.offset[1] + a[1])
}

/// Ranges from which session configs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigRanges {
    pub max_rotation_deg: f64,
    pub scale: [f64; 2],
    /// Maximum |offset| per axis as a fraction of the image side.
    pub max_offset: f64,
    pub eye_gain: [f64; 2],
}

impl Default for ConfigRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            scale: [0.18, 0.28],
            max_offset: 0.08,
            eye_gain: [0.85, 1.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub image_side: usize,
    pub n_sessions: usize,
    pub samples_per_session: usize,
    pub n_distractors: usize,
    pub noise_sigma: f64,
    /// Per-sample deviation (gaze-direction units) between where the eyes
    /// appear to point and the fixated target.
    #[serde(default)]
    pub eye_noise: f64,
    /// Scene object radius range as fractions of the image side. Every disk
    /// in one scene shares a radius set by that sample's depth: near scenes
    /// have large disks.
    #[serde(default = "default_object_radius")]
    pub object_radius: [f64; 2],
    /// Horizontal shift (gaze-direction units) between where the eyes point
    /// and the fixated scene point, from nearest to farthest depth. The
    /// shift is centered so the mean depth has none; only the scene reveals
    /// the depth that resolves it.
    #[serde(default)]
    pub parallax: f64,
    /// Draws a seat panel over every place a face can appear, so the cabin
    /// is visible only around the head and never inside a face crop.
    #[serde(default)]
    pub headrest: bool,
    #[serde(default)]
    pub rng_seed: u64,
    /// Consecutive sessions share a subject id in groups of this size.
    #[serde(default = "default_sessions_per_subject")]
    pub sessions_per_subject: usize,
    #[serde(default)]
    pub ranges: ConfigRanges,
}

fn default_object_radius() -> [f64; 2] {
    [0.04, 0.06]
}

fn default_sessions_per_subject() -> usize {
    3
}

impl WorldConfig {
    /// Six sessions of 500 samples at 64×64, two subjects of three sessions.
    pub fn desk(rng_seed: u64) -> Self {
        Self {
            image_side: 64,
            n_sessions: 6,
            samples_per_session: 500,
            n_distractors: 1,
            noise_sigma: 0.02,
            eye_noise: 0.12,
            object_radius: [0.06, 0.08],
            parallax: 0.0,
            headrest: true,
            rng_seed,
            sessions_per_subject: 3,
            ranges: ConfigRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 || self.samples_per_session == 0 || self.n_distractors == 0 || self.sessions_per_subject == 0 {
            return Err(Error::Config("world counts must be at least 1".into()));
        }
        if self.image_side < 32 {
            return Err(Error::Config(format!(
                "world.image_side must be at least 32, got {}",
                self.image_side
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("world.noise_sigma must be non-negative".into()));
        }
        if !(self.eye_noise.is_finite() && self.eye_noise >= 0.0) {
            return Err(Error::Config("world.eye_noise must be non-negative".into()));
        }
        if !(self.parallax.is_finite() && self.parallax >= 0.0) {
            return Err(Error::Config("world.parallax must be non-negative".into()));
        }
        let r = &self.ranges;
        let ordered = |v: [f64; 2]| v[0].is_finite() && v[1].is_finite() && 0.0 < v[0] && v[0] <= v[1];
        let [r0, r1] = self.object_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1 <= 0.15) {
            return Err(Error::Config(format!(
                "world.object_radius must satisfy 0 < lo <= hi <= 0.15, got {:?}",
                self.object_radius
            )));
        }
        if !ordered(r.scale) || !ordered(r.eye_gain) || !(0.0..=45.0).contains(&r.max_rotation_deg) || !(r.max_offset >= 0.0) {
            return Err(Error::Config(format!("invalid world.ranges {r:?}")));
        }
        Ok(())
    }

    pub fn session_id(&self, index: usize) -> String {
        format!("session-{index:02}")
    }

    pub fn subject_id(&self, index: usize) -> String {
        format!("subject-{:02}", index / self.sessions_per_subject)
    }
}

/// Per-session ground truth written next to the manifest (tests only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLatents {
    pub session_id: String,
    pub image_side: usize,
    pub config: SessionCameraConfig,
    pub gaze_directions: Vec<[f64; 2]>,
    /// Scene index of the target disk among all drawn disks, per sample.
    pub target_draw_index: Vec<usize>,
    /// Per-sample depth in `[0, 1]`, 0 nearest.
    #[serde(default)]
    pub depth: Vec<f64>,
}

impl SessionLatents {
    pub fn path(root: &Path, session_id: &str) -> PathBuf {
        root.join(LATENTS_DIR).join(format!("{session_id}.json"))
    }

    pub fn load(root: &Path, session_id: &str) -> Result<Self> {
        let path = Self::path(root, session_id);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One rendered sample before it is written to disk.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub scene: Image,
    pub face: Image,
    pub labels: LabelMap,
    pub landmarks: Vec<GazePoint>,
    pub gaze: GazePoint,
    pub boxes: Vec<TaggedBox>,
    pub target_draw_index: usize,
    pub depth: f64,
}

/// Per-subject appearance.
#[derive(Debug, Clone, Copy)]
struct Subject {
    skin: Rgb,
    width_factor: f64,
}

impl Subject {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let t = rng.random_range(0.0..1.0f32);
        Self {
            skin: [0.95 - 0.45 * t, 0.78 - 0.4 * t, 0.65 - 0.35 * t],
            width_factor: rng.random_range(0.9..1.1),
        }
    }
}

fn draw_config(ranges: &ConfigRanges, side: usize, rng: &mut ChaCha8Rng) -> Result<SessionCameraConfig> {
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
    let m = ranges.max_offset * side as f64;
    let cfg = SessionCameraConfig {
        rotation_deg: uniform(rng, -ranges.max_rotation_deg, ranges.max_rotation_deg),
        scale: uniform(rng, ranges.scale[0], ranges.scale[1]),
        offset: [uniform(rng, -m, m), uniform(rng, -m, m)],
        eye_gain: uniform(rng, ranges.eye_gain[0], ranges.eye_gain[1]),
    };
    cfg.check_in_frame(side)?;
    Ok(cfg)
}

fn add_noise(img: &mut Image, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.data_mut() {
        *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
    }
}

fn render_scene(
    world: &WorldConfig,
    gaze: GazePoint,
    depth: f64,
    rng: &mut ChaCha8Rng,
) -> (Image, LabelMap, Vec<TaggedBox>, usize) {
    let side = world.image_side;
    let s = side as f64;
    let (r_lo, r_hi) = (world.object_radius[0] * s, world.object_radius[1] * s);
    let r = r_hi - depth * (r_hi - r_lo);
    let mut disks = Vec::with_capacity(world.n_distractors + 1);
    let draw = |rng: &mut ChaCha8Rng, center: [f64; 2]| -> (usize, [f64; 2], f64) {
        (rng.random_range(0..SCENE_CLASSES.len()), center, r)
    };
    disks.push(draw(rng, [gaze.x, gaze.y]));
    let min_sep = 2.0 * r_hi + 1.0;
    for _ in 0..world.n_distractors {
        let mut c = [0.0; 2];
        for _ in 0..100 {
            c = [rng.random_range(r_hi..s - r_hi), rng.random_range(r_hi..s - r_hi)];
            if disks.iter().all(|(_, o, _)| (o[0] - c[0]).hypot(o[1] - c[1]) >= min_sep) {
                break;
            }
        }
        disks.push(draw(rng, c));
    }
    // Random draw order so the target is not always on top or bottom.
    let mut order: Vec<usize> = (0..disks.len()).collect();
    order.shuffle(rng);
    let target_draw_index = order.iter().position(|&i| i == 0).expect("target drawn");

    let mut canvas = Canvas::gradient(side, [0.55, 0.7, 0.85], [0.45, 0.45, 0.45]);
    let mut labels = vec![0u8; side * side];
    let mut boxes = Vec::with_capacity(disks.len());
    for &i in &order {
        let (class, c, r) = disks[i];
        for (x, y) in canvas.disk(c[0], c[1], r, CLASS_COLORS[class]) {
            labels[y * side + x] = class as u8 + 1;
        }
        boxes.push(TaggedBox {
            class: SCENE_CLASSES[class].to_string(),
            bbox: BoundingBox::new(c[0] - r, c[1] - r, c[0] + r, c[1] + r).expect("positive radius"),
        });
    }
    let labels = LabelMap::new(side, side, labels).expect("label buffer sized to image");
    (canvas.image, labels, boxes, target_draw_index)
}

/// Face image: cabin structure posed by the session transform, then a
/// schematic face whose size and pupil travel scale with `eye_gain`.
fn render_face(
    world: &WorldConfig,
    cfg: &SessionCameraConfig,
    subject: &Subject,
    g: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> (Image, Vec<GazePoint>, BoundingBox) {
    let side = world.image_side;
    let s = side as f64;
    let mut canvas = Canvas::filled(side, [0.18, 0.17, 0.2]);

    // Cabin structure: a window frame and a pillar. Their pose is the
    // session mapping applied to fixed template points, normalized so the
    // frame stays comparable in size across the scale range.
    let mid_scale = 0.5 * (world.ranges.scale[0] + world.ranges.scale[1]);
    let pose = |u: [f64; 2]| {
        let a = cfg.linear(u, side);
        let k = 0.42 / mid_scale;
        [s / 2.0 + cfg.offset[0] * 2.0 + k * a[0], s / 2.0 + cfg.offset[1] * 2.0 + k * a[1]]
    };
    let frame = [[-1.0, -0.8], [1.0, -0.8], [1.0, 0.8], [-1.0, 0.8]];
    let light = [0.7, 0.72, 0.75];
    for i in 0..4 {
        canvas.segment(pose(frame[i]), pose(frame[(i + 1) % 4]), 0.05 * s, light);
    }
    canvas.segment(pose([0.35, -1.2]), pose([0.55, 1.2]), 0.07 * s, [0.45, 0.3, 0.25]);
    if world.headrest {
        // Covers the largest face box the ranges allow, with jitter margin;
        // depends only on the world, never on the session.
        let gain = world.ranges.eye_gain[1];
        let (hx, hy) = (0.24 * s * gain * 1.1 + 0.03 * s, 0.3 * s * gain + 0.03 * s);
        let c = [s / 2.0, 0.52 * s];
        canvas.fill([c[0] - hx, c[1] - hy, c[0] + hx, c[1] + hy], [0.3, 0.28, 0.3], |_, _| true);
    }

    let jitter = Normal::new(0.0, 0.01 * s).expect("finite");
    let gain = cfg.eye_gain;
    let fc = [s / 2.0 + jitter.sample(rng), 0.52 * s + jitter.sample(rng)];
    let (rx, ry) = (0.24 * s * gain * subject.width_factor, 0.3 * s * gain);
    canvas.ellipse(fc[0], fc[1], rx, ry, subject.skin);
    let face_box = BoundingBox::new(fc[0] - rx, fc[1] - ry, fc[0] + rx, fc[1] + ry).expect("positive radii");

    let (ex, ey) = (0.1 * s * gain * subject.width_factor, 0.06 * s * gain);
    let (ehw, ehh) = (0.06 * s * gain, 0.035 * s * gain);
    let pupil_r = 0.026 * s * gain;
    let travel = 0.04 * s * gain;
    let mut corners = Vec::with_capacity(4);
    let mut pupils = Vec::with_capacity(2);
    for sign in [-1.0, 1.0] {
        let c = [fc[0] + sign * ex, fc[1] - ey];
        canvas.ellipse(c[0], c[1], ehw, ehh, [0.97, 0.97, 0.97]);
        let p = [c[0] + travel * g[0], c[1] + travel * g[1] * (ehh / ehw)];
        canvas.fill(
            [p[0] - pupil_r, p[1] - pupil_r, p[0] + pupil_r, p[1] + pupil_r],
            [0.08, 0.06, 0.05],
            |x, y| {
                (x - p[0]).powi(2) + (y - p[1]).powi(2) <= pupil_r * pupil_r
                    && ((x - c[0]) / ehw).powi(2) + ((y - c[1]) / ehh).powi(2) <= 1.0
            },
        );
        corners.push(GazePoint::new(c[0] - ehw, c[1]));
        corners.push(GazePoint::new(c[0] + ehw, c[1]));
        pupils.push(GazePoint::new(p[0], p[1]));
    }
    canvas.segment(
        [fc[0] - 0.07 * s * gain, fc[1] + 0.16 * s * gain],
        [fc[0] + 0.07 * s * gain, fc[1] + 0.16 * s * gain],
        0.025 * s,
        [0.55, 0.25, 0.25],
    );
    corners.extend(pupils);
    (canvas.image, corners, face_box)
}

/// Renders one sample for gaze direction `g` under `cfg`.
fn render_sample(
    world: &WorldConfig,
    cfg: &SessionCameraConfig,
    subject: &Subject,
    g: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> RenderedSample {
    let gaze = oracle_gaze(g, cfg, world.image_side);
    let depth = rng.random_range(0.0..=1.0);
    let (mut scene, labels, mut boxes, target_draw_index) = render_scene(world, gaze, depth, rng);
    let mut seen = [g[0] + world.parallax * (depth - 0.5), g[1]];
    if world.eye_noise > 0.0 {
        let n = Normal::new(0.0, world.eye_noise).expect("finite eye noise");
        seen = [seen[0] + n.sample(rng), seen[1] + n.sample(rng)];
    }
    let seen = [seen[0].clamp(-1.25, 1.25), seen[1].clamp(-1.25, 1.25)];
    let (mut face, landmarks, face_box) = render_face(world, cfg, subject, seen, rng);
    add_noise(&mut scene, world.noise_sigma, rng);
    add_noise(&mut face, world.noise_sigma, rng);
    boxes.push(TaggedBox {
        class: FACE_CLASS.to_string(),
        bbox: face_box,
    });
    RenderedSample {
        scene,
        face,
        labels,
        landmarks,
        gaze,
        boxes,
        target_draw_index,
        depth,
    }
}

/// Samples of one session, in order, together with its latents. Uses only
/// the stream derived from `(rng_seed, session_id)`.
pub fn render_session(world: &WorldConfig, index: usize) -> Result<(Vec<RenderedSample>, SessionLatents)> {
    world.validate()?;
    let session_id = world.session_id(index);
    let subject_id = world.subject_id(index);
    let subject = Subject::draw(&mut stream(world.rng_seed, &subject_id));
    let mut rng = stream(world.rng_seed, &session_id);
    let cfg = draw_config(&world.ranges, world.image_side, &mut rng)?;
    let mut samples = Vec::with_capacity(world.samples_per_session);
    let mut latents = SessionLatents {
        session_id,
        image_side: world.image_side,
        config: cfg,
        gaze_directions: Vec::with_capacity(world.samples_per_session),
        target_draw_index: Vec::with_capacity(world.samples_per_session),
        depth: Vec::with_capacity(world.samples_per_session),
    };
    for _ in 0..world.samples_per_session {
        let g = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let sample = render_sample(world, &cfg, &subject, g, &mut rng);
        latents.gaze_directions.push(g);
        latents.target_draw_index.push(sample.target_draw_index);
        latents.depth.push(sample.depth);
        samples.push(sample);
    }
    Ok((samples, latents))
}

pub fn classes_table() -> String {
    let mut s = String::from("0 background\n");
    for (i, c) in SCENE_CLASSES.iter().enumerate() {
        s.push_str(&format!("{} {c}\n", i + 1));
    }
    s
}

/// Writes a complete dataset under `out_dir`: `manifest.json`,
/// `classes.txt`, per-session image folders and the latents sidecars. The
/// manifest carries a subject-level train/test split derived from the seed.
pub fn generate_dataset(world: &WorldConfig, out_dir: &Path) -> Result<DatasetManifest> {
    world.validate()?;
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(out_dir)?;
    mkdir(&out_dir.join(LATENTS_DIR))?;
    let mut sessions = Vec::with_capacity(world.n_sessions);
    for index in 0..world.n_sessions {
        let (samples, latents) = render_session(world, index)?;
        let dir = out_dir.join(&latents.session_id);
        mkdir(&dir)?;
        let mut records = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            let rel = |kind: &str| format!("{}/{kind}_{k:04}.png", latents.session_id);
            let (scene, face, label) = (rel("scene"), rel("face"), rel("label"));
            s.scene.save_png(&out_dir.join(&scene))?;
            s.face.save_png(&out_dir.join(&face))?;
            s.labels.save_png(&out_dir.join(&label))?;
            records.push(SampleRecord {
                scene,
                face,
                landmarks: s.landmarks.clone(),
                gaze: Some(s.gaze),
                boxes: s.boxes.clone(),
                label_map: Some(label),
            });
        }
        let path = SessionLatents::path(out_dir, &latents.session_id);
        std::fs::write(&path, serde_json::to_string_pretty(&latents)? + "\n").map_err(|e| Error::io(&path, e))?;
        sessions.push(SessionRecord {
            session_id: latents.session_id.clone(),
            subject_id: world.subject_id(index),
            samples: records,
        });
    }
    let classes_path = out_dir.join(CLASSES_FILE);
    std::fs::write(&classes_path, classes_table()).map_err(|e| Error::io(&classes_path, e))?;
    let manifest = DatasetManifest {
        sessions,
        split: Default::default(),
        landmark_layout: LandmarkLayout::default(),
        facial_roi: None,
        classes: Some(CLASSES_FILE.to_string()),
    };
    let manifest = split_sessions(&manifest, world.rng_seed);
    save_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
