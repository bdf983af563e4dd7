//! Canonical data model: samples, landmarks, dataset manifests, ROI
//! geometry, network input assembly and session splitting.

mod input;
mod manifest;
mod roi;
mod split;

pub use input::{
    assemble_image_channels, assemble_input, CALIB_CHANNELS, FACE_CHANNELS, IMAGE_CHANNELS,
    INPUT_CHANNELS, LEFT_EYE_CHANNELS, RIGHT_EYE_CHANNELS, SCENE_CHANNELS,
};
pub use manifest::{
    load_manifest, parse_manifest, save_manifest, DatasetManifest, LandmarkLayout, SampleRecord,
    SessionRecord, Split, TaggedBox,
};
pub use roi::{compute_eye_roi, compute_facial_roi};
pub use split::split_sessions;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};
use crate::image::{Image, LabelMap};

/// Facial landmarks in face-image pixel coordinates together with the index
/// layout naming the eye corners (and optionally the pupils).
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    points: Vec<GazePoint>,
    layout: LandmarkLayout,
}

impl Landmarks {
    pub fn new(points: Vec<GazePoint>, layout: LandmarkLayout) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite landmark {p:?}")));
        }
        let n = points.len();
        let bad = layout.indices().into_iter().find(|&i| i >= n);
        if let Some(i) = bad {
            return Err(Error::InvalidInput(format!(
                "landmark index {i} out of range for {n} points"
            )));
        }
        Ok(Self { points, layout })
    }

    pub fn points(&self) -> &[GazePoint] {
        &self.points
    }

    pub fn layout(&self) -> &LandmarkLayout {
        &self.layout
    }

    pub fn left_eye_corners(&self) -> (GazePoint, GazePoint) {
        let [a, b] = self.layout.left_eye;
        (self.points[a], self.points[b])
    }

    pub fn right_eye_corners(&self) -> (GazePoint, GazePoint) {
        let [a, b] = self.layout.right_eye;
        (self.points[a], self.points[b])
    }

    /// Eye corners followed by pupil centers (when the layout has them),
    /// flattened as `x, y` pairs. Feature vector for the linear baseline.
    pub fn eye_features(&self) -> Vec<f64> {
        let mut idx = vec![
            self.layout.left_eye[0],
            self.layout.left_eye[1],
            self.layout.right_eye[0],
            self.layout.right_eye[1],
        ];
        idx.extend(self.layout.left_pupil);
        idx.extend(self.layout.right_pupil);
        idx.into_iter()
            .flat_map(|i| [self.points[i].x, self.points[i].y])
            .collect()
    }
}

/// One synchronized record: scene image, face image, landmarks and
/// (optionally) the annotated point of gaze.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene: Image,
    pub face: Image,
    pub landmarks: Landmarks,
    pub gaze: Option<GazePoint>,
    pub session_id: String,
    pub subject_id: String,
    pub boxes: Vec<TaggedBox>,
    pub label_map: Option<LabelMap>,
}

impl Sample {
    pub fn scene_size(&self) -> (f64, f64) {
        (self.scene.width() as f64, self.scene.height() as f64)
    }

    pub fn boxes_of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = BoundingBox> + 'a {
        self.boxes
            .iter()
            .filter(move |b| b.class == class)
            .map(|b| b.bbox)
    }
}

/// Reads every sample of the given sessions (all sessions when `sessions` is
/// `None`), decoding images relative to `base_dir`.
pub fn load_samples(
    manifest: &DatasetManifest,
    base_dir: &Path,
    sessions: Option<&[String]>,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let layout = manifest.landmark_layout.clone();
    for session in &manifest.sessions {
        if let Some(keep) = sessions {
            if !keep.contains(&session.session_id) {
                continue;
            }
        }
        for rec in &session.samples {
            let scene = Image::load_png(&base_dir.join(&rec.scene))?;
            let face = Image::load_png(&base_dir.join(&rec.face))?;
            if (scene.height(), scene.width()) != (face.height(), face.width()) {
                return Err(Error::Manifest(format!(
                    "scene {} and face {} differ in size",
                    rec.scene, rec.face
                )));
            }
            let label_map = match &rec.label_map {
                Some(p) => Some(LabelMap::load_png(&base_dir.join(p))?),
                None => None,
            };
            if let Some(g) = rec.gaze {
                if !g.in_frame(scene.width() as f64, scene.height() as f64) {
                    return Err(Error::Manifest(format!(
                        "gaze {g:?} of {} lies outside the scene image",
                        rec.scene
                    )));
                }
            }
            out.push(Sample {
                scene,
                face,
                landmarks: Landmarks::new(rec.landmarks.clone(), layout.clone())?,
                gaze: rec.gaze,
                session_id: session.session_id.clone(),
                subject_id: session.subject_id.clone(),
                boxes: rec.boxes.clone(),
                label_map,
            });
        }
    }
    Ok(out)
}
