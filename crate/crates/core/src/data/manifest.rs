use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};

/// Train/test membership of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Object box with a class tag (`"face"`, `"car"`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedBox {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Which landmark indices are the eye corners and pupils.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkLayout {
    pub left_eye: [usize; 2],
    pub right_eye: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_pupil: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_pupil: Option<usize>,
}

impl Default for LandmarkLayout {
    /// Corners at 0..4, pupils at 4 and 5 (the synthetic-world layout).
    fn default() -> Self {
        Self {
            left_eye: [0, 1],
            right_eye: [2, 3],
            left_pupil: Some(4),
            right_pupil: Some(5),
        }
    }
}

impl LandmarkLayout {
    pub(crate) fn indices(&self) -> Vec<usize> {
        let mut v = vec![
            self.left_eye[0],
            self.left_eye[1],
            self.right_eye[0],
            self.right_eye[1],
        ];
        v.extend(self.left_pupil);
        v.extend(self.right_pupil);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub scene: String,
    pub face: String,
    pub landmarks: Vec<GazePoint>,
    pub gaze: Option<GazePoint>,
    #[serde(default)]
    pub boxes: Vec<TaggedBox>,
    #[serde(default)]
    pub label_map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub subject_id: String,
    pub samples: Vec<SampleRecord>,
}

/// Dataset description. File paths inside are relative to the directory
/// holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sessions: Vec<SessionRecord>,
    #[serde(default)]
    pub split: BTreeMap<String, Split>,
    #[serde(default)]
    pub landmark_layout: LandmarkLayout,
    /// Pinned facial ROI; when absent it is derived from `"face"` boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facial_roi: Option<BoundingBox>,
    /// Class-name table for label maps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<String>,
}

impl DatasetManifest {
    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sessions {
            if s.session_id.is_empty() || s.subject_id.is_empty() {
                return Err(Error::Manifest("empty session or subject id".into()));
            }
            if !seen.insert(s.session_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate session_id {:?}",
                    s.session_id
                )));
            }
            for rec in &s.samples {
                if let Some(g) = rec.gaze {
                    g.ensure_finite("gaze")
                        .map_err(|e| Error::Manifest(e.to_string()))?;
                }
                let n = rec.landmarks.len();
                if let Some(i) = self.landmark_layout.indices().into_iter().find(|&i| i >= n) {
                    return Err(Error::Manifest(format!(
                        "sample {} has {n} landmarks but the layout references index {i}",
                        rec.scene
                    )));
                }
                if rec.landmarks.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Manifest(format!(
                        "sample {} has non-finite landmarks",
                        rec.scene
                    )));
                }
            }
        }
        for id in self.split.keys() {
            if !seen.contains(id.as_str()) {
                return Err(Error::Manifest(format!(
                    "split references unknown session {id:?}"
                )));
            }
        }
        if !self.split.is_empty() && self.split.len() != self.sessions.len() {
            let missing: Vec<_> = self
                .sessions
                .iter()
                .filter(|s| !self.split.contains_key(&s.session_id))
                .map(|s| s.session_id.as_str())
                .collect();
            return Err(Error::Manifest(format!(
                "sessions without a split assignment: {missing:?}"
            )));
        }
        Ok(())
    }

    /// Checks that every referenced file exists under `base_dir`.
    pub fn check_files(&self, base_dir: &Path) -> Result<()> {
        let files = self.sessions.iter().flat_map(|s| &s.samples).flat_map(|r| {
            [Some(&r.scene), Some(&r.face), r.label_map.as_ref()]
                .into_iter()
                .flatten()
        });
        for f in files.chain(self.classes.as_ref()) {
            let p = base_dir.join(f);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn session(&self, id: &str) -> Option<&SessionRecord> {
        self.sessions.iter().find(|s| s.session_id == id)
    }

    /// Session ids assigned to `split`, in manifest order.
    pub fn sessions_in(&self, split: Split) -> Vec<String> {
        self.sessions
            .iter()
            .filter(|s| self.split.get(&s.session_id) == Some(&split))
            .map(|s| s.session_id.clone())
            .collect()
    }

    /// Subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.sessions {
            if !out.contains(&s.subject_id) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }

    pub fn face_boxes(&self) -> Vec<BoundingBox> {
        self.sessions
            .iter()
            .flat_map(|s| &s.samples)
            .flat_map(|r| &r.boxes)
            .filter(|b| b.class == "face")
            .map(|b| b.bbox)
            .collect()
    }

    /// The pinned facial ROI, or the union of all face boxes.
    pub fn facial_roi(&self) -> Result<BoundingBox> {
        match self.facial_roi {
            Some(b) => Ok(b),
            None => super::compute_facial_roi(&self.face_boxes()),
        }
    }
}

/// Parses and structurally validates manifest JSON.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::Manifest(format!("schema violation: {e}")))?;
    m.validate()?;
    Ok(m)
}

/// Loads a manifest and verifies that all referenced files exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text)?;
    m.check_files(path.parent().unwrap_or(Path::new(".")))?;
    Ok(m)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DatasetManifest {
        let rec = |i: usize| SampleRecord {
            scene: format!("scene_{i}.png"),
            face: format!("face_{i}.png"),
            landmarks: vec![GazePoint::new(1.0, 2.0); 6],
            gaze: if i % 2 == 0 { Some(GazePoint::new(3.5, 4.25)) } else { None },
            boxes: vec![TaggedBox {
                class: "face".into(),
                bbox: BoundingBox::new(0.0, 0.0, 4.0, 5.0).unwrap(),
            }],
            label_map: None,
        };
        DatasetManifest {
            sessions: vec![
                SessionRecord {
                    session_id: "s1".into(),
                    subject_id: "a".into(),
                    samples: vec![rec(0), rec(1)],
                },
                SessionRecord {
                    session_id: "s2".into(),
                    subject_id: "a".into(),
                    samples: vec![rec(2)],
                },
            ],
            split: [("s1".to_string(), Split::Train), ("s2".to_string(), Split::Test)]
                .into_iter()
                .collect(),
            landmark_layout: LandmarkLayout::default(),
            facial_roi: None,
            classes: None,
        }
    }

    fn touch_all(dir: &Path, m: &DatasetManifest) {
        for r in m.sessions.iter().flat_map(|s| &s.samples) {
            std::fs::write(dir.join(&r.scene), b"").unwrap();
            std::fs::write(dir.join(&r.face), b"").unwrap();
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy();
        touch_all(dir.path(), &m);
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("scene_0.png"), "{p:?}"),
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_session_ids_are_rejected() {
        let mut m = toy();
        m.sessions[1].session_id = "s1".into();
        m.split.remove("s2");
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("duplicate session_id"), "{err}");
    }

    #[test]
    fn split_must_cover_every_session_once_assigned() {
        let mut m = toy();
        m.split.remove("s2");
        assert!(m.validate().is_err());
        m.split.clear();
        assert!(m.validate().is_ok());
        m.split.insert("nope".into(), Split::Train);
        assert!(m.validate().is_err());
    }

    #[test]
    fn schema_violations_are_reported() {
        assert!(matches!(parse_manifest("{}"), Err(Error::Manifest(_))));
        assert!(matches!(
            parse_manifest(r#"{"sessions": [], "bogus": 1}"#),
            Err(Error::Manifest(_))
        ));
        let bad_split = r#"{"sessions": [{"session_id":"s","subject_id":"a","samples":[]}],
                            "split": {"s": "validation"}}"#;
        assert!(parse_manifest(bad_split).is_err());
    }

    #[test]
    fn facial_roi_prefers_pinned_box() {
        let mut m = toy();
        assert_eq!(m.facial_roi().unwrap().to_array(), [0.0, 0.0, 4.0, 5.0]);
        let pinned = BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
        m.facial_roi = Some(pinned);
        assert_eq!(m.facial_roi().unwrap(), pinned);
    }
}
