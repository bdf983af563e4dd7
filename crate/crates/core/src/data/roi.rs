use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GazePoint};

use super::Landmarks;

/// Side of an eye ROI relative to the eye-corner distance.
pub const EYE_ROI_SCALE: f64 = 1.5;

fn eye_box(a: GazePoint, b: GazePoint, which: &str) -> Result<BoundingBox> {
    let dist = a.distance(&b);
    if !(dist > 0.0) {
        return Err(Error::DegenerateLandmarks(format!(
            "{which} eye corners coincide at {a:?}"
        )));
    }
    BoundingBox::square(a.midpoint(&b), EYE_ROI_SCALE * dist)
}

/// Square left/right eye windows centered on the eye-corner midpoints with
/// side 1.5× the corner distance. Boxes may extend past the image; clamping
/// is left to the crop.
pub fn compute_eye_roi(landmarks: &Landmarks) -> Result<(BoundingBox, BoundingBox)> {
    let (l0, l1) = landmarks.left_eye_corners();
    let (r0, r1) = landmarks.right_eye_corners();
    Ok((eye_box(l0, l1, "left")?, eye_box(r0, r1, "right")?))
}

/// Smallest axis-aligned window containing every face box.
pub fn compute_facial_roi(face_boxes: &[BoundingBox]) -> Result<BoundingBox> {
    let (first, rest) = face_boxes
        .split_first()
        .ok_or_else(|| Error::InvalidInput("facial ROI needs at least one face box".into()))?;
    Ok(rest.iter().fold(*first, |acc, b| acc.union(b)))
}
