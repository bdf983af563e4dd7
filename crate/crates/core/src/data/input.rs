use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Image;
use crate::model::CalibrationEmbedding;

use super::{compute_eye_roi, Sample};

pub const SCENE_CHANNELS: Range<usize> = 0..3;
pub const FACE_CHANNELS: Range<usize> = 3..6;
pub const LEFT_EYE_CHANNELS: Range<usize> = 6..9;
pub const RIGHT_EYE_CHANNELS: Range<usize> = 9..12;
pub const CALIB_CHANNELS: Range<usize> = 12..20;
/// Number of image channels preceding the calibration planes.
pub const IMAGE_CHANNELS: usize = 12;
pub const INPUT_CHANNELS: usize = 20;

/// The twelve image planes of the regression input: scene, facial ROI crop,
/// left-eye crop and right-eye crop, each resized to `side`×`side`.
///
/// Crops reaching outside the face image are zero-padded.
pub fn assemble_image_channels(
    sample: &Sample,
    facial_roi: &BoundingBox,
    side: usize,
) -> Result<Image> {
    if side == 0 {
        return Err(Error::InvalidInput("input side must be positive".into()));
    }
    let (left, right) = compute_eye_roi(&sample.landmarks)?;
    let parts = [
        sample.scene.resize(side, side)?,
        sample.face.crop_box(facial_roi)?.resize(side, side)?,
        sample.face.crop_box(&left)?.resize(side, side)?,
        sample.face.crop_box(&right)?.resize(side, side)?,
    ];
    let mut data = Vec::with_capacity(IMAGE_CHANNELS * side * side);
    for p in &parts {
        if p.channels() != 3 {
            return Err(Error::Shape(format!(
                "expected RGB images, got {} channels",
                p.channels()
            )));
        }
        data.extend_from_slice(p.data());
    }
    Image::from_vec(IMAGE_CHANNELS, side, side, data)
}

/// Full 20-channel regression input: the image planes followed by eight
/// spatially constant planes, one per calibration-embedding coordinate.
pub fn assemble_input(
    sample: &Sample,
    facial_roi: &BoundingBox,
    calib: &CalibrationEmbedding,
    side: usize,
) -> Result<Image> {
    let images = assemble_image_channels(sample, facial_roi, side)?;
    let mut data = images.into_data();
    data.reserve(CALIB_CHANNELS.len() * side * side);
    for &v in calib.values() {
        data.extend(std::iter::repeat_n(v, side * side));
    }
    Image::from_vec(INPUT_CHANNELS, side, side, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LandmarkLayout, Landmarks};
    use crate::geometry::GazePoint;

    fn sample_with_eye_at(lx: f64) -> Sample {
        let side = 16;
        let mut face = Image::zeros(3, side, side);
        for (i, v) in face.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f32 / 100.0;
        }
        let scene = face.clone();
        let pts = vec![
            GazePoint::new(lx, 8.0),
            GazePoint::new(lx + 4.0, 8.0),
            GazePoint::new(9.0, 8.0),
            GazePoint::new(13.0, 8.0),
        ];
        let layout = LandmarkLayout {
            left_pupil: None,
            right_pupil: None,
            ..Default::default()
        };
        Sample {
            scene,
            face,
            landmarks: Landmarks::new(pts, layout).unwrap(),
            gaze: None,
            session_id: "s".into(),
            subject_id: "a".into(),
            boxes: vec![],
            label_map: None,
        }
    }

    #[test]
    fn shape_and_calibration_planes() {
        let s = sample_with_eye_at(3.0);
        let roi = BoundingBox::new(2.0, 2.0, 14.0, 14.0).unwrap();
        let mut v = [0.0f32; 8];
        v[0] = 1.0;
        let calib = CalibrationEmbedding::new(v).unwrap();
        let x = assemble_input(&s, &roi, &calib, 24).unwrap();
        assert_eq!((x.channels(), x.height(), x.width()), (20, 24, 24));
        assert!(x.plane(12).iter().all(|&v| v == 1.0));
        for c in 13..20 {
            assert!(x.plane(c).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn out_of_bounds_eye_crop_matches_pad_then_crop() {
        // Left eye corners at x=-1 and x=3 -> box [-2, 5] x [5, 11], partly outside.
        let s = sample_with_eye_at(-1.0);
        let roi = BoundingBox::new(0.0, 0.0, 16.0, 16.0).unwrap();
        let (left, _) = compute_eye_roi(&s.landmarks).unwrap();
        assert!(left.x_min() < 0.0);
        let side = left.width().round() as usize;
        let x = assemble_image_channels(&s, &roi, side).unwrap();

        // Oracle: zero-pad the source by 8 pixels, then crop the shifted box.
        let pad = 8usize;
        let (h, w) = (s.face.height(), s.face.width());
        let mut padded = Image::zeros(3, h + 2 * pad, w + 2 * pad);
        for c in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    padded.set(c, y + pad, xx + pad, s.face.get(c, y, xx));
                }
            }
        }
        let x0 = (left.x_min().round() as i64 + pad as i64) as usize;
        let y0 = (left.y_min().round() as i64 + pad as i64) as usize;
        for c in 0..3 {
            for y in 0..side {
                for xx in 0..side {
                    let got = x.get(LEFT_EYE_CHANNELS.start + c, y, xx);
                    assert_eq!(got, padded.get(c, y0 + y, x0 + xx), "c{c} y{y} x{xx}");
                }
            }
        }
    }

    #[test]
    fn zero_side_is_rejected() {
        let s = sample_with_eye_at(3.0);
        let roi = BoundingBox::new(0.0, 0.0, 16.0, 16.0).unwrap();
        assert!(assemble_image_channels(&s, &roi, 0).is_err());
    }
}
