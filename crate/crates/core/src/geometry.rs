//! Points and boxes in pixel coordinates (origin top-left, x right, y down).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of gaze (or any 2D pixel location) in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct GazePoint {
    pub x: f64,
    pub y: f64,
}

impl GazePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Half-open containment test against a `width`×`height` image.
    pub fn in_frame(&self, width: f64, height: f64) -> bool {
        self.is_finite() && self.x >= 0.0 && self.x < width && self.y >= 0.0 && self.y < height
    }

    pub fn distance(&self, other: &GazePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &GazePoint) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn midpoint(&self, other: &GazePoint) -> GazePoint {
        GazePoint::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{what} is not finite: {self:?}")))
        }
    }
}

impl From<[f64; 2]> for GazePoint {
    fn from(v: [f64; 2]) -> Self {
        GazePoint::new(v[0], v[1])
    }
}

impl From<GazePoint> for [f64; 2] {
    fn from(p: GazePoint) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box, `[x_min, y_min, x_max, y_max]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidInput(format!(
                "invalid bounding box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Square box of side `side` centered at `center`.
    pub fn square(center: GazePoint, side: f64) -> Result<Self> {
        let half = 0.5 * side;
        Self::new(
            center.x - half,
            center.y - half,
            center.x + half,
            center.y + half,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> GazePoint {
        GazePoint::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_boxes() {
        assert!(BoundingBox::new(10.0, 0.0, 5.0, 4.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 5.0, 3.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 3.0).is_err());
    }

    #[test]
    fn in_frame_is_half_open() {
        assert!(GazePoint::new(0.0, 0.0).in_frame(10.0, 10.0));
        assert!(!GazePoint::new(10.0, 5.0).in_frame(10.0, 10.0));
        assert!(!GazePoint::new(-0.1, 5.0).in_frame(10.0, 10.0));
    }

    #[test]
    fn box_serializes_as_array() {
        let b = BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        let bad: std::result::Result<BoundingBox, _> = serde_json::from_str("[3.0,2.0,1.0,4.0]");
        assert!(bad.is_err());
    }
}
