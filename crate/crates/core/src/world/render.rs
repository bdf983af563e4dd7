//! Anti-aliased rasterization of the few primitives the generator needs.
//! Coverage is estimated on a 4×4 sub-pixel grid; pixel `(x, y)` spans
//! `[x, x+1)×[y, y+1)` so its center is `(x+0.5, y+0.5)`.

use crate::image::Image;

const SUB: usize = 4;

pub(crate) type Rgb = [f32; 3];

pub(crate) struct Canvas {
    pub image: Image,
}

impl Canvas {
    pub fn filled(side: usize, color: Rgb) -> Self {
        let mut image = Image::zeros(3, side, side);
        for (c, v) in color.iter().enumerate() {
            let plane = side * side;
            image.data_mut()[c * plane..(c + 1) * plane].fill(*v);
        }
        Self { image }
    }

    /// Vertical blend from `top` to `bottom` color.
    pub fn gradient(side: usize, top: Rgb, bottom: Rgb) -> Self {
        let mut image = Image::zeros(3, side, side);
        for y in 0..side {
            let t = (y as f32 + 0.5) / side as f32;
            for x in 0..side {
                for c in 0..3 {
                    image.set(c, y, x, top[c] * (1.0 - t) + bottom[c] * t);
                }
            }
        }
        Self { image }
    }

    fn side(&self) -> usize {
        self.image.width()
    }

    /// Blends `color` into every pixel of the `[x0, x1)×[y0, y1)` bounding
    /// range according to the coverage of `inside`. Returns the pixels whose
    /// center lies inside.
    pub fn fill<F>(&mut self, bounds: [f64; 4], color: Rgb, inside: F) -> Vec<(usize, usize)>
    where
        F: Fn(f64, f64) -> bool,
    {
        let s = self.side() as f64;
        let x0 = bounds[0].floor().clamp(0.0, s) as usize;
        let y0 = bounds[1].floor().clamp(0.0, s) as usize;
        let x1 = bounds[2].ceil().clamp(0.0, s) as usize;
        let y1 = bounds[3].ceil().clamp(0.0, s) as usize;
        let mut centers = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let px = x as f64 + (sx as f64 + 0.5) / SUB as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUB as f64;
                        if inside(px, py) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let a = hits as f32 / (SUB * SUB) as f32;
                for (c, v) in color.iter().enumerate() {
                    let old = self.image.get(c, y, x);
                    self.image.set(c, y, x, old * (1.0 - a) + v * a);
                }
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    centers.push((x, y));
                }
            }
        }
        centers
    }

    pub fn disk(&mut self, cx: f64, cy: f64, r: f64, color: Rgb) -> Vec<(usize, usize)> {
        self.fill([cx - r, cy - r, cx + r, cy + r], color, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        })
    }

    pub fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: Rgb) {
        self.fill([cx - rx, cy - ry, cx + rx, cy + ry], color, |x, y| {
            ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
        });
    }

    /// Straight stroke of the given width between two points.
    pub fn segment(&mut self, a: [f64; 2], b: [f64; 2], width: f64, color: Rgb) {
        let h = width / 2.0;
        let bounds = [
            a[0].min(b[0]) - h,
            a[1].min(b[1]) - h,
            a[0].max(b[0]) + h,
            a[1].max(b[1]) + h,
        ];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        self.fill(bounds, color, |x, y| {
            let t = if len2 > 0.0 {
                (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (a[0] + t * dx - x, a[1] + t * dy - y);
            px * px + py * py <= h * h
        });
    }
}
