//! Minimal raster charts written as PNG: histogram, step CDF and grouped
//! bars. Charts carry axes and a light grid but no text; the numbers they
//! show are in the accompanying JSON reports.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: u32 = 24;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 4] = [
    Rgb([52, 101, 164]),
    Rgb([204, 102, 51]),
    Rgb([78, 154, 6]),
    Rgb([117, 80, 123]),
];

struct Frame {
    img: RgbImage,
}

impl Frame {
    fn new() -> Self {
        let mut img = RgbImage::from_pixel(W, H, BG);
        for k in 1..5 {
            let y = H - MARGIN - k * (H - 2 * MARGIN) / 4;
            for x in MARGIN..W - MARGIN {
                img.put_pixel(x, y, GRID);
            }
        }
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, H - MARGIN, AXIS);
        }
        for y in MARGIN..=H - MARGIN {
            img.put_pixel(MARGIN, y, AXIS);
        }
        Self { img }
    }

    fn plot_w() -> f64 {
        f64::from(W - 2 * MARGIN)
    }

    fn plot_h() -> f64 {
        f64::from(H - 2 * MARGIN)
    }

    /// Maps unit coordinates (origin bottom-left) to pixels.
    fn px(u: f64, v: f64) -> (i64, i64) {
        let x = f64::from(MARGIN) + u.clamp(0.0, 1.0) * Self::plot_w();
        let y = f64::from(H - MARGIN) - v.clamp(0.0, 1.0) * Self::plot_h();
        (x.round() as i64, y.round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn rect(&mut self, u0: f64, u1: f64, v: f64, c: Rgb<u8>) {
        let (x0, y0) = Self::px(u0, v);
        let (x1, y1) = Self::px(u1, 0.0);
        for x in x0.min(x1)..x0.max(x1) {
            for y in y0.min(y1)..y1.max(y0) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (x0, y0) = Self::px(a.0, a.1);
        let (x1, y1) = Self::px(b.0, b.1);
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 as f64 + t * (x1 - x0) as f64).round() as i64;
            let y = (y0 as f64 + t * (y1 - y0) as f64).round() as i64;
            for d in [-1, 0, 1] {
                self.put(x, y + d, c);
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img
            .save(path)
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
    }
}

fn check(values: &[f64]) -> Result<()> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("plot needs finite, non-empty data".into()));
    }
    Ok(())
}

/// Normalized histogram of non-negative values over `[0, max]`.
pub fn histogram_png(values: &[f64], bins: usize, path: &Path) -> Result<()> {
    check(values)?;
    let bins = bins.max(1);
    let max = values.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v.max(0.0) / max) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let top = *counts.iter().max().expect("bins > 0") as f64;
    let mut f = Frame::new();
    for (i, &c) in counts.iter().enumerate() {
        let (u0, u1) = (i as f64 / bins as f64, (i as f64 + 0.85) / bins as f64);
        f.rect(u0, u1, c as f64 / top, PALETTE[0]);
    }
    f.save(path)
}

/// Empirical CDF as a step curve over `[0, max]`.
pub fn cdf_png(values: &[f64], path: &Path) -> Result<()> {
    check(values)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let max = v[v.len() - 1].max(f64::MIN_POSITIVE);
    let n = v.len() as f64;
    let mut f = Frame::new();
    let mut prev = (0.0, 0.0);
    for (i, x) in v.iter().enumerate() {
        let u = x / max;
        let level = (i + 1) as f64 / n;
        f.line(prev, (u, prev.1), PALETTE[0]);
        f.line((u, prev.1), (u, level), PALETTE[0]);
        prev = (u, level);
    }
    f.line(prev, (1.0, 1.0), PALETTE[0]);
    f.save(path)
}

/// Grouped bars: one group per category, one bar per series, scaled to
/// the largest value.
pub fn bar_chart_png(series: &[&[f64]], path: &Path) -> Result<()> {
    let cats = series.first().map_or(0, |s| s.len());
    if series.is_empty() || series.len() > PALETTE.len() || series.iter().any(|s| s.len() != cats) {
        return Err(Error::InvalidInput("bar chart needs 1..=4 series of equal length".into()));
    }
    for s in series {
        check(s)?;
    }
    let top = series.iter().flat_map(|s| s.iter()).copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut f = Frame::new();
    let group = 1.0 / cats as f64;
    let bar = group * 0.8 / series.len() as f64;
    for c in 0..cats {
        for (k, s) in series.iter().enumerate() {
            let u0 = c as f64 * group + group * 0.1 + k as f64 * bar;
            f.rect(u0, u0 + bar, s[c].max(0.0) / top, PALETTE[k]);
        }
    }
    f.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_decodable_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let v: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.7).collect();
        for (name, r) in [
            ("h.png", histogram_png(&v, 10, &dir.path().join("h.png"))),
            ("c.png", cdf_png(&v, &dir.path().join("c.png"))),
            ("b.png", bar_chart_png(&[&v[..5], &v[5..10]], &dir.path().join("b.png"))),
        ] {
            r.unwrap();
            let img = image::open(dir.path().join(name)).unwrap();
            assert_eq!((img.width(), img.height()), (W, H));
        }
    }

    #[test]
    fn rejects_bad_data() {
        let dir = tempfile::tempdir().unwrap();
        assert!(histogram_png(&[], 4, &dir.path().join("x.png")).is_err());
        assert!(cdf_png(&[f64::NAN], &dir.path().join("x.png")).is_err());
        assert!(bar_chart_png(&[&[1.0], &[1.0, 2.0]], &dir.path().join("x.png")).is_err());
    }
}
