//! Planar projective maps: normalized DLT, RANSAC and point transfer.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazePoint;

/// Source (gaze-frame) and destination (scene-frame) pixel pair.
pub type Correspondence = ([f64; 2], [f64; 2]);

const MIN_DET: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

/// 3×3 projective map with `h[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography {
    h: [[f64; 3]; 3],
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = Error;

    fn try_from(h: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(h)
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.h
    }
}

impl Homography {
    /// Normalizes so the bottom-right entry is 1 and checks invertibility.
    pub fn new(h: [[f64; 3]; 3]) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("homography has non-finite entries".into()));
        }
        let s = h[2][2];
        if s.abs() < MIN_DET {
            return Err(Error::Degenerate("homography has a vanishing h[2][2]".into()));
        }
        let mut n = h;
        for v in n.iter_mut().flatten() {
            *v /= s;
        }
        let out = Self { h: n };
        if out.matrix().determinant().abs() <= MIN_DET {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        Ok(out)
    }

    pub fn identity() -> Self {
        Self {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn entries(&self) -> [[f64; 3]; 3] {
        self.h
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h[r][c])
    }

    fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        Self::new([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Self::from_matrix(&inv)
    }
}

/// Applies `h` to `p` with homogeneous normalization.
pub fn transfer_point(h: &Homography, p: &GazePoint) -> Result<GazePoint> {
    p.ensure_finite("point")?;
    let v = h.matrix() * Vector3::new(p.x, p.y, 1.0);
    let scale = v[0].abs().max(v[1].abs()).max(1.0);
    if v[2].abs() <= 1e-12 * scale {
        return Err(Error::PointAtInfinity);
    }
    Ok(GazePoint::new(v[0] / v[2], v[1] / v[2]))
}

fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let span = [a, b, c]
        .iter()
        .flat_map(|p| [(p[0] - a[0]).abs(), (p[1] - a[1]).abs()])
        .fold(0.0, f64::max);
    cross(a, b, c).abs() <= COLLINEAR_TOL * span * span.max(1.0)
}

/// Similarity taking the points to zero centroid and mean distance √2.
fn normalizer(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_d = pts.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    let s = if mean_d > 0.0 { std::f64::consts::SQRT_2 / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Least-squares homography from at least four pairs (normalized DLT).
/// Exact for consistent input.
pub fn dlt_homography(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::Degenerate(format!("homography needs 4 pairs, got {}", pairs.len())));
    }
    if pairs.iter().flat_map(|(a, b)| a.iter().chain(b)).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("correspondences must be finite".into()));
    }
    let src: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<[f64; 2]> = pairs.iter().map(|p| p.1).collect();
    if pairs.len() == 4 {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(src[i], src[j], src[k]) {
                return Err(Error::Degenerate("three source points are collinear".into()));
            }
        }
    }
    let (ts, td) = (normalizer(&src), normalizer(&dst));
    let apply = |t: &Matrix3<f64>, p: [f64; 2]| {
        let v = t * Vector3::new(p[0], p[1], 1.0);
        [v[0], v[1]]
    };
    let n = pairs.len();
    // Pad to 9 rows so the SVD always exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let [x, y] = apply(&ts, *s);
        let [u, v] = apply(&td, *d);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (top, second_smallest) = (svd.singular_values[order[0]], svd.singular_values[order[7]]);
    if !(top > 0.0) || second_smallest <= RANK_TOL * top {
        return Err(Error::Degenerate("point configuration does not determine a homography".into()));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("destination points coincide".into()))?;
    Homography::from_matrix(&(td_inv * hn * ts))
}

/// Scene-frame distance between `h(src)` and `dst`; infinite when `src`
/// maps to infinity.
pub fn transfer_error(h: &Homography, pair: &Correspondence) -> f64 {
    let p = GazePoint::from(pair.0);
    match transfer_point(h, &p) {
        Ok(q) => q.distance(&GazePoint::from(pair.1)),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub homography: Homography,
    /// Inlier flag per input pair, in input order.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// Consistent pairs beyond the minimal sample a hypothesis needs.
pub const MIN_SUPPORT: usize = 4;

/// Robust homography: `iters` random minimal samples, each scored by the
/// number of pairs transferred within `inlier_px`; the winner is refit on
/// its inliers and the mask recomputed under the refit.
///
/// A hypothesis fits its own four pairs exactly, so only pairs outside the
/// minimal sample count as support; fewer than [`MIN_SUPPORT`] supporting
/// pairs is an estimation failure. Pairs are put in canonical order before
/// sampling, so the result does not depend on the input order.
pub fn ransac_homography<R: Rng + ?Sized>(
    pairs: &[Correspondence],
    iters: usize,
    inlier_px: f64,
    rng: &mut R,
) -> Result<RansacResult> {
    if pairs.len() < 4 {
        return Err(Error::Degenerate(format!("RANSAC needs 4 pairs, got {}", pairs.len())));
    }
    if !(inlier_px.is_finite() && inlier_px > 0.0) || iters == 0 {
        return Err(Error::Config("RANSAC needs positive iters and inlier_px".into()));
    }
    if pairs.iter().flat_map(|(a, b)| a.iter().chain(b)).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("correspondences must be finite".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let key = |i: usize| {
        let (a, b) = pairs[i];
        [a[0], a[1], b[0], b[1]]
    };
    order.sort_by(|&i, &j| {
        key(i)
            .iter()
            .zip(key(j).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Correspondence> = order.iter().map(|&i| pairs[i]).collect();

    let mut best: Option<(usize, Homography)> = None;
    for _ in 0..iters {
        let idx = sample(rng, sorted.len(), 4);
        let minimal: Vec<Correspondence> = idx.iter().map(|i| sorted[i]).collect();
        let Ok(h) = dlt_homography(&minimal) else {
            continue;
        };
        let support = (0..sorted.len())
            .filter(|i| !idx.iter().any(|k| k == *i) && transfer_error(&h, &sorted[*i]) <= inlier_px)
            .count();
        if best.as_ref().is_none_or(|(s, _)| support > *s) {
            best = Some((support, h));
        }
    }
    let (support, h) = best.ok_or_else(|| Error::EstimationFailed("every minimal sample was degenerate".into()))?;
    if support < MIN_SUPPORT {
        return Err(Error::EstimationFailed(format!(
            "best hypothesis is supported by {support} pair(s) beyond its sample; {MIN_SUPPORT} required"
        )));
    }
    let inliers_of = |h: &Homography| -> Vec<bool> {
        sorted.iter().map(|p| transfer_error(h, p) <= inlier_px).collect()
    };
    let mask = inliers_of(&h);
    let chosen: Vec<Correspondence> = sorted.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
    let (homography, mask) = match dlt_homography(&chosen) {
        Ok(refit) => {
            let m = inliers_of(&refit);
            if m.iter().filter(|v| **v).count() >= chosen.len() {
                (refit, m)
            } else {
                (h, mask)
            }
        }
        Err(_) => (h, mask),
    };
    let mut inliers = vec![false; pairs.len()];
    for (k, &i) in order.iter().enumerate() {
        inliers[i] = mask[k];
    }
    let inlier_count = inliers.iter().filter(|v| **v).count();
    Ok(RansacResult {
        homography,
        inliers,
        inlier_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h_of(m: [[f64; 3]; 3]) -> Homography {
        Homography::new(m).unwrap()
    }

    fn square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [100.0, 0.0], [100.0, 80.0], [0.0, 80.0]]
    }

    fn max_entry_diff(a: &Homography, b: &Homography) -> f64 {
        a.entries()
            .iter()
            .flatten()
            .zip(b.entries().iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_and_translation_fits() {
        let id: Vec<Correspondence> = square().into_iter().map(|p| (p, p)).collect();
        assert!(max_entry_diff(&dlt_homography(&id).unwrap(), &Homography::identity()) < 1e-9);
        let tr: Vec<Correspondence> = square().into_iter().map(|p| (p, [p[0] + 10.0, p[1] + 5.0])).collect();
        let want = h_of([[1.0, 0.0, 10.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]]);
        assert!(max_entry_diff(&dlt_homography(&tr).unwrap(), &want) < 1e-9);
    }

    #[test]
    fn collinear_sources_are_degenerate() {
        let pairs: Vec<Correspondence> = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 5.0]]
            .into_iter()
            .map(|p| (p, p))
            .collect();
        assert!(matches!(dlt_homography(&pairs), Err(Error::Degenerate(_))));
        let all_on_line: Vec<Correspondence> = (0..8).map(|i| f64::from(i)).map(|t| ([t, 2.0 * t], [t, t])).collect();
        assert!(dlt_homography(&all_on_line).is_err());
    }

    #[test]
    fn transfer_examples() {
        let p = GazePoint::new(3.0, 4.0);
        assert_eq!(transfer_point(&Homography::identity(), &p).unwrap(), p);
        let t = h_of([[1.0, 0.0, 10.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]]);
        assert_eq!(transfer_point(&t, &GazePoint::new(0.0, 0.0)).unwrap(), GazePoint::new(10.0, 5.0));
        let s = h_of([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(transfer_point(&s, &p).unwrap(), GazePoint::new(6.0, 8.0));
        let proj = h_of([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);
        assert!(matches!(transfer_point(&proj, &GazePoint::new(-1.0, 0.0)), Err(Error::PointAtInfinity)));
    }

    #[test]
    fn rejects_singular_matrix() {
        assert!(Homography::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Homography {
        let a: f64 = rng.random_range(-0.3..0.3);
        let s: f64 = rng.random_range(0.7..1.4);
        h_of([
            [s * a.cos(), -s * a.sin(), rng.random_range(-50.0..50.0)],
            [s * a.sin(), s * a.cos(), rng.random_range(-50.0..50.0)],
            [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), 1.0],
        ])
    }

    proptest! {
        #[test]
        fn inverse_round_trip(seed in any::<u64>(), x in 0.0f64..640.0, y in 0.0f64..480.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_h(&mut rng);
            let p = GazePoint::new(x, y);
            let back = transfer_point(&h.inverse().unwrap(), &transfer_point(&h, &p).unwrap()).unwrap();
            prop_assert!(back.distance(&p) < 1e-6);
        }

        #[test]
        fn dlt_recovers_random_maps(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_h(&mut rng);
            let pairs: Vec<Correspondence> = (0..12).map(|_| {
                let s = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
                let d = transfer_point(&h, &GazePoint::from(s)).unwrap();
                (s, [d.x, d.y])
            }).collect();
            let fit = dlt_homography(&pairs).unwrap();
            for p in &pairs {
                prop_assert!(transfer_error(&fit, p) < 1e-6);
            }
        }
    }

    fn contaminated(rng: &mut ChaCha8Rng, n: usize, outlier_frac: f64) -> (Homography, Vec<Correspondence>, Vec<bool>) {
        let h = random_h(rng);
        let n_out = (n as f64 * outlier_frac).round() as usize;
        let mut pairs = Vec::new();
        let mut is_out = Vec::new();
        for i in 0..n {
            let s = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
            let d = transfer_point(&h, &GazePoint::from(s)).unwrap();
            if i < n_out {
                let mut o = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
                while GazePoint::from(o).distance(&d) < 20.0 {
                    o = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
                }
                pairs.push((s, o));
                is_out.push(true);
            } else {
                pairs.push((s, [d.x, d.y]));
                is_out.push(false);
            }
        }
        (h, pairs, is_out)
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, pairs, is_out) = contaminated(&mut rng, 60, 0.3);
        let r = ransac_homography(&pairs, 500, 1.0, &mut rng).unwrap();
        for (m, o) in r.inliers.iter().zip(&is_out) {
            assert_eq!(*m, !o);
        }
        for _ in 0..100 {
            let p = GazePoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let want = transfer_point(&h, &p).unwrap();
            assert!(transfer_point(&r.homography, &p).unwrap().distance(&want) < 0.5);
        }
    }

    #[test]
    fn ransac_clean_data_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, pairs, _) = contaminated(&mut rng, 20, 0.0);
        let r = ransac_homography(&pairs, 50, 0.5, &mut rng).unwrap();
        assert_eq!(r.inlier_count, 20);
        assert!(pairs.iter().all(|p| transfer_error(&r.homography, p) < 1e-6));
    }

    #[test]
    fn ransac_fails_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<Correspondence> = (0..40)
            .map(|_| {
                (
                    [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
                    [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
                )
            })
            .collect();
        assert!(matches!(
            ransac_homography(&pairs, 300, 1.0, &mut rng),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn ransac_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, pairs, _) = contaminated(&mut rng, 30, 0.3);
        let mut perm: Vec<usize> = (0..pairs.len()).collect();
        perm.reverse();
        perm.swap(3, 17);
        let shuffled: Vec<Correspondence> = perm.iter().map(|&i| pairs[i]).collect();
        let a = ransac_homography(&pairs, 200, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = ransac_homography(&shuffled, 200, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mapped: Vec<bool> = perm.iter().map(|&i| a.inliers[i]).collect();
        assert_eq!(mapped, b.inliers);
        assert_eq!(a.homography, b.homography);
    }
}
