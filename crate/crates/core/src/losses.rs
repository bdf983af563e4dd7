//! Training objective: a piecewise-linear distance loss on predicted points
//! and a margin loss that pulls same-session calibration embeddings
//! together and pushes other sessions away.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazePoint;
use crate::model::{CalibrationEmbedding, EMBEDDING_DIM};

/// Embeddings whose norm is further than this from 1 are rejected.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Slope inside the threshold.
    pub alpha: f64,
    /// Slope outside the threshold.
    pub beta: f64,
    /// Distance threshold in pixels.
    pub tau: f64,
    /// Triplet margin.
    pub mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 2.0,
            tau: 5.0,
            mu: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.tau, self.mu].iter().all(|v| v.is_finite());
        if !finite || !(0.0 < self.alpha && self.alpha < self.beta) || self.tau <= 0.0 || self.mu <= 0.0 {
            return Err(Error::Config(format!(
                "loss parameters need 0 < alpha < beta, tau > 0, mu > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Loss value as a function of the distance alone.
    pub fn distance_value(&self, d: f64) -> f64 {
        self.beta * (d - self.tau).max(0.0) - self.alpha * (self.tau - d).max(0.0)
    }

    /// Derivative in `d`; the kink at `tau` takes the lower slope.
    pub fn distance_slope(&self, d: f64) -> f64 {
        if d > self.tau {
            self.beta
        } else {
            self.alpha
        }
    }
}

/// `β·ReLU(d − τ) − α·ReLU(τ − d)` with `d = ‖gt − pred‖`.
pub fn weighted_distance_loss(pred: &GazePoint, gt: &GazePoint, cfg: &LossConfig) -> Result<f64> {
    pred.ensure_finite("prediction")?;
    gt.ensure_finite("ground truth")?;
    Ok(cfg.distance_value(pred.distance(gt)))
}

/// Loss value and its gradient with respect to `pred`.
pub fn weighted_distance_loss_grad(pred: &GazePoint, gt: &GazePoint, cfg: &LossConfig) -> Result<(f64, [f64; 2])> {
    pred.ensure_finite("prediction")?;
    gt.ensure_finite("ground truth")?;
    let (dx, dy) = (pred.x - gt.x, pred.y - gt.y);
    let d = dx.hypot(dy);
    let value = cfg.distance_value(d);
    if d == 0.0 {
        return Ok((value, [0.0, 0.0]));
    }
    let s = cfg.distance_slope(d) / d;
    Ok((value, [s * dx, s * dy]))
}

fn check_unit(e: &CalibrationEmbedding, what: &str) -> Result<[f64; EMBEDDING_DIM]> {
    let n = e.norm();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "{what} embedding has norm {n}; embeddings must be normalized before the triplet loss"
        )));
    }
    Ok(e.to_f64())
}

fn dist(a: &[f64; EMBEDDING_DIM], b: &[f64; EMBEDDING_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `ReLU(‖a − p‖ − ‖a − n‖ + μ)`.
pub fn triplet_loss(
    anchor: &CalibrationEmbedding,
    pos: &CalibrationEmbedding,
    neg: &CalibrationEmbedding,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(triplet_loss_grad(anchor, pos, neg, cfg)?.0)
}

/// Triplet loss value and gradients with respect to anchor, positive and
/// negative. The hinge boundary takes the zero branch.
#[allow(clippy::type_complexity)]
pub fn triplet_loss_grad(
    anchor: &CalibrationEmbedding,
    pos: &CalibrationEmbedding,
    neg: &CalibrationEmbedding,
    cfg: &LossConfig,
) -> Result<(f64, [[f64; EMBEDDING_DIM]; 3])> {
    let a = check_unit(anchor, "anchor")?;
    let p = check_unit(pos, "positive")?;
    let n = check_unit(neg, "negative")?;
    let (dp, dn) = (dist(&a, &p), dist(&a, &n));
    let margin = dp - dn + cfg.mu;
    let mut g = [[0.0; EMBEDDING_DIM]; 3];
    if margin <= 0.0 {
        return Ok((0.0, g));
    }
    for k in 0..EMBEDDING_DIM {
        let up = if dp > 0.0 { (a[k] - p[k]) / dp } else { 0.0 };
        let un = if dn > 0.0 { (a[k] - n[k]) / dn } else { 0.0 };
        g[0][k] = up - un;
        g[1][k] = -up;
        g[2][k] = un;
    }
    Ok((margin, g))
}

/// Batch positions of one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    /// Anchors without a same-session partner or without another session.
    pub skipped: Vec<usize>,
    /// Every anchor of a non-empty batch was skipped.
    pub degenerate: bool,
}

impl TripletSample {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.triplets.len() + self.skipped.len();
        if total == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / total as f64
        }
    }
}

/// One triplet per anchor with uniform positive (same session, not the
/// anchor) and uniform negative (any other session). Indices in the output
/// are the `sample_index` values of `batch`.
pub fn sample_triplets<S: AsRef<str>, R: Rng + ?Sized>(batch: &[(usize, S)], rng: &mut R) -> TripletSample {
    let mut out = TripletSample::default();
    for (i, (anchor, session)) in batch.iter().enumerate() {
        let session = session.as_ref();
        let positives: Vec<usize> = batch
            .iter()
            .enumerate()
            .filter(|(j, (_, s))| *j != i && s.as_ref() == session)
            .map(|(_, (idx, _))| *idx)
            .collect();
        let negatives: Vec<usize> = batch
            .iter()
            .filter(|(_, s)| s.as_ref() != session)
            .map(|(idx, _)| *idx)
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            out.skipped.push(*anchor);
            continue;
        }
        let positive = positives[rng.random_range(0..positives.len())];
        let negative = negatives[rng.random_range(0..negatives.len())];
        out.triplets.push(Triplet {
            anchor: *anchor,
            positive,
            negative,
        });
    }
    out.degenerate = !batch.is_empty() && out.triplets.is_empty();
    out
}

/// Mean distance and triplet terms plus gradients of the total objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// `(1/n)·Σ(L_dist + L_trip)`.
    pub total: f64,
    pub mean_distance: f64,
    /// Triplet sum divided by `n` (skipped anchors count as zero).
    pub mean_triplet: f64,
    pub d_preds: Vec<[f64; 2]>,
    pub d_embeddings: Vec<[f64; EMBEDDING_DIM]>,
}

/// Combined objective over a batch. Triplet indices refer to positions in
/// the batch arrays. The triplet term is always reported; `triplet_weight`
/// scales its contribution to the total and to the gradients.
pub fn total_loss_with_grad(
    preds: &[GazePoint],
    embeddings: &[CalibrationEmbedding],
    gts: &[GazePoint],
    triplets: &[Triplet],
    cfg: &LossConfig,
    triplet_weight: f64,
) -> Result<LossBreakdown> {
    let n = preds.len();
    if embeddings.len() != n || gts.len() != n {
        return Err(Error::Shape(format!(
            "loss inputs have mismatched lengths: {n} predictions, {} embeddings, {} targets",
            embeddings.len(),
            gts.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut d_preds = vec![[0.0; 2]; n];
    let mut d_embeddings = vec![[0.0; EMBEDDING_DIM]; n];
    let mut sum_dist = 0.0;
    for i in 0..n {
        let (v, g) = weighted_distance_loss_grad(&preds[i], &gts[i], cfg)?;
        sum_dist += v;
        d_preds[i] = [g[0] * inv_n, g[1] * inv_n];
    }
    let mut sum_trip = 0.0;
    for t in triplets {
        if t.anchor.max(t.positive).max(t.negative) >= n {
            return Err(Error::Shape(format!("triplet {t:?} indexes past batch of {n}")));
        }
        let (v, g) = triplet_loss_grad(&embeddings[t.anchor], &embeddings[t.positive], &embeddings[t.negative], cfg)?;
        sum_trip += v;
        for (slot, grad) in [t.anchor, t.positive, t.negative].into_iter().zip(g) {
            for k in 0..EMBEDDING_DIM {
                d_embeddings[slot][k] += triplet_weight * grad[k] * inv_n;
            }
        }
    }
    let mean_distance = sum_dist * inv_n;
    let mean_triplet = sum_trip * inv_n;
    Ok(LossBreakdown {
        total: mean_distance + triplet_weight * mean_triplet,
        mean_distance,
        mean_triplet,
        d_preds,
        d_embeddings,
    })
}

/// `(1/n)·Σ(L_dist + L_trip)`.
pub fn total_loss(
    preds: &[GazePoint],
    embeddings: &[CalibrationEmbedding],
    gts: &[GazePoint],
    triplets: &[Triplet],
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(total_loss_with_grad(preds, embeddings, gts, triplets, cfg, 1.0)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    fn unit(v: [f64; 8]) -> CalibrationEmbedding {
        CalibrationEmbedding::from_raw(&v)
    }

    fn axis(k: usize) -> [f64; 8] {
        let mut v = [0.0; 8];
        v[k] = 1.0;
        v
    }

    #[test]
    fn distance_loss_examples() {
        let o = GazePoint::new(0.0, 0.0);
        let at = |d: f64| weighted_distance_loss(&GazePoint::new(d, 0.0), &o, &cfg()).unwrap();
        assert_abs_diff_eq!(at(5.0), 0.0);
        assert_abs_diff_eq!(at(0.0), -0.5);
        assert_abs_diff_eq!(at(10.0), 10.0);
        assert!(weighted_distance_loss(&GazePoint::new(f64::NAN, 0.0), &o, &cfg()).is_err());
    }

    /// Unit vector in the (e0, e_k) plane at chord distance `d` from e0.
    fn at_chord(d: f64, k: usize) -> CalibrationEmbedding {
        let t = 2.0 * (d / 2.0).asin();
        let mut v = axis(0);
        v[0] = t.cos();
        v[k] = t.sin();
        unit(v)
    }

    #[test]
    fn triplet_examples() {
        let c = cfg();
        let a = unit(axis(0));
        assert_abs_diff_eq!(triplet_loss(&a, &a, &at_chord(1.0, 1), &c).unwrap(), 0.0);
        assert_abs_diff_eq!(triplet_loss(&a, &at_chord(0.5, 1), &a, &c).unwrap(), 0.7, epsilon = 1e-6);
        let l = triplet_loss(&a, &at_chord(0.3, 1), &at_chord(0.4, 2), &c).unwrap();
        assert_abs_diff_eq!(l, 0.1, epsilon = 1e-6);
    }

    #[test]
    fn sampler_four_element_batch() {
        let batch = [(10, "A"), (11, "A"), (20, "B"), (21, "B")];
        let session = |idx: usize| if idx < 20 { "A" } else { "B" };
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_triplets(&batch, &mut rng);
            assert_eq!(s.triplets.len(), 4);
            assert!(!s.degenerate && s.skipped.is_empty());
            for t in &s.triplets {
                assert_ne!(t.anchor, t.positive);
                assert_eq!(session(t.anchor), session(t.positive));
                assert_ne!(session(t.anchor), session(t.negative));
            }
        }
    }

    #[test]
    fn sampler_single_session_is_degenerate() {
        let batch = [(0, "A"), (1, "A"), (2, "A")];
        let s = sample_triplets(&batch, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(s.triplets.is_empty() && s.degenerate);
        assert_eq!(s.skipped_fraction(), 1.0);
    }

    #[test]
    fn sampler_is_deterministic_and_skips_lonely_anchors() {
        let batch = [(0, "A"), (1, "A"), (2, "B"), (3, "C"), (4, "A")];
        let a = sample_triplets(&batch, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_triplets(&batch, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.skipped, vec![2, 3]);
        assert!(!a.degenerate);
    }

    #[test]
    fn total_loss_examples() {
        let p = GazePoint::new(3.0, 4.0);
        let e = unit(axis(0));
        assert_abs_diff_eq!(total_loss(&[p], &[e], &[p], &[], &cfg()).unwrap(), -0.5);
        // Every d = τ and the only triplet satisfies its margin.
        let gts = [GazePoint::new(8.0, 4.0), GazePoint::new(3.0, 9.0)];
        let es = [unit(axis(0)), unit(axis(0))];
        let preds = [p, p, p];
        let gts3 = [gts[0], gts[1], GazePoint::new(3.0, -1.0)];
        let es3 = [es[0], es[1], unit(axis(1))];
        let t3 = [Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        assert_abs_diff_eq!(total_loss(&preds, &es3, &gts3, &t3, &cfg()).unwrap(), 0.0, epsilon = 1e-12);
        assert!(total_loss(&preds, &es3[..2], &gts3, &t3, &cfg()).is_err());
    }

    /// Brute-force oracle: the loss recomputed from scratch with the
    /// formulas written out inline.
    fn oracle(preds: &[[f64; 2]], embs: &[[f64; 8]], gts: &[[f64; 2]], trips: &[Triplet]) -> f64 {
        let (a, b, t, m) = (0.1, 2.0, 5.0, 0.2);
        let mut s = 0.0;
        for (p, g) in preds.iter().zip(gts) {
            let d = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
            s += if d > t { b * (d - t) } else { -a * (t - d) };
        }
        let nd = |x: &[f64; 8], y: &[f64; 8]| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        for tr in trips {
            let v = nd(&embs[tr.anchor], &embs[tr.positive]) - nd(&embs[tr.anchor], &embs[tr.negative]) + m;
            s += v.max(0.0);
        }
        s / preds.len() as f64
    }

    fn batch_strategy() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<[f64; 8]>, Vec<[f64; 2]>, u64)> {
        (1usize..=4).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::array::uniform2(-20.0f64..20.0), n),
                proptest::collection::vec(proptest::array::uniform8(-1.0f64..1.0), n),
                proptest::collection::vec(proptest::array::uniform2(-20.0f64..20.0), n),
                any::<u64>(),
            )
        })
    }

    fn random_triplets(n: usize, seed: u64) -> Vec<Triplet> {
        let batch: Vec<(usize, String)> = (0..n).map(|i| (i, format!("s{}", i % 2))).collect();
        sample_triplets(&batch, &mut ChaCha8Rng::seed_from_u64(seed)).triplets
    }

    proptest! {
        #[test]
        fn total_loss_matches_brute_force((preds, raw, gts, seed) in batch_strategy()) {
            prop_assume!(raw.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
            let n = preds.len();
            let embs: Vec<_> = raw.iter().map(|v| unit(*v)).collect();
            let trips = random_triplets(n, seed);
            let gp: Vec<_> = preds.iter().map(|p| GazePoint::new(p[0], p[1])).collect();
            let gg: Vec<_> = gts.iter().map(|p| GazePoint::new(p[0], p[1])).collect();
            let got = total_loss(&gp, &embs, &gg, &trips, &cfg()).unwrap();
            let e64: Vec<_> = embs.iter().map(|e| e.to_f64()).collect();
            let want = oracle(&preds, &e64, &gts, &trips);
            prop_assert!((got - want).abs() < 1e-12);
        }

        #[test]
        fn distance_loss_is_monotone_and_bounded_below(d1 in 0.0f64..50.0, d2 in 0.0f64..50.0) {
            let c = cfg();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(c.distance_value(lo) <= c.distance_value(hi));
            prop_assert!(c.distance_value(lo) >= -c.alpha * c.tau);
        }

        #[test]
        fn distance_gradient_magnitude(x in -30.0f64..30.0, y in -30.0f64..30.0) {
            let d = x.hypot(y);
            prop_assume!(d > 1e-3 && (d - 5.0).abs() > 1e-3);
            let (_, g) = weighted_distance_loss_grad(&GazePoint::new(x, y), &GazePoint::new(0.0, 0.0), &cfg()).unwrap();
            let want = if d < 5.0 { 0.1 } else { 2.0 };
            prop_assert!((g[0].hypot(g[1]) - want).abs() < 1e-9);
            // Central differences on the value.
            let f = |x: f64, y: f64| cfg().distance_value(x.hypot(y));
            let h = 1e-5;
            let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            prop_assert!((gx - g[0]).abs() < 1e-4 * want.max(1.0) && (gy - g[1]).abs() < 1e-4 * want.max(1.0));
        }

        #[test]
        fn triplet_loss_is_bounded(a in proptest::array::uniform8(-1.0f64..1.0), p in proptest::array::uniform8(-1.0f64..1.0), n in proptest::array::uniform8(-1.0f64..1.0)) {
            let ok = |v: &[f64; 8]| v.iter().map(|x| x * x).sum::<f64>() > 1e-3;
            prop_assume!(ok(&a) && ok(&p) && ok(&n));
            let l = triplet_loss(&unit(a), &unit(p), &unit(n), &cfg()).unwrap();
            prop_assert!((0.0..=2.2 + 1e-9).contains(&l));
        }
    }

    /// Gradient of the total loss w.r.t. predictions and (unconstrained)
    /// embedding coordinates against central differences, step 1e-5.
    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let preds: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]).collect();
        let gts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]).collect();
        let embs: Vec<[f64; 8]> = (0..n)
            .map(|_| {
                let v: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                unit(v).to_f64()
            })
            .collect();
        let trips = random_triplets(n, 3);
        // f64 evaluation that does not round embeddings through f32.
        let value = |preds: &[[f64; 2]], embs: &[[f64; 8]]| oracle(preds, embs, &gts, &trips);

        let gp: Vec<_> = preds.iter().map(|p| GazePoint::new(p[0], p[1])).collect();
        let gg: Vec<_> = gts.iter().map(|p| GazePoint::new(p[0], p[1])).collect();
        let ce: Vec<_> = embs.iter().map(|e| unit(*e)).collect();
        let out = total_loss_with_grad(&gp, &ce, &gg, &trips, &cfg(), 1.0).unwrap();
        let h = 1e-5;
        for i in 0..n {
            for k in 0..2 {
                let (mut p, mut m) = (preds.clone(), preds.clone());
                p[i][k] += h;
                m[i][k] -= h;
                let fd = (value(&p, &embs) - value(&m, &embs)) / (2.0 * h);
                let an = out.d_preds[i][k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-2), "pred {i},{k}: {fd} vs {an}");
            }
            for k in 0..8 {
                let (mut p, mut m) = (embs.clone(), embs.clone());
                p[i][k] += h;
                m[i][k] -= h;
                let fd = (value(&preds, &p) - value(&preds, &m)) / (2.0 * h);
                let an = out.d_embeddings[i][k];
                // Embeddings are stored as f32, so analytic directions carry
                // ~1e-7 rounding.
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-2), "emb {i},{k}: {fd} vs {an}");
            }
        }
    }
}
