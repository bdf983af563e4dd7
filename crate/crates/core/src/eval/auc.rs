//! Saliency-style AUC for a point prediction.
//!
//! The score map is `s(q) = -‖q − pred‖`. The annotated gaze point is the
//! single positive; negatives are in-frame locations. The AUC is the
//! probability that the positive outscores a negative, ties counting half.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::GazePoint;

fn check(pred: &GazePoint, gt: &GazePoint, size: (f64, f64)) -> Result<()> {
    if !(size.0 > 0.0 && size.1 > 0.0) {
        return Err(Error::InvalidInput(format!("image size must be positive, got {size:?}")));
    }
    pred.ensure_finite("prediction")?;
    if !gt.in_frame(size.0, size.1) {
        return Err(Error::InvalidInput(format!("gaze {gt:?} is outside the {size:?} frame")));
    }
    Ok(())
}

fn rank_credit(pos_d2: f64, neg_d2: f64) -> f64 {
    match neg_d2.total_cmp(&pos_d2) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    }
}

/// Monte-Carlo AUC with `negatives` locations drawn uniformly from the
/// continuous frame `[0, w)×[0, h)`.
pub fn auc_score<R: Rng + ?Sized>(
    pred: &GazePoint,
    gt: &GazePoint,
    size: (f64, f64),
    negatives: usize,
    rng: &mut R,
) -> Result<f64> {
    check(pred, gt, size)?;
    if negatives == 0 {
        return Err(Error::InvalidInput("AUC needs at least one negative".into()));
    }
    let pos = gt.distance_sq(pred);
    let mut credit = 0.0;
    for _ in 0..negatives {
        let q = GazePoint::new(rng.random::<f64>() * size.0, rng.random::<f64>() * size.1);
        credit += rank_credit(pos, q.distance_sq(pred));
    }
    Ok(credit / negatives as f64)
}

/// Exact AUC against every pixel center of a `w×h` grid.
pub fn auc_full_grid(pred: &GazePoint, gt: &GazePoint, width: usize, height: usize) -> Result<f64> {
    check(pred, gt, (width as f64, height as f64))?;
    let pos = gt.distance_sq(pred);
    let mut credit = 0.0;
    for y in 0..height {
        for x in 0..width {
            let q = GazePoint::new(x as f64 + 0.5, y as f64 + 0.5);
            credit += rank_credit(pos, q.distance_sq(pred));
        }
    }
    Ok(credit / (width * height) as f64)
}

/// Average of [`auc_score`] over aligned prediction/ground-truth lists.
pub fn mean_auc<R: Rng + ?Sized>(
    preds: &[GazePoint],
    gts: &[GazePoint],
    size: (f64, f64),
    negatives: usize,
    rng: &mut R,
) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "AUC needs aligned non-empty lists, got {} predictions and {} points",
            preds.len(),
            gts.len()
        )));
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += auc_score(p, g, size, negatives, rng)?;
    }
    Ok(sum / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = GazePoint::new(10.3, 20.7);
        assert_eq!(auc_score(&g, &g, (64.0, 64.0), 1000, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn far_prediction_scores_near_zero() {
        let gt = GazePoint::new(0.5, 0.5);
        let pred = GazePoint::new(31.5, 31.5);
        assert!(auc_full_grid(&pred, &gt, 32, 32).unwrap() < 0.01);
    }

    #[test]
    fn monte_carlo_agrees_with_full_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pred = GazePoint::new(rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
            let gt = GazePoint::new(rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
            let grid = auc_full_grid(&pred, &gt, 64, 64).unwrap();
            let mc = auc_score(&pred, &gt, (64.0, 64.0), 10_000, &mut rng).unwrap();
            assert!((grid - mc).abs() < 0.02, "{grid} vs {mc}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = GazePoint::new(1.0, 1.0);
        assert!(auc_score(&g, &g, (8.0, 8.0), 0, &mut rng).is_err());
        assert!(auc_score(&g, &GazePoint::new(9.0, 1.0), (8.0, 8.0), 5, &mut rng).is_err());
        assert!(mean_auc(&[], &[], (8.0, 8.0), 5, &mut rng).is_err());
    }
}
