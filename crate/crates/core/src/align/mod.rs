//! Dataset-construction tools: audio synchronization of two recordings and
//! robust transfer of gaze points from the gaze frame into the scene frame.

mod homography;
mod sync;

pub use homography::{
    dlt_homography, ransac_homography, transfer_error, transfer_point, Correspondence, Homography, RansacResult,
    MIN_SUPPORT,
};
pub use sync::{decode_wav, estimate_time_shift, read_wav, write_wav, SyncOptions, SyncResult};

use crate::error::{Error, Result};
use crate::eval::{summarize_errors, ErrorSummary};
use crate::geometry::GazePoint;

/// Error statistics of automatic transfers against manual annotations.
pub fn audit_transfers(transferred: &[GazePoint], manual: &[GazePoint]) -> Result<ErrorSummary> {
    if transferred.len() != manual.len() {
        return Err(Error::InvalidInput(format!(
            "{} transferred points but {} manual points",
            transferred.len(),
            manual.len()
        )));
    }
    let errors: Vec<f64> = transferred.iter().zip(manual).map(|(a, b)| a.distance(b)).collect();
    summarize_errors(&errors, None)
}

fn numbers(text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {width} numbers, found {}", fields.len()),
            });
        }
        let row = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("{f:?} is not a finite number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Parses `x_gaze y_gaze x_scene y_scene` records, one per line. Blank
/// lines and `#` comments are ignored.
pub fn parse_pairs(text: &str) -> Result<Vec<Correspondence>> {
    Ok(numbers(text, 4)?
        .into_iter()
        .map(|r| ([r[0], r[1]], [r[2], r[3]]))
        .collect())
}

/// Parses `x y` records, one per line.
pub fn parse_points(text: &str) -> Result<Vec<GazePoint>> {
    Ok(numbers(text, 2)?.into_iter().map(|r| GazePoint::new(r[0], r[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_examples() {
        let p = vec![GazePoint::new(1.0, 2.0); 3];
        let s = audit_transfers(&p, &p).unwrap();
        assert_eq!((s.mean, s.median), (0.0, 0.0));
        let o = GazePoint::new(0.0, 0.0);
        let t = [GazePoint::new(9.2, 0.0), GazePoint::new(0.0, 25.1), GazePoint::new(9.2, 0.0)];
        assert!((audit_transfers(&t, &[o; 3]).unwrap().median - 9.2).abs() < 1e-12);
        assert!(audit_transfers(&[], &[]).is_err());
        assert!(audit_transfers(&p, &p[..1]).is_err());
    }

    #[test]
    fn parses_records_and_reports_lines() {
        let pairs = parse_pairs("# header\n1 2 3 4\n\n 5 6 7 8 # trailing\n").unwrap();
        assert_eq!(pairs, vec![([1.0, 2.0], [3.0, 4.0]), ([5.0, 6.0], [7.0, 8.0])]);
        assert!(matches!(parse_pairs("1 2 3 4\n1 2 3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_points("1 x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_points("nan 1\n").is_err());
        assert_eq!(parse_points("1.5 -2\n").unwrap(), vec![GazePoint::new(1.5, -2.0)]);
    }
}
