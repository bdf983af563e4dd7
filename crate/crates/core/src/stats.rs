//! Semantic statistics over scene label maps and gaze points: how often a
//! class appears, how much of the image it covers, and how often it is
//! fixated.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::geometry::GazePoint;
use crate::image::LabelMap;

/// Class names indexed `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > 256 {
            return Err(Error::InvalidInput(format!(
                "class table needs 1..=256 classes, got {}",
                names.len()
            )));
        }
        Ok(Self { names })
    }

    /// Parses `index name` lines; indices must be unique and cover `0..n`.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, char::is_whitespace);
            let idx = parts.next().unwrap_or("");
            let name = parts.next().map(str::trim).unwrap_or("");
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("{idx:?} is not a class index"),
            })?;
            if name.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "missing class name".into(),
                });
            }
            entries.push((idx, name.to_string(), i + 1));
        }
        entries.sort_by_key(|e| e.0);
        for (k, (idx, _, line)) in entries.iter().enumerate() {
            if *idx != k {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("class indices must be unique and contiguous from 0; found {idx} at position {k}"),
                });
            }
        }
        Self::new(entries.into_iter().map(|e| e.1).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn check(&self, map: &LabelMap) -> Result<()> {
        match map.labels().iter().find(|&&l| usize::from(l) >= self.len()) {
            Some(l) => Err(Error::InvalidInput(format!(
                "label {l} is outside the {}-class table",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

/// Fraction of maps in which each class occurs at least once.
pub fn image_class_presence(maps: &[&LabelMap], table: &ClassTable) -> Result<Vec<f64>> {
    if maps.is_empty() {
        return Err(Error::InvalidInput("no label maps".into()));
    }
    let mut counts = vec![0usize; table.len()];
    for m in maps {
        table.check(m)?;
        let mut seen = vec![false; table.len()];
        for &l in m.labels() {
            seen[usize::from(l)] = true;
        }
        for (c, s) in counts.iter_mut().zip(seen) {
            *c += usize::from(s);
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / maps.len() as f64).collect())
}

/// Fraction of all pixels carrying each class.
pub fn pixel_class_share(maps: &[&LabelMap], table: &ClassTable) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; table.len()];
    for m in maps {
        table.check(m)?;
        for &l in m.labels() {
            counts[usize::from(l)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("no labeled pixels".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationStats {
    /// Per-class fraction of the counted fixations.
    pub fractions: Vec<f64>,
    pub counts: Vec<usize>,
    pub counted: usize,
    /// Indices of gazes that fell outside their map.
    pub skipped: Vec<usize>,
}

/// Integer pixel under `g`, rounding half away from zero; `None` off the map.
pub fn gaze_pixel(g: &GazePoint, map: &LabelMap) -> Option<(usize, usize)> {
    if !g.is_finite() {
        return None;
    }
    let (x, y) = (g.x.round(), g.y.round());
    let inside = x >= 0.0 && y >= 0.0 && x < map.width() as f64 && y < map.height() as f64;
    inside.then_some((x as usize, y as usize))
}

/// Class under each gaze point, counted per class. `gazes[i]` is looked up
/// in `maps[i]`; points off the map are skipped and reported.
pub fn fixation_class_distribution(
    maps: &[&LabelMap],
    gazes: &[GazePoint],
    table: &ClassTable,
) -> Result<FixationStats> {
    if maps.len() != gazes.len() {
        return Err(Error::InvalidInput(format!(
            "{} label maps but {} gaze points",
            maps.len(),
            gazes.len()
        )));
    }
    let mut counts = vec![0usize; table.len()];
    let mut skipped = Vec::new();
    for (i, (m, g)) in maps.iter().zip(gazes).enumerate() {
        table.check(m)?;
        match gaze_pixel(g, m) {
            Some((x, y)) => counts[usize::from(m.get(y, x))] += 1,
            None => skipped.push(i),
        }
    }
    let counted: usize = counts.iter().sum();
    let fractions = if counted == 0 {
        vec![0.0; table.len()]
    } else {
        counts.iter().map(|&c| c as f64 / counted as f64).collect()
    };
    Ok(FixationStats {
        fractions,
        counts,
        counted,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsReport {
    pub classes: Vec<String>,
    pub maps: usize,
    pub image_presence: Vec<f64>,
    pub pixel_share: Vec<f64>,
    pub fixation: FixationStats,
}

/// All three statistics over every sample of the manifest that has a label
/// map. Fixations use the samples that also carry a gaze point.
pub fn dataset_stats(manifest: &DatasetManifest, base_dir: &Path, table: &ClassTable) -> Result<StatsReport> {
    let mut maps = Vec::new();
    let mut gaze_maps = Vec::new();
    let mut gazes = Vec::new();
    for s in &manifest.sessions {
        for rec in &s.samples {
            if let Some(p) = &rec.label_map {
                let map = LabelMap::load_png(&base_dir.join(p))?;
                if let Some(g) = rec.gaze {
                    gaze_maps.push(maps.len());
                    gazes.push(g);
                }
                maps.push(map);
            }
        }
    }
    let refs: Vec<&LabelMap> = maps.iter().collect();
    let fix_refs: Vec<&LabelMap> = gaze_maps.iter().map(|&i| &maps[i]).collect();
    Ok(StatsReport {
        classes: table.names().to_vec(),
        maps: maps.len(),
        image_presence: image_class_presence(&refs, table)?,
        pixel_share: pixel_class_share(&refs, table)?,
        fixation: fixation_class_distribution(&fix_refs, &gazes, table)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(n: usize) -> ClassTable {
        ClassTable::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn presence_examples() {
        let a = LabelMap::new(1, 2, vec![0, 3]).unwrap();
        let b = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let p = image_class_presence(&[&a, &b], &table(5)).unwrap();
        assert_eq!(p, vec![1.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn share_examples() {
        let m = LabelMap::new(2, 2, vec![0, 0, 1, 2]).unwrap();
        assert_eq!(pixel_class_share(&[&m], &table(3)).unwrap(), vec![0.5, 0.25, 0.25]);
        let u = LabelMap::new(2, 2, vec![2; 4]).unwrap();
        assert_eq!(pixel_class_share(&[&u], &table(3)).unwrap()[2], 1.0);
        assert!(pixel_class_share(&[&u], &table(2)).is_err());
    }

    #[test]
    fn fixation_examples() {
        let m = LabelMap::new(2, 3, vec![0, 1, 1, 2, 2, 2]).unwrap();
        let g = [GazePoint::new(1.4, 0.2), GazePoint::new(0.5, 0.5), GazePoint::new(2.6, 0.0), GazePoint::new(-0.6, 0.0)];
        let f = fixation_class_distribution(&[&m; 4], &g, &table(3)).unwrap();
        // (1,0) -> 1; (1,1) -> 2 (half rounds away from zero); (3,0) off; (-1,0) off.
        assert_eq!(f.counts, vec![0, 1, 1]);
        assert_eq!(f.skipped, vec![2, 3]);
        assert_eq!(f.fractions, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn parses_class_tables() {
        let t = ClassTable::parse("# classes\n1 car\n0 background\n2 traffic sign\n").unwrap();
        assert_eq!(t.names(), &["background", "car", "traffic sign"]);
        assert!(matches!(ClassTable::parse("0 a\n2 b\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(ClassTable::parse("0 a\n0 b\n"), Err(Error::Parse { .. })));
        assert!(ClassTable::parse("x a\n").is_err());
        assert!(ClassTable::parse("0\n").is_err());
        assert!(ClassTable::parse("").is_err());
    }

    fn corpus() -> impl Strategy<Value = (Vec<LabelMap>, Vec<GazePoint>)> {
        (1usize..6, 1usize..6, 1usize..8).prop_flat_map(|(h, w, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(0u8..4, h * w), n),
                proptest::collection::vec((-1.0f64..7.0, -1.0f64..7.0), n),
            )
                .prop_map(move |(ls, gs)| {
                    (
                        ls.into_iter().map(|l| LabelMap::new(h, w, l).unwrap()).collect(),
                        gs.into_iter().map(|(x, y)| GazePoint::new(x, y)).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn sums_and_permutation_invariance((maps, gazes) in corpus(), rot in 0usize..8) {
            let t = table(4);
            let refs: Vec<&LabelMap> = maps.iter().collect();
            let share = pixel_class_share(&refs, &t).unwrap();
            prop_assert!((share.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let fix = fixation_class_distribution(&refs, &gazes, &t).unwrap();
            if fix.counted > 0 {
                prop_assert!((fix.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let k = rot % refs.len();
            let mut r2 = refs.clone();
            r2.rotate_left(k);
            let mut g2 = gazes.clone();
            g2.rotate_left(k);
            prop_assert_eq!(pixel_class_share(&r2, &t).unwrap(), share);
            prop_assert_eq!(image_class_presence(&r2, &t).unwrap(), image_class_presence(&refs, &t).unwrap());
            prop_assert_eq!(fixation_class_distribution(&r2, &g2, &t).unwrap().fractions, fix.fractions);
        }
    }
}
