use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Split};

/// Assigns every session to train or test, per subject:
///
/// * one session: train;
/// * two or more sessions: exactly one, chosen at random, goes to test and
///   the rest to train (two sessions give one/one, three give two/one).
///
/// Subjects are visited in sorted order so the result depends only on the
/// manifest contents and `seed`.
pub fn split_sessions(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut by_subject: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in &manifest.sessions {
        by_subject
            .entry(s.subject_id.as_str())
            .or_default()
            .push(s.session_id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = BTreeMap::new();
    for sessions in by_subject.values() {
        let test = if sessions.len() >= 2 {
            sessions.choose(&mut rng).copied()
        } else {
            None
        };
        for &id in sessions {
            let tag = if Some(id) == test { Split::Test } else { Split::Train };
            split.insert(id.to_string(), tag);
        }
    }
    DatasetManifest {
        split,
        ..manifest.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SessionRecord;

    fn manifest(counts: &[usize]) -> DatasetManifest {
        let mut sessions = Vec::new();
        for (subj, &n) in counts.iter().enumerate() {
            for k in 0..n {
                sessions.push(SessionRecord {
                    session_id: format!("subj{subj}_s{k}"),
                    subject_id: format!("subj{subj}"),
                    samples: vec![],
                });
            }
        }
        DatasetManifest {
            sessions,
            split: BTreeMap::new(),
            landmark_layout: Default::default(),
            facial_roi: None,
            classes: None,
        }
    }

    #[test]
    fn single_session_subject_goes_to_train() {
        let m = split_sessions(&manifest(&[1]), 3);
        assert_eq!(m.split["subj0_s0"], Split::Train);
    }

    #[test]
    fn two_sessions_split_one_each() {
        for seed in 0..50 {
            let m = split_sessions(&manifest(&[2]), seed);
            let tests = m.split.values().filter(|&&s| s == Split::Test).count();
            assert_eq!(tests, 1);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let m = manifest(&[1, 2, 3, 2, 5]);
        assert_eq!(split_sessions(&m, 11).split, split_sessions(&m, 11).split);
        m.validate().unwrap();
        split_sessions(&m, 11).validate().unwrap();
    }

    #[test]
    fn both_outcomes_occur_across_seeds() {
        let m = manifest(&[2]);
        let firsts: std::collections::HashSet<_> = (0..64)
            .map(|seed| split_sessions(&m, seed).split["subj0_s0"])
            .collect();
        assert_eq!(firsts.len(), 2);
    }
}
