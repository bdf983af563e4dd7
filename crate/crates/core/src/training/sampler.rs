//! Session-stratified batching: every batch mixes sessions so that each
//! anchor can find both a positive and a negative partner.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Splits `0..sessions.len()` into batches of about `batch_size`.
///
/// Each session's samples are shuffled and spread evenly over the epoch by
/// sorting on `(rank + U)/session_len`, so batches carry every session in
/// proportion. A trailing batch smaller than half the batch size is merged
/// into its predecessor. When the data has at least two sessions, every
/// batch is guaranteed to contain two.
pub fn stratified_batches<R: Rng + ?Sized>(sessions: &[&str], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sessions.iter().enumerate() {
        by_session.entry(s).or_default().push(i);
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(sessions.len());
    for members in by_session.values_mut() {
        members.shuffle(rng);
        let len = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            keyed.push(((rank as f64 + rng.random::<f64>()) / len, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| 2 * b.len() < batch_size) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    if by_session.len() >= 2 {
        repair_single_session(&mut batches, sessions);
        for b in &batches {
            if distinct(b, sessions) < 2 {
                return Err(Error::Training(format!(
                    "batch of {} samples holds a single session; batch size too small for the session mix",
                    b.len()
                )));
            }
        }
    }
    Ok(batches)
}

fn distinct(batch: &[usize], sessions: &[&str]) -> usize {
    let mut seen: Vec<&str> = batch.iter().map(|&i| sessions[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Swaps one member of each single-session batch with a member of another
/// batch that belongs to a different session and can spare it.
fn repair_single_session(batches: &mut [Vec<usize>], sessions: &[&str]) {
    for b in 0..batches.len() {
        if distinct(&batches[b], sessions) >= 2 || batches[b].len() < 2 {
            continue;
        }
        let own = sessions[batches[b][0]];
        'search: for c in 0..batches.len() {
            if c == b {
                continue;
            }
            for k in 0..batches[c].len() {
                let cand = batches[c][k];
                if sessions[cand] == own {
                    continue;
                }
                // The donor must keep two sessions after receiving `own`.
                let mut donor = batches[c].clone();
                donor[k] = batches[b][0];
                if distinct(&donor, sessions) >= 2 {
                    batches[c][k] = batches[b][0];
                    batches[b][0] = cand;
                    break 'search;
                }
            }
        }
    }
}
