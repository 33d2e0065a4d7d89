//! Pseudonym linking across identity rotations, with evaluation.
//!
//! Two tracks are link candidates when they do not overlap in time, the
//! successor starts within `max_gap_s` seconds of the predecessor's end, and
//! their latency means differ by at most `epsilon_ms`. Candidates are
//! matched greedily by ascending mean gap under a one-to-one constraint:
//! each track gains at most one successor and at most one predecessor.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::PseudonymTrack;
use crate::frames::MacAddress;
use crate::sim::GroundTruthEntry;

/// Errors produced while evaluating link hypotheses.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("hypothesis MAC {mac} does not appear in the ground truth")]
    UnknownMac { mac: MacAddress },
}

/// One proposed identity link: the successor track is claimed to continue
/// the predecessor's device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkHypothesis {
    pub predecessor: MacAddress,
    pub successor: MacAddress,
    /// Absolute difference of the track means, at most epsilon.
    pub mean_gap_ms: f64,
    /// Seconds from predecessor end to successor start, in `[0, max_gap]`.
    pub time_gap_s: f64,
    /// `1 - mean_gap / epsilon`; closer means score higher.
    pub score: f64,
}

/// Confusion counts of a hypothesis set against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEvaluation {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `tp / (tp + fp)`, defined as 1 when no hypotheses exist.
    pub precision: f64,
    /// `tp / (tp + fn)`, defined as 1 when no linkable pairs exist.
    pub recall: f64,
}

/// Proposes links between tracks.
///
/// `epsilon_ms` and `max_gap_s` must be positive. Tracks without samples
/// are ignored. The result is deterministic: candidates are ordered by
/// `(mean_gap, time_gap, predecessor, successor)` before greedy matching.
pub fn link_tracks(
    tracks: &[PseudonymTrack],
    epsilon_ms: f64,
    max_gap_s: f64,
) -> Vec<LinkHypothesis> {
    assert!(
        epsilon_ms > 0.0 && max_gap_s > 0.0,
        "thresholds must be positive"
    );
    let usable: Vec<(&PseudonymTrack, f64)> = tracks
        .iter()
        .filter(|t| !t.ibl_ms.is_empty())
        .map(|t| (t, t.ibl_ms.iter().sum::<f64>() / t.ibl_ms.len() as f64))
        .collect();

    struct Candidate {
        mean_gap_ms: f64,
        time_gap_s: f64,
        pred: usize,
        succ: usize,
    }
    let mut candidates = Vec::new();
    for (i, (pred, pred_mean)) in usable.iter().enumerate() {
        for (j, (succ, succ_mean)) in usable.iter().enumerate() {
            if i == j || succ.first_seen_us < pred.last_seen_us {
                continue;
            }
            let time_gap_s = (succ.first_seen_us - pred.last_seen_us) as f64 / 1e6;
            if time_gap_s > max_gap_s {
                continue;
            }
            let mean_gap_ms = (pred_mean - succ_mean).abs();
            if mean_gap_ms > epsilon_ms {
                continue;
            }
            candidates.push(Candidate {
                mean_gap_ms,
                time_gap_s,
                pred: i,
                succ: j,
            });
        }
    }
    candidates.sort_by(|a, b| {
        a.mean_gap_ms
            .total_cmp(&b.mean_gap_ms)
            .then(a.time_gap_s.total_cmp(&b.time_gap_s))
            .then_with(|| usable[a.pred].0.mac.cmp(&usable[b.pred].0.mac))
            .then_with(|| usable[a.succ].0.mac.cmp(&usable[b.succ].0.mac))
    });

    let mut pred_taken = vec![false; usable.len()];
    let mut succ_taken = vec![false; usable.len()];
    let mut links = Vec::new();
    for c in candidates {
        if pred_taken[c.pred] || succ_taken[c.succ] {
            continue;
        }
        pred_taken[c.pred] = true;
        succ_taken[c.succ] = true;
        links.push(LinkHypothesis {
            predecessor: usable[c.pred].0.mac,
            successor: usable[c.succ].0.mac,
            mean_gap_ms: c.mean_gap_ms,
            time_gap_s: c.time_gap_s,
            score: 1.0 - c.mean_gap_ms / epsilon_ms,
        });
    }
    links
}

/// Scores hypotheses against simulator ground truth.
///
/// A hypothesis is a true positive iff both MACs belong to the same device
/// and the successor's identity interval immediately follows the
/// predecessor's. False negatives are consecutive same-device interval
/// pairs whose tracks both survived the pipeline but which no hypothesis
/// connects.
pub fn evaluate_links(
    hypotheses: &[LinkHypothesis],
    tracks: &[PseudonymTrack],
    truth: &[GroundTruthEntry],
) -> Result<LinkEvaluation, LinkError> {
    // Chronological interval position of every MAC within its device.
    let mut sequences: BTreeMap<&str, Vec<(u64, MacAddress)>> = BTreeMap::new();
    for entry in truth {
        sequences
            .entry(entry.label.as_str())
            .or_default()
            .push((entry.start_us, entry.mac));
    }
    let mut position: HashMap<MacAddress, (&str, usize)> = HashMap::new();
    for (label, seq) in sequences.iter_mut() {
        seq.sort_unstable();
        for (k, &(_, mac)) in seq.iter().enumerate() {
            position.insert(mac, (label, k));
        }
    }

    let surviving: HashSet<MacAddress> = tracks.iter().map(|t| t.mac).collect();
    let mut linkable: HashSet<(MacAddress, MacAddress)> = HashSet::new();
    for seq in sequences.values() {
        for pair in seq.windows(2) {
            let (a, b) = (pair[0].1, pair[1].1);
            if surviving.contains(&a) && surviving.contains(&b) {
                linkable.insert((a, b));
            }
        }
    }

    let mut true_positives = 0;
    let mut false_positives = 0;
    let mut hit: HashSet<(MacAddress, MacAddress)> = HashSet::new();
    for h in hypotheses {
        let &(pred_label, pred_k) = position
            .get(&h.predecessor)
            .ok_or(LinkError::UnknownMac { mac: h.predecessor })?;
        let &(succ_label, succ_k) = position
            .get(&h.successor)
            .ok_or(LinkError::UnknownMac { mac: h.successor })?;
        if pred_label == succ_label && succ_k == pred_k + 1 {
            true_positives += 1;
            hit.insert((h.predecessor, h.successor));
        } else {
            false_positives += 1;
        }
    }
    let false_negatives = linkable.iter().filter(|pair| !hit.contains(pair)).count();

    let ratio = |num: usize, denom: usize| {
        if denom == 0 {
            1.0
        } else {
            num as f64 / denom as f64
        }
    };
    Ok(LinkEvaluation {
        true_positives,
        false_positives,
        false_negatives,
        precision: ratio(true_positives, true_positives + false_positives),
        recall: ratio(true_positives, true_positives + false_negatives),
    })
}

/// Joins hypotheses into maximal predecessor-to-successor chains, each at
/// least two MACs long, ordered by their first hypothesis's appearance.
pub fn chains(hypotheses: &[LinkHypothesis]) -> Vec<Vec<MacAddress>> {
    let succ_of: HashMap<MacAddress, MacAddress> = hypotheses
        .iter()
        .map(|h| (h.predecessor, h.successor))
        .collect();
    let is_succ: HashSet<MacAddress> = hypotheses.iter().map(|h| h.successor).collect();
    let mut out = Vec::new();
    for h in hypotheses {
        if is_succ.contains(&h.predecessor) {
            continue;
        }
        let mut chain = vec![h.predecessor];
        let mut cursor = h.predecessor;
        while let Some(&next) = succ_of.get(&cursor) {
            // One-to-one matching cannot produce cycles, but stay safe.
            if chain.contains(&next) {
                break;
            }
            chain.push(next);
            cursor = next;
        }
        if chain.len() > 1 {
            out.push(chain);
        }
    }
    out
}
