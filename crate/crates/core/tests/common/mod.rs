//! Shared helpers for the integration suites: an independent brute-force
//! entropy oracle, generators for microsecond-grain data, and the seeded
//! fleet fixture.
//!
//! The oracle maximizes over a dense offset grid instead of enumerating
//! partition-changing offsets, so agreement with the library is meaningful.
//! Data and bin widths are kept on a binary grid (multiples of 2^-10 ms,
//! about a microsecond): such values, their remainders, and their bin
//! boundaries are all exact in an f64, so distinct remainders sit at least
//! one grid step (2^-10 ms) apart — wider than the sweep step of at most
//! 2 ms / 10^4 — and the sweep cannot step over a partition, while a
//! decimal grid would manufacture spurious hair-thin partitions out of
//! representation error.

// Each integration test target compiles this module separately and none of
// them uses every helper.
#![allow(dead_code)]

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use iblab::capture::{build_tracks, PipelineConfig, PseudonymTrack};
use iblab::sim::{simulate, table1_profiles, DeviceProfile, GroundTruthEntry, ReceiverModel};

/// Maximal entropy over `offsets` evenly spaced bin offsets.
pub fn dense_sweep_max_entropy(xs: &[f64], epsilon: f64, offsets: usize) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut best = f64::NEG_INFINITY;
    for j in 0..offsets {
        let delta = j as f64 * epsilon / offsets as f64;
        // Bin indices are non-decreasing over sorted values, so occupied
        // bins are runs.
        let mut h = 0.0;
        let mut run = 0usize;
        let mut current = i64::MIN;
        for &x in &sorted {
            let idx = ((x - delta) / epsilon).floor() as i64;
            if idx != current {
                if run > 0 {
                    let p = run as f64 / n;
                    h -= p * p.log2();
                }
                current = idx;
                run = 0;
            }
            run += 1;
        }
        let p = run as f64 / n;
        h -= p * p.log2();
        if h > best {
            best = h;
        }
    }
    best
}

/// Random values on the binary 2^-10 ms grid inside `[low_ms, high_ms]`.
pub fn grid_values(rng: &mut ChaCha8Rng, count: usize, low_ms: f64, high_ms: f64) -> Vec<f64> {
    let low = (low_ms * 1024.0).round() as i64;
    let high = (high_ms * 1024.0).round() as i64;
    (0..count)
        .map(|_| rng.random_range(low..=high) as f64 / 1024.0)
        .collect()
}

/// Random bin width on the binary 2^-10 ms grid inside `[low_ms, high_ms]`.
pub fn grid_epsilon(rng: &mut ChaCha8Rng, low_ms: f64, high_ms: f64) -> f64 {
    let low = (low_ms * 1024.0).round() as i64;
    let high = (high_ms * 1024.0).round() as i64;
    rng.random_range(low..=high) as f64 / 1024.0
}

/// The two-hour reference-fleet run: 5% loss, microsecond timestamps, and
/// tracks spanning whole pseudonym cycles.
pub fn fleet_tracks(
    seed: u64,
) -> (Vec<DeviceProfile>, Vec<PseudonymTrack>, Vec<GroundTruthEntry>) {
    let profiles = table1_profiles();
    let receiver = ReceiverModel {
        loss_probability: 0.05,
        quantization_ms: 0.0,
    };
    let (records, truth) = simulate(&profiles, 7200.0, &receiver, seed).expect("valid fleet run");
    let cfg = PipelineConfig {
        session_limit_s: 7200.0,
        ..PipelineConfig::default()
    };
    let tracks = build_tracks(records, &cfg).expect("valid pipeline config");
    (profiles, tracks, truth)
}
