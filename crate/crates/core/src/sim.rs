//! Deterministic broadcast traffic generator with rotating identities.
//!
//! Each simulated device tiles the run with identity intervals whose lengths
//! are drawn uniformly from its rotation bounds. At every rotation the MAC,
//! the pseudonym, and the trailer are drawn fresh together, and the interval
//! gets its own latency mean drawn from `Normal(ibl_mean_ms,
//! pseudonym_sigma_ms)`. Successive broadcast gaps are
//! `Normal(interval_mean, broadcast_jitter_ms)` clamped below at 1 ms; a gap
//! that straddles a rotation simply carries the stream into the next
//! identity. All device streams are merged in time order before the receiver
//! model applies independent loss and timestamp quantization.
//!
//! Profile files and ground-truth files are line-delimited JSON.

use std::io::{self, BufRead, BufReader, Read, Write};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::CaptureRecord;
use crate::frames::{GaenPayload, MacAddress, PSEUDONYM_LEN};

/// Smallest broadcast gap the generator will emit, in milliseconds.
pub const MIN_GAP_MS: f64 = 1.0;

/// Seed of the bundled desk-scale replication run. With the stock fleet
/// this run recovers every configured mean in order, keeps recovered
/// spreads within twice their configured width, and still exhibits the
/// linking confusion between the near-identical profiles.
pub const REFERENCE_SEED: u64 = 9211;

const FLAGS_BLOCK: [u8; 3] = [0x02, 0x01, 0x1A];

/// Errors produced by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("profile {label:?}: {reason}")]
    InvalidProfile { label: String, reason: String },
    #[error("no device profiles supplied")]
    NoProfiles,
    #[error("duration must be a positive number of seconds, got {0}")]
    InvalidDuration(f64),
    #[error("receiver model: {0}")]
    InvalidReceiver(String),
    #[error("profile file line {line}: {reason}")]
    MalformedProfile { line: usize, reason: String },
    #[error("ground truth line {line}: {reason}")]
    MalformedTruth { line: usize, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<io::Error> for SimError {
    fn from(e: io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

/// Broadcast behaviour of one simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub label: String,
    /// Device-level mean inter-broadcast latency in milliseconds.
    pub ibl_mean_ms: f64,
    /// Standard deviation of per-pseudonym latency means in milliseconds.
    pub pseudonym_sigma_ms: f64,
    /// Standard deviation of individual broadcast gaps in milliseconds.
    pub broadcast_jitter_ms: f64,
    /// Shortest identity lifetime in seconds.
    pub rotation_min_s: f64,
    /// Longest identity lifetime in seconds.
    pub rotation_max_s: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: &str| {
            Err(SimError::InvalidProfile {
                label: self.label.clone(),
                reason: reason.to_owned(),
            })
        };
        if !(self.ibl_mean_ms.is_finite() && self.ibl_mean_ms > 0.0) {
            return fail("ibl_mean_ms must be positive");
        }
        if !(self.pseudonym_sigma_ms.is_finite() && self.pseudonym_sigma_ms >= 0.0) {
            return fail("pseudonym_sigma_ms must be non-negative");
        }
        if !(self.broadcast_jitter_ms.is_finite() && self.broadcast_jitter_ms >= 0.0) {
            return fail("broadcast_jitter_ms must be non-negative");
        }
        if !(self.rotation_min_s.is_finite()
            && self.rotation_max_s.is_finite()
            && 0.0 < self.rotation_min_s
            && self.rotation_min_s <= self.rotation_max_s)
        {
            return fail("rotation bounds must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

/// Loss and clock behaviour of the capturing receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverModel {
    /// Probability of dropping each record independently.
    pub loss_probability: f64,
    /// Timestamp grid in milliseconds; 0 keeps microsecond timestamps.
    pub quantization_ms: f64,
}

impl Default for ReceiverModel {
    fn default() -> Self {
        ReceiverModel {
            loss_probability: 0.0,
            quantization_ms: 0.0,
        }
    }
}

impl ReceiverModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.loss_probability >= 0.0 && self.loss_probability <= 1.0) {
            return Err(SimError::InvalidReceiver(format!(
                "loss probability {} outside [0, 1]",
                self.loss_probability
            )));
        }
        if !(self.quantization_ms.is_finite() && self.quantization_ms >= 0.0) {
            return Err(SimError::InvalidReceiver(
                "quantization must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One identity interval a device actually used.
///
/// A device's entries are disjoint and contiguous: each interval ends where
/// the next begins, and the last one ends at the run boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub label: String,
    #[serde(with = "hex::serde")]
    pub pseudonym: [u8; PSEUDONYM_LEN],
    pub mac: MacAddress,
    pub start_us: u64,
    pub end_us: u64,
}

struct Identity {
    mac: MacAddress,
    adv_data: Vec<u8>,
    gap_mean_ms: f64,
    end_ms: f64,
}

/// Runs the generator and returns time-sorted records plus ground truth.
///
/// Identical inputs and seed produce byte-identical outputs.
pub fn simulate(
    profiles: &[DeviceProfile],
    duration_s: f64,
    receiver: &ReceiverModel,
    seed: u64,
) -> Result<(Vec<CaptureRecord>, Vec<GroundTruthEntry>), SimError> {
    if profiles.is_empty() {
        return Err(SimError::NoProfiles);
    }
    for profile in profiles {
        profile.validate()?;
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidDuration(duration_s));
    }
    receiver.validate()?;

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let device_seeds: Vec<u64> = profiles.iter().map(|_| master.random()).collect();
    let receiver_seed: u64 = master.random();

    let duration_ms = duration_s * 1000.0;
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (profile, &dev_seed) in profiles.iter().zip(&device_seeds) {
        let mut rng = ChaCha8Rng::seed_from_u64(dev_seed);

        // Identity schedule tiling [0, duration).
        let mut identities = Vec::new();
        let mut start_ms = 0.0f64;
        while start_ms < duration_ms {
            let len_s = rng.random_range(profile.rotation_min_s..=profile.rotation_max_s);
            let end_ms = (start_ms + len_s * 1000.0).min(duration_ms);
            let mut pseudonym = [0u8; PSEUDONYM_LEN];
            rng.fill_bytes(&mut pseudonym);
            let mut mac_bytes = [0u8; 6];
            rng.fill_bytes(&mut mac_bytes);
            let mut trailer = [0u8; 8];
            rng.fill_bytes(&mut trailer);
            let mac = MacAddress::new(mac_bytes);
            let gap_mean_ms = sample_normal(&mut rng, profile.ibl_mean_ms, profile.pseudonym_sigma_ms);
            identities.push(Identity {
                mac,
                adv_data: GaenPayload {
                    flags: FLAGS_BLOCK,
                    pseudonym,
                    trailer,
                }
                .to_adv_data(),
                gap_mean_ms,
                end_ms,
            });
            truth.push(GroundTruthEntry {
                label: profile.label.clone(),
                pseudonym,
                mac,
                start_us: (start_ms * 1000.0).round() as u64,
                end_us: (end_ms * 1000.0).round() as u64,
            });
            start_ms = end_ms;
        }

        // Broadcast stream; gaps use the identity active when the gap starts.
        let mut idx = 0usize;
        let mut t_ms = 0.0f64;
        loop {
            let gap = sample_normal(
                &mut rng,
                identities[idx].gap_mean_ms,
                profile.broadcast_jitter_ms,
            )
            .max(MIN_GAP_MS);
            t_ms += gap;
            if t_ms >= duration_ms {
                break;
            }
            while t_ms >= identities[idx].end_ms {
                idx += 1;
            }
            records.push(CaptureRecord {
                ts_us: (t_ms * 1000.0).round() as u64,
                mac: identities[idx].mac,
                adv_data: identities[idx].adv_data.clone(),
            });
        }
    }

    records.sort_unstable_by_key(|r| (r.ts_us, r.mac));

    let mut rx = ChaCha8Rng::seed_from_u64(receiver_seed);
    let mut kept = Vec::with_capacity(records.len());
    for mut record in records {
        if rx.random_bool(receiver.loss_probability) {
            continue;
        }
        if receiver.quantization_ms > 0.0 {
            let grid_us = receiver.quantization_ms * 1000.0;
            record.ts_us = ((record.ts_us as f64 / grid_us).round() * grid_us).round() as u64;
        }
        kept.push(record);
    }
    Ok((kept, truth))
}

fn sample_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma)
        .expect("validated parameters")
        .sample(rng)
}

/// Profiles of the 15-handset reference fleet.
///
/// Labels and device-level means follow the published measurement campaign;
/// `pseudonym_sigma_ms` is half of each handset's double standard deviation.
/// Rotation bounds are 600 to 1200 seconds and broadcast jitter is 5 ms.
pub fn table1_profiles() -> Vec<DeviceProfile> {
    const FLEET: [(&str, f64, f64); 15] = [
        ("Google Pixel 4a (5G)", 286.38, 0.41),
        ("Huawei Mate 10", 283.04, 0.24),
        ("Huawei P10", 283.02, 0.30),
        ("Huawei P10 Lite", 261.92, 0.21),
        ("iPhone 13", 274.98, 0.19),
        ("iPhone 13 Mini a", 274.96, 0.12),
        ("iPhone 13 Mini b", 275.36, 0.06),
        ("iPhone 13 Mini c", 275.05, 0.16),
        ("iPhone X", 271.74, 0.24),
        ("OnePlus Nord", 286.28, 0.20),
        ("OnePlus Nord 2", 270.00, 0.44),
        ("Redmi Note 11 Pro", 286.01, 0.67),
        ("Samsung Galaxy A51", 286.11, 0.31),
        ("Samsung Galaxy A6", 283.10, 0.10),
        ("Samsung Galaxy J7", 282.96, 0.12),
    ];
    FLEET
        .iter()
        .map(|&(label, mean, double_stdev)| DeviceProfile {
            label: label.to_owned(),
            ibl_mean_ms: mean,
            pseudonym_sigma_ms: double_stdev / 2.0,
            broadcast_jitter_ms: 5.0,
            rotation_min_s: 600.0,
            rotation_max_s: 1200.0,
        })
        .collect()
}

/// Writes profiles as line-delimited JSON.
pub fn write_profiles<W: Write>(mut writer: W, profiles: &[DeviceProfile]) -> Result<(), SimError> {
    for profile in profiles {
        serde_json::to_writer(&mut writer, profile).map_err(|e| SimError::Io(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a profile file written by [`write_profiles`].
pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<DeviceProfile>, SimError> {
    let mut profiles = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let profile: DeviceProfile =
            serde_json::from_str(&line).map_err(|e| SimError::MalformedProfile {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        profiles.push(profile);
    }
    Ok(profiles)
}

/// Writes ground truth as line-delimited JSON.
pub fn write_ground_truth<W: Write>(
    mut writer: W,
    entries: &[GroundTruthEntry],
) -> Result<(), SimError> {
    for entry in entries {
        serde_json::to_writer(&mut writer, entry).map_err(|e| SimError::Io(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a ground-truth file written by [`write_ground_truth`].
pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<GroundTruthEntry>, SimError> {
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: GroundTruthEntry =
            serde_json::from_str(&line).map_err(|e| SimError::MalformedTruth {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        entries.push(entry);
    }
    Ok(entries)
}
