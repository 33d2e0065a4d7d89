//! Inter-broadcast latency statistics over tracks and devices.
//!
//! A track is summarized by the arithmetic mean and population standard
//! deviation of its samples. A device is summarized by the unweighted mean
//! of its track means and by twice the population standard deviation of
//! those means. The measurement precision is the fleet average of the
//! per-device double standard deviations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::PseudonymTrack;
use crate::frames::MacAddress;
use crate::sim::GroundTruthEntry;

/// Errors produced by the statistics layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("track {mac} has no latency samples")]
    EmptyTrack { mac: MacAddress },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("track MAC {mac} does not appear in the ground truth")]
    UnknownMac { mac: MacAddress },
}

/// Mean and spread of one track's latency samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub mac: MacAddress,
    pub sample_count: usize,
    pub ibl_mean_ms: f64,
    /// Population standard deviation of the samples.
    pub ibl_stdev_ms: f64,
}

/// Per-device aggregate over its per-pseudonym track means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub label: String,
    /// Number of tracks (pseudonyms) backing the aggregate.
    pub pseudonym_count: usize,
    /// Unweighted mean of the track means in milliseconds.
    pub mean_of_means_ms: f64,
    /// Twice the population standard deviation of the track means.
    pub double_stdev_ms: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_stdev(values: &[f64], mean: f64) -> f64 {
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Summarizes one track; errors on an empty sample list.
pub fn summarize_track(track: &PseudonymTrack) -> Result<TrackSummary, StatsError> {
    if track.ibl_ms.is_empty() {
        return Err(StatsError::EmptyTrack { mac: track.mac });
    }
    let m = mean(&track.ibl_ms);
    Ok(TrackSummary {
        mac: track.mac,
        sample_count: track.ibl_ms.len(),
        ibl_mean_ms: m,
        ibl_stdev_ms: population_stdev(&track.ibl_ms, m),
    })
}

/// Aggregates one device's track summaries; every track weighs equally.
pub fn summarize_device(label: &str, tracks: &[TrackSummary]) -> Result<DeviceSummary, StatsError> {
    if tracks.is_empty() {
        return Err(StatsError::EmptyInput("no track summaries"));
    }
    let means: Vec<f64> = tracks.iter().map(|t| t.ibl_mean_ms).collect();
    let m = mean(&means);
    Ok(DeviceSummary {
        label: label.to_owned(),
        pseudonym_count: tracks.len(),
        mean_of_means_ms: m,
        double_stdev_ms: 2.0 * population_stdev(&means, m),
    })
}

/// Fleet measurement precision: the mean of the per-device double standard
/// deviations.
pub fn precision_epsilon(devices: &[DeviceSummary]) -> Result<f64, StatsError> {
    if devices.is_empty() {
        return Err(StatsError::EmptyInput("no device summaries"));
    }
    Ok(devices.iter().map(|d| d.double_stdev_ms).sum::<f64>() / devices.len() as f64)
}

/// Groups tracks by the device that owned their MAC and aggregates each
/// group. Output is ordered by label.
pub fn device_summaries(
    tracks: &[PseudonymTrack],
    truth: &[GroundTruthEntry],
) -> Result<Vec<DeviceSummary>, StatsError> {
    let labels: HashMap<MacAddress, &str> =
        truth.iter().map(|e| (e.mac, e.label.as_str())).collect();
    let mut grouped: BTreeMap<&str, Vec<TrackSummary>> = BTreeMap::new();
    for track in tracks {
        let label = labels
            .get(&track.mac)
            .ok_or(StatsError::UnknownMac { mac: track.mac })?;
        grouped.entry(label).or_default().push(summarize_track(track)?);
    }
    grouped
        .into_iter()
        .map(|(label, summaries)| summarize_device(label, &summaries))
        .collect()
}

/// Renders device summaries as an aligned text table, means rounded to two
/// decimals.
pub fn render_device_table(devices: &[DeviceSummary]) -> String {
    let label_width = devices
        .iter()
        .map(|d| d.label.len())
        .chain(std::iter::once("Device".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>10}  {:>9}  {:>17}",
        "Device", "Pseudonyms", "Mean (ms)", "Double stdev (ms)"
    );
    let _ = writeln!(out, "{}", "-".repeat(label_width + 2 + 10 + 2 + 9 + 2 + 17));
    for d in devices {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>10}  {:>9.2}  {:>17.2}",
            d.label, d.pseudonym_count, d.mean_of_means_ms, d.double_stdev_ms
        );
    }
    out
}
