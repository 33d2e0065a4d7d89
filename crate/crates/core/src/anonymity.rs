//! Entropy-based fingerprinting-anonymity metric.
//!
//! Values are binned into left-closed width-`epsilon` intervals anchored at
//! a bin offset `delta` in `[0, epsilon)`: value `x` lands in bin
//! `floor((x - delta) / epsilon)`. The metric takes the Shannon entropy of
//! the occupancy distribution, maximized over all offsets, and reports the
//! anonymity degree `A = 1 - H / log2(n)`.
//!
//! The maximization is exact: the partition of the data changes only when
//! the offset crosses a residue `x mod epsilon`, so evaluating each residue
//! plus one representative inside every gap between consecutive sorted
//! unique residues covers all distinct partitions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced by the anonymity metric.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnonymityError {
    #[error("no data points")]
    EmptyData,
    #[error("bin width must be positive and finite")]
    NonPositiveEpsilon,
    #[error("bin offset must lie in [0, epsilon)")]
    InvalidOffset,
    #[error("data must be finite")]
    NonFiniteData,
    #[error("anonymity is undefined for a single data point")]
    SinglePoint,
}

/// Occupancy histogram for one `(epsilon, offset)` binning.
///
/// Only occupied bins are stored, ordered by bin index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub epsilon_ms: f64,
    pub offset_ms: f64,
    /// `(bin index, count)` pairs; every count is at least 1.
    pub bins: Vec<(i64, usize)>,
    /// Total number of data points.
    pub n: usize,
}

/// Result of the fingerprinting-anonymity computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymityReport {
    pub n: usize,
    pub epsilon_ms: f64,
    /// Offset in `[0, epsilon)` witnessing the maximal entropy.
    pub best_offset_ms: f64,
    /// Maximal Shannon entropy of the binning, in bits.
    pub entropy_bits: f64,
    /// Degree `1 - H / log2(n)`; 0 means every point is distinguishable.
    pub anonymity: f64,
    /// `2^H`, the equivalent count of uniformly distinguishable devices.
    pub distinguishable_devices: f64,
}

fn validate(xs: &[f64], epsilon: f64) -> Result<(), AnonymityError> {
    if xs.is_empty() {
        return Err(AnonymityError::EmptyData);
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(AnonymityError::NonPositiveEpsilon);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(AnonymityError::NonFiniteData);
    }
    Ok(())
}

/// Bins values at the given offset.
pub fn histogram(xs: &[f64], epsilon_ms: f64, offset_ms: f64) -> Result<Histogram, AnonymityError> {
    validate(xs, epsilon_ms)?;
    if !(offset_ms >= 0.0 && offset_ms < epsilon_ms) {
        return Err(AnonymityError::InvalidOffset);
    }
    Ok(bin_values(xs, epsilon_ms, offset_ms))
}

fn bin_values(xs: &[f64], epsilon: f64, offset: f64) -> Histogram {
    let mut indices: Vec<i64> = xs
        .iter()
        .map(|&x| ((x - offset) / epsilon).floor() as i64)
        .collect();
    indices.sort_unstable();
    let mut bins: Vec<(i64, usize)> = Vec::new();
    for idx in indices {
        match bins.last_mut() {
            Some((last, count)) if *last == idx => *count += 1,
            _ => bins.push((idx, 1)),
        }
    }
    Histogram {
        epsilon_ms: epsilon,
        offset_ms: offset,
        bins,
        n: xs.len(),
    }
}

/// Shannon entropy of the occupancy distribution, in bits.
pub fn entropy(hist: &Histogram) -> f64 {
    let n = hist.n as f64;
    let h: f64 = hist
        .bins
        .iter()
        .map(|&(_, count)| {
            let p = count as f64 / n;
            -p * p.log2()
        })
        .sum();
    // A lone full bin contributes -1 * log2(1), an IEEE negative zero;
    // normalize the sign so reports never show "-0".
    h + 0.0
}

/// Offsets at which the partition can change, sorted ascending.
fn candidate_offsets(xs: &[f64], epsilon: f64) -> Vec<f64> {
    let mut residues: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let r = x.rem_euclid(epsilon);
            // rem_euclid may round up to epsilon itself.
            if r >= epsilon {
                0.0
            } else {
                r
            }
        })
        .collect();
    residues.sort_unstable_by(f64::total_cmp);
    residues.dedup();
    let mut candidates = residues.clone();
    for pair in residues.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    if residues.len() > 1 {
        // Gap that wraps around the residue circle.
        let wrap = (residues.last().unwrap() + residues[0] + epsilon) / 2.0;
        let wrap = wrap.rem_euclid(epsilon);
        if wrap < epsilon {
            candidates.push(wrap);
        }
    }
    candidates.sort_unstable_by(f64::total_cmp);
    candidates.dedup();
    candidates
}

/// Maximal entropy over all bin offsets, with a witnessing offset.
///
/// Returns `(entropy_bits, offset)`; among offsets tied on entropy the
/// smallest one wins. Candidate evaluation runs on the current rayon pool.
pub fn max_entropy(xs: &[f64], epsilon_ms: f64) -> Result<(f64, f64), AnonymityError> {
    validate(xs, epsilon_ms)?;
    let candidates = candidate_offsets(xs, epsilon_ms);
    let best = candidates
        .par_iter()
        .map(|&offset| (entropy(&bin_values(xs, epsilon_ms, offset)), offset))
        .reduce(
            || (f64::NEG_INFINITY, f64::INFINITY),
            |a, b| {
                // Max entropy; ties resolved toward the smaller offset. The
                // comparison is a total order, so the reduction is
                // deterministic under any work split.
                if a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1) {
                    a
                } else {
                    b
                }
            },
        );
    Ok(best)
}

/// Anonymity degree and distinguishable-device count from an entropy value.
pub fn degree_from_entropy(entropy_bits: f64, n: usize) -> Result<(f64, f64), AnonymityError> {
    match n {
        0 => Err(AnonymityError::EmptyData),
        1 => Err(AnonymityError::SinglePoint),
        _ => {
            let anonymity = (1.0 - entropy_bits / (n as f64).log2()).clamp(0.0, 1.0);
            Ok((anonymity, entropy_bits.exp2()))
        }
    }
}

/// Computes the full fingerprinting-anonymity report for a set of track
/// means.
pub fn fingerprinting_anonymity(
    xs: &[f64],
    epsilon_ms: f64,
) -> Result<AnonymityReport, AnonymityError> {
    if xs.len() == 1 {
        return Err(AnonymityError::SinglePoint);
    }
    let (entropy_bits, best_offset_ms) = max_entropy(xs, epsilon_ms)?;
    let (anonymity, distinguishable_devices) = degree_from_entropy(entropy_bits, xs.len())?;
    Ok(AnonymityReport {
        n: xs.len(),
        epsilon_ms,
        best_offset_ms,
        entropy_bits,
        anonymity,
        distinguishable_devices,
    })
}

/// Renders a histogram as a self-contained SVG bar chart of latency mean
/// versus pseudonyms per bin.
pub fn render_histogram_svg(hist: &Histogram) -> String {
    const WIDTH: f64 = 800.0;
    const HEIGHT: f64 = 480.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 24.0;
    const TOP: f64 = 24.0;
    const BOTTOM: f64 = 64.0;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let lo_idx = hist.bins.first().map_or(0, |&(i, _)| i);
    let hi_idx = hist.bins.last().map_or(0, |&(i, _)| i);
    let slots = (hi_idx - lo_idx + 1).max(1) as f64;
    let max_count = hist.bins.iter().map(|&(_, c)| c).max().unwrap_or(1) as f64;
    let bar_w = plot_w / slots;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for &(idx, count) in &hist.bins {
        let x = LEFT + (idx - lo_idx) as f64 * bar_w;
        let h = count as f64 / max_count * plot_h;
        let y = TOP + plot_h - h;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"#4878a8\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            x,
            y,
            bar_w.max(1.0),
            h
        ));
    }
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"black\"/>\n",
        TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    ));
    // Y ticks at integer counts.
    let y_step = (max_count / 6.0).ceil().max(1.0);
    let mut count = 0.0;
    while count <= max_count {
        let y = TOP + plot_h - count / max_count * plot_h;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            LEFT - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\" \
             font-family=\"sans-serif\">{}</text>\n",
            LEFT - 8.0,
            y + 4.0,
            count as u64
        ));
        count += y_step;
    }
    // X ticks on bin edges, thinned to stay readable.
    let label_every = (slots / 10.0).ceil().max(1.0) as i64;
    let mut idx = lo_idx;
    while idx <= hi_idx + 1 {
        if (idx - lo_idx) % label_every == 0 {
            let x = LEFT + (idx - lo_idx) as f64 * bar_w;
            let edge = hist.offset_ms + idx as f64 * hist.epsilon_ms;
            svg.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
                TOP + plot_h,
                TOP + plot_h + 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
                 font-family=\"sans-serif\">{edge:.2}</text>\n",
                TOP + plot_h + 18.0
            ));
        }
        idx += 1;
    }
    // Axis titles.
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\" \
         font-family=\"sans-serif\">IBL mean (ms)</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {:.2})\">pseudonyms per bin</text>\n",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_left_closed() {
        let hist = histogram(&[0.0, 0.49, 0.5, 0.99], 0.5, 0.0).unwrap();
        assert_eq!(hist.bins, vec![(0, 2), (1, 2)]);
        assert_eq!(hist.n, 4);
    }

    #[test]
    fn identical_points_share_one_bin() {
        let hist = histogram(&[1.0, 1.0, 1.0], 0.25, 0.0).unwrap();
        assert_eq!(hist.bins, vec![(4, 3)]);
    }

    #[test]
    fn spread_points_get_a_bin_each() {
        let hist = histogram(&[0.0, 10.0, 20.0], 1.0, 0.0).unwrap();
        assert_eq!(hist.bins, vec![(0, 1), (10, 1), (20, 1)]);
    }

    #[test]
    fn boundary_splits_a_near_tie() {
        // 0.24 lands in bin 0 and 0.26 just across the 0.25 edge in bin 1.
        let hist = histogram(&[0.24, 0.26], 0.25, 0.0).unwrap();
        assert_eq!(hist.bins.len(), 2);
        assert_eq!(hist.bins[0].1, 1);
        assert_eq!(hist.bins[1].1, 1);
    }

    #[test]
    fn histogram_validates_inputs() {
        assert_eq!(histogram(&[], 0.5, 0.0), Err(AnonymityError::EmptyData));
        assert_eq!(
            histogram(&[1.0], 0.0, 0.0),
            Err(AnonymityError::NonPositiveEpsilon)
        );
        assert_eq!(
            histogram(&[1.0], 0.5, 0.5),
            Err(AnonymityError::InvalidOffset)
        );
        assert_eq!(
            histogram(&[f64::NAN], 0.5, 0.0),
            Err(AnonymityError::NonFiniteData)
        );
    }

    #[test]
    fn entropy_of_uniform_bins_is_log2() {
        let hist = histogram(&[0.1, 0.6, 1.1, 1.6], 0.5, 0.0).unwrap();
        assert_eq!(hist.bins.len(), 4);
        assert!((entropy(&hist) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_single_bin_is_zero() {
        let hist = histogram(&[0.1, 0.2, 0.3], 10.0, 0.0).unwrap();
        assert_eq!(entropy(&hist), 0.0);
    }

    #[test]
    fn max_entropy_finds_the_best_split() {
        // Best achievable partition of {0, 0.3, 0.6, 0.9} at width 0.5 has
        // sizes {1, 1, 2}: entropy 1.5 bits.
        let (h, offset) = max_entropy(&[0.0, 0.3, 0.6, 0.9], 0.5).unwrap();
        assert!((h - 1.5).abs() < 1e-12, "H = {h}");
        assert!((0.0..0.5).contains(&offset));
    }

    #[test]
    fn max_entropy_is_zero_for_identical_points() {
        let xs = [283.0; 10];
        let (h, offset) = max_entropy(&xs, 0.25).unwrap();
        assert_eq!(h, 0.0);
        assert!((0.0..0.25).contains(&offset));
    }

    #[test]
    fn anonymity_report_matches_hand_computation() {
        // Four points, all separable at width 0.5: H = 2, A = 0.
        let report = fingerprinting_anonymity(&[0.1, 1.1, 2.1, 3.1], 0.5).unwrap();
        assert!((report.entropy_bits - 2.0).abs() < 1e-12);
        assert!(report.anonymity.abs() < 1e-12);
        assert!((report.distinguishable_devices - 4.0).abs() < 1e-9);
    }

    #[test]
    fn anonymity_of_identical_points_is_one() {
        let report = fingerprinting_anonymity(&[283.0; 121], 0.25).unwrap();
        assert_eq!(report.entropy_bits, 0.0);
        assert_eq!(report.anonymity, 1.0);
        assert_eq!(report.distinguishable_devices, 1.0);
    }

    #[test]
    fn fully_separable_points_have_no_anonymity() {
        // Eight means spaced 10 ms apart with a 0.5 ms bin width: no offset
        // can merge any pair, so entropy hits log2(8) and the degree floors.
        let xs: Vec<f64> = (0..8).map(|i| f64::from(i) * 10.0).collect();
        let report = fingerprinting_anonymity(&xs, 0.5).unwrap();
        assert!((report.entropy_bits - 3.0).abs() < 1e-12);
        assert_eq!(report.anonymity, 0.0);
        assert!((report.distinguishable_devices - 8.0).abs() < 1e-9);
    }

    #[test]
    fn single_point_is_rejected() {
        assert_eq!(
            fingerprinting_anonymity(&[1.0], 0.5),
            Err(AnonymityError::SinglePoint)
        );
    }

    #[test]
    fn degree_from_published_entropy() {
        let (anonymity, devices) = degree_from_entropy(4.88, 121).unwrap();
        assert!((anonymity - 0.2946).abs() < 5e-4, "{anonymity}");
        assert!((devices - 29.4).abs() < 0.1, "{devices}");
    }

    #[test]
    fn svg_contains_axes_and_bars() {
        let hist = histogram(&[261.9, 262.1, 275.0, 283.0, 286.4], 0.25, 0.0).unwrap();
        let svg = render_histogram_svg(&hist);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("IBL mean (ms)"));
        assert!(svg.contains("pseudonyms per bin"));
        assert!(svg.matches("<rect").count() >= hist.bins.len());
    }
}
