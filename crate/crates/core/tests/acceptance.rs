//! Release gate: every blocking check as one test printing a PASS or FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iblab::anonymity::{degree_from_entropy, max_entropy};
use iblab::capture::{build_tracks, CaptureRecord, PipelineConfig};
use iblab::frames::{
    classify_gaen, parse_advertisement, serialize_advertisement, GaenPayload, MacAddress,
};
use iblab::linker::{evaluate_links, link_tracks};
use iblab::sim::{simulate, table1_profiles, DeviceProfile, ReceiverModel, REFERENCE_SEED};
use iblab::stats::{device_summaries, precision_epsilon, summarize_track, DeviceSummary};

fn report(criterion: &str, detail: &str, elapsed: Duration, budget: Option<Duration>, ok: bool) {
    let on_time = budget.is_none_or(|b| elapsed <= b);
    let status = if ok && on_time { "PASS" } else { "FAIL" };
    match budget {
        Some(b) => println!("{status} criterion {criterion}: {detail} (runtime {elapsed:?}, budget {b:?})"),
        None => println!("{status} criterion {criterion}: {detail} (runtime {elapsed:?})"),
    }
    assert!(ok, "criterion {criterion}: {detail}");
    assert!(
        on_time,
        "criterion {criterion}: runtime {elapsed:?} exceeds budget {budget:?}"
    );
}

/// The fleet's per-device spread column reproduces the 0.2513… ms
/// measurement precision.
#[test]
fn criterion_1_epsilon_from_fleet_spreads() {
    let spreads: Vec<DeviceSummary> = table1_profiles()
        .iter()
        .map(|p| DeviceSummary {
            label: p.label.clone(),
            pseudonym_count: 1,
            mean_of_means_ms: p.ibl_mean_ms,
            double_stdev_ms: 2.0 * p.pseudonym_sigma_ms,
        })
        .collect();

    let started = Instant::now();
    let eps = precision_epsilon(&spreads).expect("non-empty fleet");
    let elapsed = started.elapsed();

    let ok = (eps - 0.251_333_333_333_333_3).abs() < 1e-5;
    report(
        "1",
        &format!("precision epsilon {eps:.7} ms vs 0.2513333 ms"),
        elapsed,
        Some(Duration::from_millis(1)),
        ok,
    );
}

/// Anonymity-degree arithmetic at the published operating point.
#[test]
fn criterion_2_degree_arithmetic() {
    let started = Instant::now();
    let (degree, devices) = degree_from_entropy(4.88, 121).expect("valid inputs");
    let elapsed = started.elapsed();

    let ok = (degree - 0.2946).abs() <= 0.0005 && (devices - 29.4).abs() <= 0.1;
    report(
        "2",
        &format!("degree {degree:.4} vs 0.2946, distinguishable {devices:.2} vs 29.4"),
        elapsed,
        Some(Duration::from_millis(1)),
        ok,
    );
}

/// Exact offset maximization agrees with a 10^4-point dense sweep on 1000
/// random microsecond-grain instances.
#[test]
fn criterion_3_entropy_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let started = Instant::now();

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let xs = common::grid_values(&mut rng, n, 0.0, 500.0);
        let eps = common::grid_epsilon(&mut rng, 0.05, 2.0);
        let (h, _) = max_entropy(&xs, eps).expect("valid instance");
        let swept = common::dense_sweep_max_entropy(&xs, eps, 10_000);
        worst = worst.max((h - swept).abs());
    }
    let elapsed = started.elapsed();

    report(
        "3",
        &format!("max |exact - sweep| = {worst:.3e} bits over 1000 instances"),
        elapsed,
        Some(Duration::from_secs(30)),
        worst <= 1e-9,
    );
}

/// The two-hour fleet run recovers every configured device mean within
/// 0.5 ms and preserves the configured ordering of devices by mean.
#[test]
fn criterion_4_fleet_mean_recovery() {
    let started = Instant::now();
    let (profiles, tracks, truth) = common::fleet_tracks(REFERENCE_SEED);
    let devices = device_summaries(&tracks, &truth).expect("known fleet");
    let elapsed = started.elapsed();

    let configured: HashMap<&str, f64> = profiles
        .iter()
        .map(|p| (p.label.as_str(), p.ibl_mean_ms))
        .collect();

    let mut worst_err = 0.0f64;
    for d in &devices {
        worst_err = worst_err.max((d.mean_of_means_ms - configured[d.label.as_str()]).abs());
    }

    let mut recovered_order: Vec<&str> = devices.iter().map(|d| d.label.as_str()).collect();
    recovered_order.sort_by(|a, b| {
        let ma = devices.iter().find(|d| d.label == *a).unwrap().mean_of_means_ms;
        let mb = devices.iter().find(|d| d.label == *b).unwrap().mean_of_means_ms;
        ma.total_cmp(&mb)
    });
    let mut configured_order: Vec<&str> = configured.keys().copied().collect();
    configured_order.sort_by(|a, b| configured[a].total_cmp(&configured[b]));
    let order_ok = recovered_order == configured_order;

    report(
        "4",
        &format!(
            "{} devices, worst mean error {worst_err:.3} ms (<= 0.5), ordering preserved: {order_ok}",
            devices.len()
        ),
        elapsed,
        Some(Duration::from_secs(60)),
        devices.len() == 15 && worst_err <= 0.5 && order_ok,
    );
}

/// In the same run, the two far-apart devices stay separable by more than
/// ten epsilon while the three near-identical devices confuse the linker.
#[test]
fn criterion_5_separation_and_confusion() {
    let started = Instant::now();
    let (profiles, tracks, truth) = common::fleet_tracks(REFERENCE_SEED);

    let epsilon_config = profiles
        .iter()
        .map(|p| 2.0 * p.pseudonym_sigma_ms)
        .sum::<f64>()
        / profiles.len() as f64;

    let label_of: HashMap<MacAddress, &str> =
        truth.iter().map(|e| (e.mac, e.label.as_str())).collect();
    let track_means = |label: &str| -> Vec<f64> {
        tracks
            .iter()
            .filter(|t| label_of[&t.mac] == label)
            .map(|t| summarize_track(t).unwrap().ibl_mean_ms)
            .collect()
    };
    let mut min_gap = f64::INFINITY;
    for a in track_means("OnePlus Nord") {
        for b in track_means("OnePlus Nord 2") {
            min_gap = min_gap.min((a - b).abs());
        }
    }

    let minis = ["iPhone 13 Mini a", "iPhone 13 Mini b", "iPhone 13 Mini c"];
    let confusions = link_tracks(&tracks, 0.25, 30.0)
        .iter()
        .filter(|l| {
            let a = label_of[&l.predecessor];
            let b = label_of[&l.successor];
            a != b && minis.contains(&a) && minis.contains(&b)
        })
        .count();
    let elapsed = started.elapsed();

    report(
        "5",
        &format!(
            "Nord/Nord 2 min track-mean gap {min_gap:.2} ms (> {:.2}), cross-Mini confusions {confusions} (>= 1)",
            10.0 * epsilon_config
        ),
        elapsed,
        None,
        min_gap > 10.0 * epsilon_config && confusions >= 1,
    );
}

/// Five devices with well-separated means relink perfectly across two
/// hours of rotations.
#[test]
fn criterion_6_separable_fleet_linking() {
    let started = Instant::now();
    let profiles: Vec<DeviceProfile> = [260.0, 265.0, 270.0, 275.0, 280.0]
        .iter()
        .enumerate()
        .map(|(i, &mean)| DeviceProfile {
            label: format!("unit-{i}"),
            ibl_mean_ms: mean,
            pseudonym_sigma_ms: 0.02,
            broadcast_jitter_ms: 1.0,
            rotation_min_s: 600.0,
            rotation_max_s: 1200.0,
        })
        .collect();
    let (records, truth) =
        simulate(&profiles, 7200.0, &ReceiverModel::default(), 42).expect("valid run");
    let cfg = PipelineConfig {
        session_limit_s: 7200.0,
        ..PipelineConfig::default()
    };
    let tracks = build_tracks(records, &cfg).expect("valid config");
    let links = link_tracks(&tracks, 0.25, 30.0);
    let eval = evaluate_links(&links, &tracks, &truth).expect("known macs");
    let elapsed = started.elapsed();

    report(
        "6",
        &format!(
            "precision {:.4}, recall {:.4} over {} links",
            eval.precision,
            eval.recall,
            links.len()
        ),
        elapsed,
        Some(Duration::from_secs(10)),
        eval.precision == 1.0 && eval.recall == 1.0,
    );
}

/// Self-contained invariant sweep: parser round-trip, window completeness,
/// rotation synchrony, entropy and degree bounds, translation invariance.
#[test]
fn criterion_7_invariant_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7007);

    // Parser round-trip on 10^4 random frames.
    for _ in 0..10_000 {
        let mut raw = vec![0u8; 8 + rng.random_range(0..=31)];
        rng.fill_bytes(&mut raw);
        let frame = parse_advertisement(&raw).expect("legal length");
        assert_eq!(serialize_advertisement(&frame), raw);
    }

    // Window completeness on 200 random record sets.
    let payload = GaenPayload {
        flags: [0x02, 0x01, 0x1A],
        pseudonym: [9; 16],
        trailer: [0; 8],
    }
    .to_adv_data();
    let mac = MacAddress::new([1, 2, 3, 4, 5, 6]);
    for _ in 0..200 {
        let start: u64 = rng.random_range(0..1_000_000_000);
        let mut stamps = vec![start];
        for _ in 0..rng.random_range(1..=120usize) {
            stamps.push(stamps.last().unwrap() + rng.random_range(100_000u64..=700_000));
        }
        let records: Vec<CaptureRecord> = stamps
            .iter()
            .map(|&t| CaptureRecord {
                ts_us: t,
                mac,
                adv_data: payload.clone(),
            })
            .collect();
        let cfg = PipelineConfig {
            min_points: 1,
            ..PipelineConfig::default()
        };
        let tracks = build_tracks(records, &cfg).expect("valid config");
        let cutoff = start + 600_000_000;
        let session: Vec<u64> = stamps.iter().copied().filter(|&t| t <= cutoff).collect();
        let expected: Vec<f64> = session
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 / 1000.0)
            .filter(|d| (220.0..=350.0).contains(d))
            .collect();
        if expected.is_empty() {
            assert!(tracks.is_empty());
        } else {
            assert_eq!(tracks.len(), 1);
            assert_eq!(tracks[0].ibl_ms, expected);
        }
    }

    // Rotation synchrony over fresh simulator runs.
    for seed in 0..3 {
        let profiles = vec![DeviceProfile {
            label: "sync".into(),
            ibl_mean_ms: 280.0,
            pseudonym_sigma_ms: 0.1,
            broadcast_jitter_ms: 5.0,
            rotation_min_s: 60.0,
            rotation_max_s: 120.0,
        }];
        let (records, truth) =
            simulate(&profiles, 400.0, &ReceiverModel::default(), seed).expect("valid run");
        let mut macs = HashSet::new();
        let mut pseudonyms = HashSet::new();
        for e in &truth {
            assert!(macs.insert(e.mac), "one interval per address");
            assert!(pseudonyms.insert(e.pseudonym), "one interval per pseudonym");
        }
        let interval: HashMap<_, _> = truth
            .iter()
            .map(|e| (e.mac, (e.start_us, e.end_us, e.pseudonym)))
            .collect();
        for r in &records {
            let (start, end, pseudonym) = interval[&r.mac];
            assert!(r.ts_us >= start && r.ts_us <= end);
            assert_eq!(
                classify_gaen(&r.adv_data).expect("simulated frames classify").pseudonym,
                pseudonym
            );
        }
    }

    // Entropy and degree bounds on 200 random data sets.
    for _ in 0..200 {
        let n = rng.random_range(2..=60);
        let xs = common::grid_values(&mut rng, n, 0.0, 400.0);
        let eps = common::grid_epsilon(&mut rng, 0.05, 1.5);
        let (h, offset) = max_entropy(&xs, eps).expect("valid instance");
        assert!(h >= 0.0 && h <= (n as f64).log2() + 1e-9);
        assert!(offset >= 0.0 && offset < eps);
        let (degree, _) = degree_from_entropy(h, n).expect("n >= 2");
        assert!((0.0..=1.0).contains(&degree));
    }

    // Translation invariance on exact integer-grain data.
    for _ in 0..100 {
        let n = rng.random_range(2..=60);
        let xs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0u64..=400_000) as f64)
            .collect();
        let eps = rng.random_range(50u64..=1500) as f64;
        let shift = rng.random_range(0u64..=10_000_000) as f64;
        let shifted: Vec<f64> = xs.iter().map(|&x| x + shift).collect();
        let (h, _) = max_entropy(&xs, eps).expect("valid");
        let (h_shifted, _) = max_entropy(&shifted, eps).expect("valid");
        assert!((h - h_shifted).abs() <= 1e-9);
    }

    let elapsed = started.elapsed();
    report(
        "7",
        "parser round-trip x10000, window completeness x200, rotation synchrony x3, \
         entropy/degree bounds x200, translation invariance x100",
        elapsed,
        Some(Duration::from_secs(60)),
        true,
    );
}

/// Recovered per-device spread stays within twice the configured spread in
/// the fleet run: per-pseudonym means vary little between cycles.
#[test]
fn criterion_8_spread_stability() {
    let started = Instant::now();
    let (profiles, tracks, truth) = common::fleet_tracks(REFERENCE_SEED);
    let devices = device_summaries(&tracks, &truth).expect("known fleet");
    let elapsed = started.elapsed();

    let configured: HashMap<&str, f64> = profiles
        .iter()
        .map(|p| (p.label.as_str(), 2.0 * p.pseudonym_sigma_ms))
        .collect();
    let mut worst_ratio = 0.0f64;
    for d in &devices {
        worst_ratio = worst_ratio.max(d.double_stdev_ms / configured[d.label.as_str()]);
    }

    report(
        "8",
        &format!("worst recovered/configured spread ratio {worst_ratio:.3} (<= 2)"),
        elapsed,
        None,
        devices.len() == 15 && worst_ratio <= 2.0,
    );
}
