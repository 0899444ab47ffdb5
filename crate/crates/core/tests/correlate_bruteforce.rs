use proptest::prelude::*;
use qdstat::correlate::{
    channel_stream, coincidences, correlate_on, log_g2, pulsed_acf, CorrelationConfig, PulsedConfig,
};
use qdstat::timetags::{Coverage, StreamMeta, Tag, TimeTagStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PERIOD: u64 = 400_000;

/// Counts pairs `(x, y)` with `edges[j] <= y - x < edges[j + 1]`.
fn brute(a: &[u64], b: &[u64], edges: &[i64]) -> Vec<u64> {
    let mut out = vec![0; edges.len() - 1];
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    for &x in a {
        for &y in b {
            let d = y as i64 - x as i64;
            if d >= lo && d < hi {
                out[edges.partition_point(|&e| e <= d) - 1] += 1;
            }
        }
    }
    out
}

/// Pulsed-looking stream: photons a few ns after random pulses, plus bursts and
/// uniform background, so every lag range of the grid is populated.
fn random_stream(rng: &mut ChaCha8Rng, n: usize, duration_ps: u64) -> TimeTagStream {
    let pulses = duration_ps / PERIOD;
    let mut tags = Vec::with_capacity(n);
    while tags.len() < n {
        let t = match rng.random_range(0..3) {
            0 => rng.random_range(0..duration_ps),
            1 => {
                let base = rng.random_range(0..pulses) * PERIOD;
                base + rng.random_range(0..100_000)
            }
            _ => {
                let k = rng.random_range(0..pulses.saturating_sub(20).max(1));
                (k + rng.random_range(0..20)) * PERIOD + rng.random_range(0..50_000)
            }
        };
        tags.push(Tag::new(rng.random_range(1..=2), t.min(duration_ps)));
    }
    TimeTagStream::from_unsorted(tags, StreamMeta::new(PERIOD, duration_ps)).unwrap()
}

#[test]
fn fast_paths_equal_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = CorrelationConfig::default().aligned(PERIOD);
    let pulsed = PulsedConfig::default();
    let mut compared = 0;
    for case in 0..60 {
        let n = if case < 10 {
            rng.random_range(2..200)
        } else {
            rng.random_range(200..=10_000)
        };
        let duration = if case % 3 == 0 {
            120_000_000_000
        } else {
            rng.random_range(10_000_000..2_000_000_000)
        };
        let s = random_stream(&mut rng, n, duration);
        let a = channel_stream(&s, 1);
        let b = channel_stream(&s, 2);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let (ta, tb) = (a.channel_times(1), b.channel_times(2));

        if let Ok(curve) = log_g2(&a, &b, &cfg) {
            assert_eq!(
                curve.coincidences,
                brute(&ta, &tb, &curve.edges_ps),
                "case {case}"
            );
            compared += 1;
        }

        let acf = pulsed_acf(&s, PERIOD, 1.0, &pulsed);
        let acf = match acf {
            Ok(acf) => acf,
            Err(qdstat::correlate::CorrelationError::InsufficientStatistics {
                partial, ..
            }) => *partial,
            Err(e) => panic!("case {case}: {e}"),
        };
        let k = i64::from(pulsed.periods);
        let half = PERIOD as i64 / 2;
        let peak_edges: Vec<i64> = (-k..=k + 1).map(|m| m * PERIOD as i64 - half).collect();
        assert_eq!(acf.peak_counts, brute(&ta, &tb, &peak_edges), "case {case}");
        assert_eq!(
            acf.histogram,
            brute(&ta, &tb, &acf.histogram_edges_ps),
            "case {case}"
        );
    }
    assert!(compared >= 50, "{compared}");
}

#[test]
fn binned_coverage_counts_are_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_stream(&mut rng, 3_000, 500_000_000);
    let width = 250_000_000 / 100;
    let selected: Vec<bool> = (0..200).map(|_| rng.random_bool(0.6)).collect();
    let keep: Vec<Tag> = s
        .tags()
        .iter()
        .copied()
        .filter(|t| {
            selected
                .get((t.time_ps / width) as usize)
                .copied()
                .unwrap_or(false)
        })
        .collect();
    let sub = TimeTagStream::new(keep, *s.meta())
        .unwrap()
        .with_coverage(Coverage::Bins {
            origin_ps: 0,
            width_ps: width,
            selected,
        });
    let (a, b) = (channel_stream(&sub, 1), channel_stream(&sub, 2));
    let edges = CorrelationConfig {
        max_lag_ps: 100_000_000,
        ..CorrelationConfig::default()
    }
    .edges()
    .unwrap();
    let curve = correlate_on(&a, &b, edges).unwrap();
    assert_eq!(
        curve.coincidences,
        brute(&a.channel_times(1), &b.channel_times(2), &curve.edges_ps)
    );
    assert!(curve.expected.iter().all(|&e| e >= 0.0));
}

proptest! {
    #[test]
    fn exchange_mirrors_lags(
        a in prop::collection::vec(0u64..50_000, 0..300),
        b in prop::collection::vec(0u64..50_000, 0..300),
        cuts in prop::collection::btree_set(-25_000i64..25_000, 2..40),
    ) {
        // even times and odd edges: no pair lies on a bin boundary
        let mut a: Vec<u64> = a.into_iter().map(|t| 2 * t).collect();
        let mut b: Vec<u64> = b.into_iter().map(|t| 2 * t).collect();
        a.sort_unstable();
        b.sort_unstable();
        let edges: Vec<i64> = cuts.into_iter().map(|e| 2 * e + 1).collect();
        let forward = coincidences(&a, &b, &edges);
        prop_assert_eq!(&forward, &brute(&a, &b, &edges));
        let mirrored: Vec<i64> = edges.iter().rev().map(|e| -e).collect();
        let mut backward = coincidences(&b, &a, &mirrored);
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }
}
