//! Cross-channel second-order correlation: log-binned g²(τ) and the pulsed
//! autocorrelation around zero delay.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use thiserror::Error;

use crate::timetags::{Coverage, TimeTagStream};

/// Central 68.27 % coverage, the Gaussian ±1σ equivalent.
pub const CONFIDENCE: f64 = 0.682_689_492_137_086;
pub const MIN_PULSED_COINCIDENCES: u64 = 100;
const CHUNK: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("stream {0} has no tags")]
    Empty(&'static str),
    #[error("streams share no acquisition time at the requested lags")]
    NoOverlap,
    #[error("streams carry incompatible coverage masks")]
    IncompatibleCoverage,
    #[error("stream has no repetition period")]
    NotPulsed,
    #[error("invalid correlator setting: {0}")]
    Config(String),
    #[error("only {total} coincidences in the pulsed ACF window (need {MIN_PULSED_COINCIDENCES})")]
    InsufficientStatistics { total: u64, partial: Box<PulsedAcf> },
}

/// Counts pairs with `b - a` in each half-open bin `[edges[j], edges[j+1])`.
///
/// Both inputs must be sorted. Edges must be strictly increasing and may be
/// negative. The result does not depend on how `a` is chunked across threads.
pub fn coincidences(a: &[u64], b: &[u64], edges: &[i64]) -> Vec<u64> {
    let n_bins = edges.len().saturating_sub(1);
    if n_bins == 0 || a.is_empty() || b.is_empty() {
        return vec![0; n_bins];
    }
    debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
    a.par_chunks(CHUNK)
        .map(|chunk| {
            let first = chunk[0] as i64;
            let mut ptr: Vec<usize> = edges
                .iter()
                .map(|&e| b.partition_point(|&t| (t as i64) < first + e))
                .collect();
            let mut counts = vec![0u64; n_bins];
            for &ta in chunk {
                let ta = ta as i64;
                for (p, &e) in ptr.iter_mut().zip(edges) {
                    let bound = ta + e;
                    while *p < b.len() && (b[*p] as i64) < bound {
                        *p += 1;
                    }
                }
                for j in 0..n_bins {
                    counts[j] += (ptr[j + 1] - ptr[j]) as u64;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut acc, c| {
                acc.iter_mut().zip(c).for_each(|(x, y)| *x += y);
                acc
            },
        )
}

/// Lag grid for [`log_g2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    pub min_lag_ps: u64,
    pub max_lag_ps: u64,
    pub bins_per_decade: u32,
    /// Snap every edge to a half-integer multiple of this period so that each
    /// bin holds whole laser peaks.
    pub align_period_ps: Option<u64>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            min_lag_ps: 100_000,
            max_lag_ps: 100_000_000_000,
            bins_per_decade: 16,
            align_period_ps: None,
        }
    }
}

impl CorrelationConfig {
    pub fn aligned(self, period_ps: u64) -> Self {
        CorrelationConfig {
            align_period_ps: (period_ps > 0).then_some(period_ps),
            ..self
        }
    }

    pub fn edges(&self) -> Result<Vec<i64>, CorrelationError> {
        if self.min_lag_ps == 0 || self.max_lag_ps <= self.min_lag_ps || self.bins_per_decade == 0 {
            return Err(CorrelationError::Config(format!(
                "lags {}..{} ps at {} bins/decade",
                self.min_lag_ps, self.max_lag_ps, self.bins_per_decade
            )));
        }
        let decades = (self.max_lag_ps as f64 / self.min_lag_ps as f64).log10();
        let n = (decades * f64::from(self.bins_per_decade)).ceil() as u32;
        let mut edges: Vec<i64> = (0..=n)
            .map(|k| {
                let e = self.min_lag_ps as f64
                    * 10f64.powf(f64::from(k) / f64::from(self.bins_per_decade));
                let e = e.min(self.max_lag_ps as f64);
                match self.align_period_ps {
                    Some(p) => {
                        let p = p as f64;
                        (((e / p - 0.5).round().max(0.0) + 0.5) * p).round() as i64
                    }
                    None => e.round() as i64,
                }
            })
            .collect();
        edges.dedup();
        if edges.len() < 2 {
            return Err(CorrelationError::Config(
                "lag range collapses to a single edge".into(),
            ));
        }
        Ok(edges)
    }
}

/// Normalized coincidences on a lag grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub edges_ps: Vec<i64>,
    pub coincidences: Vec<u64>,
    /// Coincidences an uncorrelated pair with the same rates would give.
    pub expected: Vec<f64>,
    pub g2: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.g2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g2.is_empty()
    }

    /// Geometric bin centres for positive lags, arithmetic otherwise.
    pub fn lag_centers_ps(&self) -> Vec<f64> {
        self.edges_ps
            .windows(2)
            .map(|w| {
                if w[0] > 0 {
                    ((w[0] as f64) * (w[1] as f64)).sqrt()
                } else {
                    0.5 * (w[0] + w[1]) as f64
                }
            })
            .collect()
    }

    /// Pooled g² of all bins lying entirely inside `[lo, hi]`.
    pub fn mean_g2_over(&self, lo_ps: i64, hi_ps: i64) -> Option<f64> {
        let (mut n, mut e) = (0u64, 0.0);
        for (j, w) in self.edges_ps.windows(2).enumerate() {
            if w[0] >= lo_ps && w[1] <= hi_ps {
                n += self.coincidences[j];
                e += self.expected[j];
            }
        }
        (e > 0.0).then(|| n as f64 / e)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "lag_ps,g2,sigma")?;
        for ((lag, g), s) in self.lag_centers_ps().iter().zip(&self.g2).zip(&self.sigma) {
            writeln!(out, "{lag:.0},{g:.6},{s:.6}")?;
        }
        Ok(())
    }
}

/// Measure of `{t : t in A, t + tau in B}` integrated over lag ranges.
enum Overlap {
    Full {
        a_ps: f64,
        b_ps: f64,
    },
    Bins {
        width: i64,
        a_selected: Vec<usize>,
        b_mask: Vec<bool>,
        shifts: HashMap<i64, f64>,
        /// Bins selected in both coverages.
        shared_bins: f64,
        /// `sum_i a_i b_i` over per-bin photon counts.
        same_bin_pairs: f64,
    },
}

impl Overlap {
    fn new(a: &TimeTagStream, b: &TimeTagStream) -> Result<Self, CorrelationError> {
        match (a.coverage(), b.coverage()) {
            (Coverage::Full, Coverage::Full) => Ok(Overlap::Full {
                a_ps: a.meta().duration_ps as f64,
                b_ps: b.meta().duration_ps as f64,
            }),
            (
                Coverage::Bins {
                    origin_ps: oa,
                    width_ps: wa,
                    selected: sa,
                },
                Coverage::Bins {
                    origin_ps: ob,
                    width_ps: wb,
                    selected: sb,
                },
            ) if oa == ob && wa == wb && *wa > 0 => {
                let per_bin = |s: &TimeTagStream| {
                    let mut n: HashMap<u64, f64> = HashMap::new();
                    for t in s.tags() {
                        if t.time_ps >= *oa {
                            *n.entry((t.time_ps - oa) / wa).or_default() += 1.0;
                        }
                    }
                    n
                };
                let (na, nb) = (per_bin(a), per_bin(b));
                let same_bin_pairs = na
                    .iter()
                    .filter_map(|(i, x)| nb.get(i).map(|y| x * y))
                    .sum();
                let shared_bins = sa.iter().zip(sb).filter(|(x, y)| **x && **y).count() as f64;
                Ok(Overlap::Bins {
                    width: *wa as i64,
                    a_selected: sa
                        .iter()
                        .enumerate()
                        .filter(|(_, &s)| s)
                        .map(|(i, _)| i)
                        .collect(),
                    b_mask: sb.clone(),
                    shifts: HashMap::new(),
                    shared_bins,
                    same_bin_pairs,
                })
            }
            _ => Err(CorrelationError::IncompatibleCoverage),
        }
    }

    /// Number of selected bin pairs `(i, i + k)`.
    fn shift_count(
        width_bins: &[usize],
        mask: &[bool],
        cache: &mut HashMap<i64, f64>,
        k: i64,
    ) -> f64 {
        *cache.entry(k).or_insert_with(|| {
            width_bins
                .iter()
                .filter(|&&i| {
                    let j = i as i64 + k;
                    j >= 0 && (j as usize) < mask.len() && mask[j as usize]
                })
                .count() as f64
        })
    }

    fn integral(&mut self, lo: i64, hi: i64) -> f64 {
        match self {
            Overlap::Full { a_ps, b_ps } => {
                let (ta, tb) = (*a_ps, *b_ps);
                let l = |tau: f64| (ta.min(tb - tau) - 0f64.max(-tau)).max(0.0);
                let mut knots = vec![lo as f64, hi as f64];
                knots.extend(
                    [-ta, 0.0, tb - ta, tb]
                        .into_iter()
                        .filter(|&x| x > lo as f64 && x < hi as f64),
                );
                knots.sort_by(f64::total_cmp);
                knots
                    .windows(2)
                    .map(|w| 0.5 * (w[1] - w[0]) * (l(w[0]) + l(w[1])))
                    .sum()
            }
            Overlap::Bins {
                width,
                a_selected,
                b_mask,
                shifts,
                ..
            } => {
                let w = *width;
                let mut total = 0.0;
                let mut k = lo.div_euclid(w);
                while k * w < hi {
                    let f0 = (lo.max(k * w) - k * w) as f64;
                    let f1 = (hi.min((k + 1) * w) - k * w) as f64;
                    let c0 = Self::shift_count(a_selected, b_mask, shifts, k);
                    let c1 = Self::shift_count(a_selected, b_mask, shifts, k + 1);
                    let sq = 0.5 * (f1 * f1 - f0 * f0);
                    total += c0 * (w as f64 * (f1 - f0) - sq) + c1 * sq;
                    k += 1;
                }
                total
            }
        }
    }
}

/// `int_lo^hi max(0, w - |tau|) dtau`.
fn triangle_integral(lo: f64, hi: f64, w: f64) -> f64 {
    let f = |x: f64| {
        let x = x.clamp(-w, w);
        if x <= 0.0 {
            0.5 * (x + w) * (x + w)
        } else {
            w * w - 0.5 * (w - x) * (w - x)
        }
    };
    f(hi) - f(lo)
}

impl Overlap {
    /// Coincidences expected from rates `ra`, `rb` in `[lo, hi)`.
    ///
    /// Pairs within one selected bin are conditioned on the observed per-bin
    /// counts, with both photons uniform over the bin; all other pairs use the
    /// live-time rates.
    fn expected(&mut self, lo: i64, hi: i64, ra: f64, rb: f64) -> f64 {
        let base = ra * rb * self.integral(lo, hi);
        match self {
            Overlap::Full { .. } => base,
            Overlap::Bins {
                width,
                shared_bins,
                same_bin_pairs,
                ..
            } => {
                let w = *width as f64;
                let tri = triangle_integral(lo as f64, hi as f64, w);
                (base + (*same_bin_pairs / (w * w) - ra * rb * *shared_bins) * tri).max(0.0)
            }
        }
    }
}

/// Tags of one channel as their own stream, keeping metadata and coverage.
pub fn channel_stream(stream: &TimeTagStream, channel: u8) -> TimeTagStream {
    let tags = stream
        .tags()
        .iter()
        .copied()
        .filter(|t| t.channel == channel)
        .collect();
    TimeTagStream::from_parts_unchecked(tags, *stream.meta(), stream.coverage().clone())
}

/// g²(τ) of `b` relative to `a` on the configured positive lag grid.
///
/// Rates are counts over each stream's live time, and the expected
/// coincidences integrate the exact overlap of the two coverages at every lag.
/// For binned coverages, pairs sharing a bin are expected from the observed
/// per-bin counts instead, which removes the bias of selecting bins by count.
pub fn log_g2(
    a: &TimeTagStream,
    b: &TimeTagStream,
    config: &CorrelationConfig,
) -> Result<CorrelationCurve, CorrelationError> {
    if a.is_empty() {
        return Err(CorrelationError::Empty("a"));
    }
    if b.is_empty() {
        return Err(CorrelationError::Empty("b"));
    }
    let edges = config.edges()?;
    correlate_on(a, b, edges)
}

/// Same as [`log_g2`] on an explicit, strictly increasing edge list.
pub fn correlate_on(
    a: &TimeTagStream,
    b: &TimeTagStream,
    edges: Vec<i64>,
) -> Result<CorrelationCurve, CorrelationError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CorrelationError::Config(
            "edges must be strictly increasing".into(),
        ));
    }
    let mut overlap = Overlap::new(a, b)?;
    let rate = |s: &TimeTagStream| {
        let live = s.live_time_ps();
        if live == 0 {
            0.0
        } else {
            s.len() as f64 / live as f64
        }
    };
    let (ra, rb) = (rate(a), rate(b));
    let mut expected: Vec<f64> = edges
        .windows(2)
        .map(|w| overlap.expected(w[0], w[1], ra, rb))
        .collect();
    let keep = expected.iter().rposition(|&e| e > 0.0).map_or(0, |i| i + 1);
    if keep == 0 {
        return Err(CorrelationError::NoOverlap);
    }
    expected.truncate(keep);
    let edges: Vec<i64> = edges[..=keep].to_vec();

    let ta: Vec<u64> = a.tags().iter().map(|t| t.time_ps).collect();
    let tb: Vec<u64> = b.tags().iter().map(|t| t.time_ps).collect();
    let counts = coincidences(&ta, &tb, &edges);
    let (g2, sigma) = counts
        .iter()
        .zip(&expected)
        .map(|(&n, &e)| {
            if e > 0.0 {
                (n as f64 / e, (n as f64).sqrt() / e)
            } else {
                (0.0, 0.0)
            }
        })
        .unzip();
    Ok(CorrelationCurve {
        edges_ps: edges,
        coincidences: counts,
        expected,
        g2,
        sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulsedConfig {
    /// Side peaks used on each side of zero.
    pub periods: u32,
    pub resolution_ps: u64,
    /// Undo the spill of each peak's tails into its neighbours' windows.
    pub overlap_correction: bool,
}

impl Default for PulsedConfig {
    fn default() -> Self {
        PulsedConfig {
            periods: 8,
            resolution_ps: 1_000,
            overlap_correction: true,
        }
    }
}

/// Cross-channel delay histogram around zero and its per-peak integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsedAcf {
    pub rep_period_ps: u64,
    pub periods: u32,
    pub histogram_edges_ps: Vec<i64>,
    pub histogram: Vec<u64>,
    /// Raw coincidences in `[kP - P/2, kP + P/2)` for `k = -K..=K`.
    pub peak_counts: Vec<u64>,
    /// Peak areas after removing the spill between neighbouring windows.
    pub peak_areas: Vec<f64>,
    /// Share of an uncorrelated peak landing one window below and above its own.
    pub spill: (f64, f64),
    /// Coincidences an uncorrelated pair would give in each peak window.
    pub peak_expected: Vec<f64>,
    pub long_delay_g2: f64,
    /// Factor from area ratio to g²; maps the side-peak mean onto `long_delay_g2`.
    pub normalization: f64,
    pub g2_zero: f64,
}

impl PulsedAcf {
    pub fn peak_index(&self, k: i32) -> Option<usize> {
        let i = k + self.periods as i32;
        (i >= 0 && (i as usize) < self.peak_counts.len()).then_some(i as usize)
    }

    pub fn zero_peak_counts(&self) -> u64 {
        self.peak_counts[self.periods as usize]
    }

    pub fn total_coincidences(&self) -> u64 {
        self.peak_counts.iter().sum()
    }

    /// g² value attributed to every peak.
    pub fn normalized_peaks(&self) -> Vec<f64> {
        self.peak_areas
            .iter()
            .zip(&self.peak_expected)
            .map(|(&n, &e)| {
                if e > 0.0 {
                    self.normalization * n / e
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn write_peaks_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "peak_index,integral_normalized")?;
        for (i, g) in self.normalized_peaks().iter().enumerate() {
            writeln!(out, "{},{g:.6}", i as i64 - i64::from(self.periods))?;
        }
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "delay_ps,counts")?;
        for (w, n) in self.histogram_edges_ps.windows(2).zip(&self.histogram) {
            writeln!(out, "{},{n}", (w[0] + w[1]) / 2)?;
        }
        Ok(())
    }
}

/// Folded arrival-time distribution over `n` bins of one period. Callers rotate
/// it to start at its quietest phase so that jittered early arrivals stay next
/// to their pulse.
fn micro_time_distribution(times: &[u64], period: u64, n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for &t in times {
        d[(u128::from(t % period) * n as u128 / u128::from(period)) as usize] += 1.0;
    }
    let total = times.len().max(1) as f64;
    d.iter_mut().for_each(|x| *x /= total);
    d
}

/// Probabilities that `t_b - t_a` of two independent folded arrival times falls
/// below `-P/2` and at or above `P/2`; ties on the boundary count half.
fn spill_fractions(da: &[f64], db: &[f64]) -> (f64, f64) {
    let n = da.len();
    let half = n / 2;
    let mut below = vec![0.0; n + 1];
    for j in 0..n {
        below[j + 1] = below[j] + db[j];
    }
    let mut lower = 0.0;
    let mut upper = 0.0;
    for (i, &pa) in da.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        // j - i < -half
        if i > half {
            let m = i - half;
            lower += pa * (below[m] + 0.5 * db[m]);
        } else if i == half {
            lower += pa * 0.5 * db[0];
        }
        // j - i > half
        let m = i + half;
        if m < n {
            upper += pa * (below[n] - below[m + 1] + 0.5 * db[m]);
        }
    }
    (lower, upper)
}

/// Solves `N_m = (1 - s_lo - s_hi) A_m + s_lo A_{m+1} + s_hi A_{m-1}`, holding the
/// areas just outside the range equal to the outermost ones.
fn unspill(counts: &[f64], (s_lo, s_hi): (f64, f64)) -> Option<Vec<f64>> {
    let n = counts.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0 - s_lo - s_hi;
        if i + 1 < n {
            m[(i, i + 1)] = s_lo;
        } else {
            m[(i, i)] += s_lo;
        }
        if i > 0 {
            m[(i, i - 1)] = s_hi;
        } else {
            m[(i, i)] += s_hi;
        }
    }
    m.lu()
        .solve(&DVector::from_column_slice(counts))
        .map(|v| v.iter().copied().collect())
}

/// Pulsed autocorrelation of channel 2 against channel 1.
///
/// Each peak area is divided by the coincidences an uncorrelated pair would
/// produce in its window (this absorbs coverage edge effects in post-selected
/// substreams); the mean side-peak ratio is then scaled to `long_delay_g2`.
pub fn pulsed_acf(
    stream: &TimeTagStream,
    rep_period_ps: u64,
    long_delay_g2: f64,
    config: &PulsedConfig,
) -> Result<PulsedAcf, CorrelationError> {
    if rep_period_ps == 0 {
        return Err(CorrelationError::NotPulsed);
    }
    if config.periods == 0 || config.resolution_ps == 0 || config.resolution_ps > rep_period_ps {
        return Err(CorrelationError::Config(
            "pulsed ACF needs periods ≥ 1 and 0 < resolution ≤ period".into(),
        ));
    }
    let a = channel_stream(stream, 1);
    let b = channel_stream(stream, 2);
    if a.is_empty() {
        return Err(CorrelationError::Empty("channel 1"));
    }
    if b.is_empty() {
        return Err(CorrelationError::Empty("channel 2"));
    }
    let p = rep_period_ps as i64;
    let k_max = i64::from(config.periods);
    let half = p / 2;
    let peak_edges: Vec<i64> = (-k_max..=k_max + 1).map(|k| k * p - half).collect();

    let span = peak_edges[peak_edges.len() - 1] - peak_edges[0];
    let n_fine = (span as f64 / config.resolution_ps as f64).round().max(1.0) as i64;
    let mut histogram_edges: Vec<i64> = (0..=n_fine)
        .map(|i| peak_edges[0] + i * span / n_fine)
        .collect();
    histogram_edges.dedup();

    let ta: Vec<u64> = a.tags().iter().map(|t| t.time_ps).collect();
    let tb: Vec<u64> = b.tags().iter().map(|t| t.time_ps).collect();
    let peak_counts = coincidences(&ta, &tb, &peak_edges);
    let histogram = coincidences(&ta, &tb, &histogram_edges);

    let raw: Vec<f64> = peak_counts.iter().map(|&n| n as f64).collect();
    let (spill, peak_areas) = if config.overlap_correction {
        let n_micro = (rep_period_ps / config.resolution_ps).max(2) as usize;
        let (mut da, mut db) = (
            micro_time_distribution(&ta, rep_period_ps, n_micro),
            micro_time_distribution(&tb, rep_period_ps, n_micro),
        );
        let quiet = (0..n_micro)
            .min_by(|&i, &j| (da[i] + db[i]).total_cmp(&(da[j] + db[j])))
            .unwrap_or(0);
        da.rotate_left(quiet);
        db.rotate_left(quiet);
        let spill = spill_fractions(&da, &db);
        match unspill(&raw, spill) {
            Some(areas) => (spill, areas),
            None => ((0.0, 0.0), raw),
        }
    } else {
        ((0.0, 0.0), raw)
    };

    let mut overlap = Overlap::new(&a, &b)?;
    let rate = |s: &TimeTagStream| s.len() as f64 / s.live_time_ps().max(1) as f64;
    let (ra, rb) = (rate(&a), rate(&b));
    let peak_expected: Vec<f64> = peak_edges
        .windows(2)
        .map(|w| overlap.expected(w[0], w[1], ra, rb))
        .collect();

    let zero = config.periods as usize;
    let ratio = |i: usize| {
        if peak_expected[i] > 0.0 {
            peak_areas[i] / peak_expected[i]
        } else {
            0.0
        }
    };
    let side: Vec<f64> = (0..peak_counts.len())
        .filter(|&i| i != zero)
        .map(ratio)
        .collect();
    let side_mean = side.iter().sum::<f64>() / side.len() as f64;
    let normalization = if side_mean > 0.0 {
        long_delay_g2 / side_mean
    } else {
        0.0
    };
    let acf = PulsedAcf {
        rep_period_ps,
        periods: config.periods,
        histogram_edges_ps: histogram_edges,
        histogram,
        g2_zero: (normalization * ratio(zero)).max(0.0),
        peak_counts,
        peak_areas,
        spill,
        peak_expected,
        long_delay_g2,
        normalization,
    };
    let total = acf.total_coincidences();
    if total < MIN_PULSED_COINCIDENCES || side_mean <= 0.0 {
        return Err(CorrelationError::InsufficientStatistics {
            total,
            partial: Box::new(acf),
        });
    }
    Ok(acf)
}

/// Garwood interval at [`CONFIDENCE`] for a Poisson count.
pub fn poisson_interval(n: u64) -> (f64, f64) {
    let alpha = 1.0 - CONFIDENCE;
    let n = n as f64;
    let lower = if n == 0.0 {
        0.0
    } else {
        Gamma::new(n, 1.0).map_or(0.0, |g| g.inverse_cdf(alpha / 2.0))
    };
    let upper =
        Gamma::new(n + 1.0, 1.0).map_or(f64::INFINITY, |g| g.inverse_cdf(1.0 - alpha / 2.0));
    (lower, upper)
}

/// g²(0) with the counting interval of the zero peak carried through the
/// spill correction and the normalization.
pub fn g2_zero_with_ci(acf: &PulsedAcf) -> (f64, (f64, f64)) {
    let zero = acf.periods as usize;
    let e = acf.peak_expected[zero];
    if e <= 0.0 {
        return (acf.g2_zero, (0.0, 0.0));
    }
    let (lo, hi) = poisson_interval(acf.peak_counts[zero]);
    let area_with_zero = |n0: f64| {
        let mut counts: Vec<f64> = acf.peak_counts.iter().map(|&n| n as f64).collect();
        counts[zero] = n0;
        unspill(&counts, acf.spill).map_or(n0, |a| a[zero])
    };
    let scale = acf.normalization / e;
    (
        acf.g2_zero,
        (
            (scale * area_with_zero(lo)).max(0.0),
            (scale * area_with_zero(hi)).max(0.0),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetags::{StreamMeta, Tag};

    fn brute(a: &[u64], b: &[u64], edges: &[i64]) -> Vec<u64> {
        let mut out = vec![0; edges.len() - 1];
        for &x in a {
            for &y in b {
                let d = y as i64 - x as i64;
                if let Some(j) = edges.windows(2).position(|w| d >= w[0] && d < w[1]) {
                    out[j] += 1;
                }
            }
        }
        out
    }

    #[test]
    fn coincidences_small_case() {
        let a = [0, 10, 20];
        let b = [5, 15, 40];
        let edges = [-20, -5, 0, 5, 10, 30];
        assert_eq!(coincidences(&a, &b, &edges), brute(&a, &b, &edges));
        assert_eq!(coincidences(&[], &b, &edges), vec![0; 5]);
    }

    #[test]
    fn edge_grid() {
        let e = CorrelationConfig::default().edges().unwrap();
        assert_eq!(e[0], 100_000);
        assert_eq!(*e.last().unwrap(), 100_000_000_000);
        assert_eq!(e.len(), 6 * 16 + 1);
        let aligned = CorrelationConfig::default()
            .aligned(400_000)
            .edges()
            .unwrap();
        assert_eq!(aligned[0], 200_000);
        assert!(aligned.iter().all(|&x| (x - 200_000) % 400_000 == 0));
        assert!(aligned.windows(2).all(|w| w[0] < w[1]));
        let bad = CorrelationConfig {
            min_lag_ps: 0,
            ..Default::default()
        };
        assert!(bad.edges().is_err());
    }

    #[test]
    fn full_overlap_integral() {
        let mut o = Overlap::Full {
            a_ps: 100.0,
            b_ps: 100.0,
        };
        assert!((o.integral(0, 100) - 5_000.0).abs() < 1e-9);
        assert!((o.integral(-100, 0) - 5_000.0).abs() < 1e-9);
        assert!((o.integral(100, 200)).abs() < 1e-9);
        assert!((o.integral(10, 20) - (90.0 + 80.0) * 5.0).abs() < 1e-9);
    }

    #[test]
    fn bin_overlap_matches_pointwise() {
        let mask = vec![true, false, true, true, false, true];
        let mut o = Overlap::Bins {
            width: 10,
            a_selected: vec![0, 2, 3, 5],
            b_mask: mask.clone(),
            shifts: HashMap::new(),
            shared_bins: 4.0,
            same_bin_pairs: 0.0,
        };
        let pointwise = |tau: i64| -> f64 {
            let sel = |t: i64| (0..60).contains(&t) && mask[(t / 10) as usize];
            (0..60).filter(|&t| sel(t) && sel(t + tau)).count() as f64
        };
        for (lo, hi) in [(0, 7), (3, 25), (-14, 9), (11, 44)] {
            // the overlap is linear between integer lags, so the trapezoid rule is exact
            let numeric: f64 = (lo..hi)
                .map(|tau| 0.5 * (pointwise(tau) + pointwise(tau + 1)))
                .sum();
            assert!((o.integral(lo, hi) - numeric).abs() < 1e-9, "{lo}..{hi}");
        }
    }

    #[test]
    fn same_bin_conditioning() {
        assert!((triangle_integral(-10.0, 10.0, 10.0) - 100.0).abs() < 1e-12);
        assert!((triangle_integral(0.0, 5.0, 10.0) - 37.5).abs() < 1e-12);
        assert_eq!(triangle_integral(10.0, 30.0, 10.0), 0.0);

        let meta = StreamMeta::new(0, 60);
        let selected = vec![true, false, true, true, false, true];
        let cov = Coverage::Bins {
            origin_ps: 0,
            width_ps: 10,
            selected,
        };
        let a = TimeTagStream::new(
            vec![
                Tag::new(1, 1),
                Tag::new(1, 3),
                Tag::new(1, 22),
                Tag::new(1, 55),
            ],
            meta,
        )
        .unwrap()
        .with_coverage(cov.clone());
        let b = TimeTagStream::new(vec![Tag::new(2, 2), Tag::new(2, 25), Tag::new(2, 38)], meta)
            .unwrap()
            .with_coverage(cov);
        let mut o = Overlap::new(&a, &b).unwrap();
        let (ra, rb) = (4.0 / 40.0, 3.0 / 40.0);
        // every pair lands somewhere; same-bin pairs (2 + 1) replace their rate share
        let total = o.expected(-100, 100, ra, rb);
        assert!(
            (total - (12.0 - ra * rb * 4.0 * 100.0 + 3.0)).abs() < 1e-9,
            "{total}"
        );
    }

    #[test]
    fn empty_and_mismatched_streams() {
        let meta = StreamMeta::new(0, 1_000_000);
        let e = TimeTagStream::empty(meta);
        let s = TimeTagStream::new(vec![Tag::new(1, 10)], meta).unwrap();
        assert_eq!(
            log_g2(&e, &s, &Default::default()),
            Err(CorrelationError::Empty("a"))
        );
        let binned = s.clone().with_coverage(Coverage::Bins {
            origin_ps: 0,
            width_ps: 1_000,
            selected: vec![true; 1_000],
        });
        assert_eq!(
            correlate_on(&s, &binned, vec![0, 10]),
            Err(CorrelationError::IncompatibleCoverage)
        );
        assert_eq!(
            correlate_on(&s, &s, vec![2_000_000, 3_000_000]),
            Err(CorrelationError::NoOverlap)
        );
    }

    #[test]
    fn zero_count_interval() {
        let (lo, hi) = poisson_interval(0);
        assert_eq!(lo, 0.0);
        assert!((hi - 1.841).abs() < 2e-3);
        let (lo, hi) = poisson_interval(10_000);
        assert!((lo - 9_900.0).abs() < 2.0 && (hi - 10_100.0).abs() < 2.0);
    }

    #[test]
    fn spill_of_uniform_arrivals() {
        // uniform folded times: the difference is triangular on (-P, P)
        let d = vec![0.01; 100];
        let (lo, hi) = spill_fractions(&d, &d);
        assert!(
            (lo - 0.125).abs() < 2e-3 && (hi - 0.125).abs() < 2e-3,
            "{lo} {hi}"
        );
        let mut prompt = vec![0.0; 100];
        prompt[0] = 1.0;
        assert_eq!(spill_fractions(&prompt, &prompt), (0.0, 0.0));
    }

    #[test]
    fn unspill_inverts_mixing() {
        let areas = [50.0, 50.0, 5.0, 50.0, 50.0];
        let (lo, hi) = (0.03, 0.02);
        let n = areas.len();
        let at = |i: isize| areas[i.clamp(0, n as isize - 1) as usize];
        let mixed: Vec<f64> = (0..n as isize)
            .map(|i| (1.0 - lo - hi) * at(i) + lo * at(i + 1) + hi * at(i - 1))
            .collect();
        let back = unspill(&mixed, (lo, hi)).unwrap();
        for (x, y) in back.iter().zip(areas) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pulsed_acf_needs_period() {
        let meta = StreamMeta::new(0, 1_000);
        let s = TimeTagStream::new(vec![Tag::new(1, 1), Tag::new(2, 5)], meta).unwrap();
        assert_eq!(
            pulsed_acf(&s, 0, 1.0, &Default::default()),
            Err(CorrelationError::NotPulsed)
        );
        assert!(matches!(
            pulsed_acf(&s, 10_000, 1.0, &Default::default()),
            Err(CorrelationError::InsufficientStatistics { total: 1, .. })
        ));
    }
}
