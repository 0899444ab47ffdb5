//! Intensity binning, two-Poisson histogram fits and photon post-selection.
//!
//! Counts are handled per bin internally; thresholds quoted in counts/ms are
//! converted with the bin width.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetags::{Coverage, StreamMeta, Tag, TimeTagStream};

pub const DEFAULT_BIN_WIDTH_US: f64 = 250.0;
const EM_MAX_ITERATIONS: usize = 500;
const EM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("bin width {0} us is below the 1 ps tag resolution")]
    BinTooNarrow(f64),
    #[error("histogram has fewer than two distinct count values")]
    DegenerateHistogram,
    #[error("intensity histogram is unimodal (means {mean_a:.2} and {mean_b:.2} counts/bin)")]
    Unimodal { mean_a: f64, mean_b: f64 },
    #[error("state windows overlap or never reach posterior {threshold}")]
    DegenerateSeparation { threshold: f64 },
    #[error("manual thresholds {grey_below} / {bright_above} counts/ms leave no gap")]
    BadThresholds { grey_below: f64, bright_above: f64 },
    #[error("trace does not match stream: {0}")]
    Mismatch(String),
}

/// Photon counts per fixed-width time bin, both channels summed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntensityTrace {
    pub bin_width_ps: u64,
    pub origin_ps: u64,
    pub counts: Vec<u32>,
}

impl IntensityTrace {
    pub fn bin_width_us(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-6
    }

    pub fn histogram(&self) -> IntensityHistogram {
        IntensityHistogram::from_trace(self)
    }

    /// Counts/bin to counts/ms.
    pub fn per_ms(&self, counts_per_bin: f64) -> f64 {
        counts_per_bin / (self.bin_width_ps as f64 * 1e-9)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_index,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{i},{c}")?;
        }
        Ok(())
    }
}

pub fn bin_counts(stream: &TimeTagStream, bin_width_us: f64) -> Result<IntensityTrace, TraceError> {
    let width = (bin_width_us * 1e6).round();
    if width.is_nan() || width < 1.0 {
        return Err(TraceError::BinTooNarrow(bin_width_us));
    }
    let width = width as u64;
    let n_bins = (stream.meta().duration_ps / width) as usize;
    let mut counts = vec![0u32; n_bins];
    for tag in stream.tags() {
        let bin = (tag.time_ps / width) as usize;
        if bin < n_bins {
            counts[bin] += 1;
        }
    }
    Ok(IntensityTrace {
        bin_width_ps: width,
        origin_ps: 0,
        counts,
    })
}

/// Number of bins showing each count value.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntensityHistogram {
    pub occurrences: Vec<u64>,
}

impl IntensityHistogram {
    pub fn from_trace(trace: &IntensityTrace) -> Self {
        let max = trace.counts.iter().copied().max().unwrap_or(0) as usize;
        let mut occurrences = vec![0u64; if trace.counts.is_empty() { 0 } else { max + 1 }];
        for &c in &trace.counts {
            occurrences[c as usize] += 1;
        }
        IntensityHistogram { occurrences }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = u32>) -> Self {
        let mut occurrences: Vec<u64> = Vec::new();
        for c in counts {
            let c = c as usize;
            if c >= occurrences.len() {
                occurrences.resize(c + 1, 0);
            }
            occurrences[c] += 1;
        }
        IntensityHistogram { occurrences }
    }

    pub fn total(&self) -> u64 {
        self.occurrences.iter().sum()
    }

    pub fn distinct_values(&self) -> usize {
        self.occurrences.iter().filter(|&&n| n > 0).count()
    }

    pub fn mean(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.iter().map(|(c, n)| c as f64 * n as f64).sum::<f64>() / total as f64
    }

    /// Smallest count value whose cumulative share reaches `p`.
    pub fn quantile(&self, p: f64) -> u32 {
        let target = p * self.total() as f64;
        let mut acc = 0u64;
        for (c, n) in self.iter() {
            acc += n;
            if acc as f64 >= target {
                return c;
            }
        }
        self.occurrences.len().saturating_sub(1) as u32
    }

    /// Non-empty `(count value, occurrences)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.occurrences
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, &n)| (c as u32, n))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "counts_per_bin,occurrences")?;
        for (c, n) in self.occurrences.iter().enumerate() {
            writeln!(out, "{c},{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonComponent {
    pub weight: f64,
    /// Counts per bin.
    pub mean: f64,
}

impl PoissonComponent {
    fn ln_weighted_pmf(&self, c: u32, ln_fact: f64) -> f64 {
        self.weight.ln() + ln_poisson(c, self.mean, ln_fact)
    }
}

fn ln_poisson(c: u32, mean: f64, ln_fact: f64) -> f64 {
    if mean <= 0.0 {
        return if c == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    f64::from(c) * mean.ln() - mean - ln_fact
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    for c in 0..n {
        if c > 0 {
            acc += (c as f64).ln();
        }
        out.push(acc);
    }
    out
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Maximum-likelihood two-Poisson description of an intensity histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixture {
    pub grey: PoissonComponent,
    pub bright: PoissonComponent,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Reduced chi-square over count values outside the inter-mode region.
    pub goodness: Option<f64>,
}

impl PoissonMixture {
    /// Posterior probability that a bin with `c` counts belongs to the grey state.
    pub fn grey_posterior(&self, c: u32) -> f64 {
        let lf = ln_factorial(c);
        let g = self.grey.ln_weighted_pmf(c, lf);
        let b = self.bright.ln_weighted_pmf(c, lf);
        (g - log_sum_exp(g, b)).exp()
    }

    pub fn pmf(&self, c: u32) -> f64 {
        let lf = ln_factorial(c);
        log_sum_exp(
            self.grey.ln_weighted_pmf(c, lf),
            self.bright.ln_weighted_pmf(c, lf),
        )
        .exp()
    }

    fn search_limit(&self) -> u32 {
        (self.bright.mean + 12.0 * self.bright.mean.sqrt() + 20.0).ceil() as u32
    }
}

fn ln_factorial(c: u32) -> f64 {
    (2..=c).map(|k| f64::from(k).ln()).sum()
}

/// Expectation-maximization fit of a grey/bright Poisson mixture.
///
/// Starts from the 10th and 90th percentiles. Reports `Unimodal` when the
/// fitted means end up within one count per bin, or when the second component
/// does not pay for its two extra parameters under the BIC.
pub fn fit_two_poisson(hist: &IntensityHistogram) -> Result<PoissonMixture, TraceError> {
    if hist.distinct_values() < 2 {
        return Err(TraceError::DegenerateHistogram);
    }
    let total = hist.total() as f64;
    let ln_fact = ln_factorials(hist.occurrences.len());
    let values: Vec<(u32, f64, f64)> = hist
        .iter()
        .map(|(c, n)| (c, n as f64, ln_fact[c as usize]))
        .collect();

    let mut lo = f64::from(hist.quantile(0.10)).max(0.05);
    let mut hi = f64::from(hist.quantile(0.90));
    if hi <= lo {
        lo = (lo - 0.5).max(0.05);
        hi = lo + 1.0;
    }
    let mut grey = PoissonComponent {
        weight: 0.5,
        mean: lo,
    };
    let mut bright = PoissonComponent {
        weight: 0.5,
        mean: hi,
    };

    let log_likelihood = |g: &PoissonComponent, b: &PoissonComponent| -> f64 {
        values
            .iter()
            .map(|&(c, n, lf)| n * log_sum_exp(g.ln_weighted_pmf(c, lf), b.ln_weighted_pmf(c, lf)))
            .sum()
    };

    let mut ll = log_likelihood(&grey, &bright);
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        let (mut wg, mut sg, mut wb, mut sb) = (0.0, 0.0, 0.0, 0.0);
        for &(c, n, lf) in &values {
            let g = grey.ln_weighted_pmf(c, lf);
            let b = bright.ln_weighted_pmf(c, lf);
            let r = (g - log_sum_exp(g, b)).exp();
            wg += n * r;
            sg += n * r * f64::from(c);
            wb += n * (1.0 - r);
            sb += n * (1.0 - r) * f64::from(c);
        }
        if wg <= 0.0 || wb <= 0.0 {
            break;
        }
        grey = PoissonComponent {
            weight: wg / total,
            mean: sg / wg,
        };
        bright = PoissonComponent {
            weight: wb / total,
            mean: sb / wb,
        };
        let next = log_likelihood(&grey, &bright);
        let gain = (next - ll) / total;
        ll = next;
        if gain.abs() < EM_TOLERANCE {
            break;
        }
    }
    if grey.mean > bright.mean {
        std::mem::swap(&mut grey, &mut bright);
    }

    let single_mean = hist.mean();
    let ll_single: f64 = values
        .iter()
        .map(|&(c, n, lf)| n * ln_poisson(c, single_mean, lf))
        .sum();
    let unimodal = bright.mean - grey.mean < 1.0
        || grey.weight <= 0.0
        || bright.weight <= 0.0
        || 2.0 * (ll - ll_single) < 2.0 * total.ln();
    if unimodal {
        return Err(TraceError::Unimodal {
            mean_a: grey.mean,
            mean_b: bright.mean,
        });
    }

    let mut mixture = PoissonMixture {
        grey,
        bright,
        log_likelihood: ll,
        iterations,
        goodness: None,
    };
    let mut chi2 = 0.0;
    let mut used = 0usize;
    for c in 0..hist.occurrences.len() as u32 {
        let expected = total * mixture.pmf(c);
        let post = mixture.grey_posterior(c);
        if expected < 5.0 || post.max(1.0 - post) < 0.99 {
            continue;
        }
        let observed = hist.occurrences[c as usize] as f64;
        chi2 += (observed - expected).powi(2) / expected;
        used += 1;
    }
    if used > 3 {
        mixture.goodness = Some(chi2 / (used - 3) as f64);
    }
    Ok(mixture)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowPolicy {
    /// Each window ends where the other state's posterior reaches `1 - threshold`.
    Posterior { threshold: f64 },
    /// Fixed thresholds in counts/ms.
    Manual {
        grey_below_per_ms: f64,
        bright_above_per_ms: f64,
    },
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::Posterior { threshold: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Bright,
    Grey,
    Discarded,
}

/// Count-rate windows: grey `[0, grey_upper]`, bright `[bright_lower, inf)`, in counts/bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateWindows {
    pub grey_upper: f64,
    pub bright_lower: f64,
    pub bin_width_ps: u64,
}

impl StateWindows {
    pub fn manual(
        grey_below_per_ms: f64,
        bright_above_per_ms: f64,
        bin_width_ps: u64,
    ) -> Result<Self, TraceError> {
        let per_bin = bin_width_ps as f64 * 1e-9;
        let w = StateWindows {
            grey_upper: grey_below_per_ms * per_bin,
            bright_lower: bright_above_per_ms * per_bin,
            bin_width_ps,
        };
        if !(w.grey_upper >= 0.0 && w.grey_upper < w.bright_lower) {
            return Err(TraceError::BadThresholds {
                grey_below: grey_below_per_ms,
                bright_above: bright_above_per_ms,
            });
        }
        Ok(w)
    }

    pub fn classify(&self, counts: u32) -> StateClass {
        let c = f64::from(counts);
        if c <= self.grey_upper {
            StateClass::Grey
        } else if c >= self.bright_lower {
            StateClass::Bright
        } else {
            StateClass::Discarded
        }
    }

    pub fn grey_upper_per_ms(&self) -> f64 {
        self.grey_upper / (self.bin_width_ps as f64 * 1e-9)
    }

    pub fn bright_lower_per_ms(&self) -> f64 {
        self.bright_lower / (self.bin_width_ps as f64 * 1e-9)
    }
}

pub fn select_windows(
    mixture: &PoissonMixture,
    policy: &WindowPolicy,
    bin_width_ps: u64,
) -> Result<StateWindows, TraceError> {
    match *policy {
        WindowPolicy::Manual {
            grey_below_per_ms,
            bright_above_per_ms,
        } => StateWindows::manual(grey_below_per_ms, bright_above_per_ms, bin_width_ps),
        WindowPolicy::Posterior { threshold } => {
            let limit = mixture.search_limit();
            let mut grey_upper = None;
            let mut bright_lower = None;
            for c in 0..=limit {
                let p = mixture.grey_posterior(c);
                if p > threshold {
                    grey_upper = Some(c);
                }
                if bright_lower.is_none() && 1.0 - p > threshold {
                    bright_lower = Some(c);
                }
            }
            match (grey_upper, bright_lower) {
                (Some(g), Some(b)) if g < b => Ok(StateWindows {
                    grey_upper: f64::from(g),
                    bright_lower: f64::from(b),
                    bin_width_ps,
                }),
                _ => Err(TraceError::DegenerateSeparation { threshold }),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub bright: f64,
    pub grey: f64,
    pub discarded: f64,
}

/// Photons split by the class of the bin they fall in.
#[derive(Debug, Clone)]
pub struct PostSelection {
    pub bright: TimeTagStream,
    pub grey: TimeTagStream,
    pub fractions: Fractions,
    /// Class of every input tag, aligned with the source stream.
    pub classes: Vec<StateClass>,
}

pub fn post_select(
    stream: &TimeTagStream,
    trace: &IntensityTrace,
    windows: &StateWindows,
) -> Result<PostSelection, TraceError> {
    let width = trace.bin_width_ps;
    if trace.origin_ps != 0 {
        return Err(TraceError::Mismatch(format!(
            "trace origin {} ps",
            trace.origin_ps
        )));
    }
    if width == 0 || stream.meta().duration_ps / width != trace.counts.len() as u64 {
        return Err(TraceError::Mismatch(format!(
            "{} bins of {} ps do not tile a {} ps stream",
            trace.counts.len(),
            width,
            stream.meta().duration_ps
        )));
    }
    if windows.bin_width_ps != width {
        return Err(TraceError::Mismatch(format!(
            "windows defined for {} ps bins, trace uses {} ps",
            windows.bin_width_ps, width
        )));
    }

    let bin_class: Vec<StateClass> = trace.counts.iter().map(|&c| windows.classify(c)).collect();
    let mut bright = Vec::new();
    let mut grey = Vec::new();
    let mut classes = Vec::with_capacity(stream.len());
    for &tag in stream.tags() {
        let class = bin_class
            .get((tag.time_ps / width) as usize)
            .copied()
            .unwrap_or(StateClass::Discarded);
        match class {
            StateClass::Bright => bright.push(tag),
            StateClass::Grey => grey.push(tag),
            StateClass::Discarded => {}
        }
        classes.push(class);
    }

    let fractions = if stream.is_empty() {
        // no photons: report the share of bins instead
        let n = bin_class.len().max(1) as f64;
        let count = |k| bin_class.iter().filter(|&&c| c == k).count() as f64 / n;
        if bin_class.is_empty() {
            Fractions {
                bright: 0.0,
                grey: 0.0,
                discarded: 1.0,
            }
        } else {
            Fractions {
                bright: count(StateClass::Bright),
                grey: count(StateClass::Grey),
                discarded: count(StateClass::Discarded),
            }
        }
    } else {
        let n = stream.len() as f64;
        let (b, g) = (bright.len() as f64 / n, grey.len() as f64 / n);
        Fractions {
            bright: b,
            grey: g,
            discarded: 1.0 - b - g,
        }
    };

    let substream = |tags: Vec<Tag>, class: StateClass| {
        let coverage = Coverage::Bins {
            origin_ps: 0,
            width_ps: width,
            selected: bin_class.iter().map(|&c| c == class).collect(),
        };
        let meta: StreamMeta = *stream.meta();
        TimeTagStream::from_parts_unchecked(tags, meta, coverage)
    };
    Ok(PostSelection {
        bright: substream(bright, StateClass::Bright),
        grey: substream(grey, StateClass::Grey),
        fractions,
        classes,
    })
}
