//! Monte Carlo generation of HBT time-tag streams from a flickering emitter.
//!
//! A two-state Markov chain (neutral/charged) is simulated first over the
//! whole acquisition. Pulses are then processed in fixed-size segments, each
//! with its own ChaCha stream derived from the seed, so the output does not
//! depend on how many threads run the segments.

use arrayvec::ArrayVec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{EmitterPhysics, ExcitationModel};
use crate::timetags::{StreamMeta, Tag, TimeTagStream};

pub const DEFAULT_REP_PERIOD_PS: u64 = 400_000;
/// Pulses per independently seeded segment.
pub const SEGMENT_PULSES: u64 = 1 << 18;

const TRAJECTORY_STREAM: u64 = 0;
const DARK_STREAM_BASE: u64 = u64::MAX - 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error(
        "duration {duration_ps} ps is shorter than one repetition period ({rep_period_ps} ps)"
    )]
    DurationTooShort {
        duration_ps: u64,
        rep_period_ps: u64,
    },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitterState {
    /// Bright state, neutral exciton.
    Neutral,
    /// Grey state, negative trion.
    Charged,
}

impl EmitterState {
    fn flipped(self) -> Self {
        match self {
            EmitterState::Neutral => EmitterState::Charged,
            EmitterState::Charged => EmitterState::Neutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterModel {
    pub physics: EmitterPhysics,
    pub excitation: ExcitationModel,
    pub rep_period_ps: u64,
    /// Mean residence in the neutral state, ms.
    pub dwell_bright_ms: f64,
    /// Mean residence in the charged state, ms.
    pub dwell_grey_ms: f64,
    /// Cap on electron-hole pairs per pulse; anything above one pair runs the biexciton cascade.
    pub max_excitons: u32,
}

impl EmitterModel {
    pub fn new(physics: EmitterPhysics, excitation: ExcitationModel) -> Self {
        EmitterModel {
            physics,
            excitation,
            rep_period_ps: DEFAULT_REP_PERIOD_PS,
            dwell_bright_ms: 10.0,
            dwell_grey_ms: 1.0,
            max_excitons: 2,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rep_period_ps == 0 {
            return Err(invalid("rep_period_ps", "must be > 0"));
        }
        if !(self.dwell_bright_ms > 0.0 && self.dwell_bright_ms.is_finite()) {
            return Err(invalid("dwell_bright_ms", "must be > 0"));
        }
        if !(self.dwell_grey_ms > 0.0 && self.dwell_grey_ms.is_finite()) {
            return Err(invalid("dwell_grey_ms", "must be > 0"));
        }
        if self.max_excitons < 2 {
            return Err(invalid("max_excitons", "must be >= 2"));
        }
        if self.excitation.mean() <= 0.0 {
            return Err(invalid("mean_excitations", "must be > 0 for simulation"));
        }
        Ok(())
    }

    /// Long-run fraction of time in the neutral state.
    pub fn bright_occupancy(&self) -> f64 {
        self.dwell_bright_ms / (self.dwell_bright_ms + self.dwell_grey_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    /// Probability that an emitted photon is detected at all.
    pub efficiency: f64,
    /// Fraction of detected photons sent to channel 1.
    pub split_ratio: f64,
    /// Dark counts per second on each channel.
    pub dark_rate_hz: f64,
    /// Non-paralyzable dead time per channel.
    pub dead_time_ps: u64,
    /// Gaussian timing jitter, standard deviation.
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            efficiency: 0.10,
            split_ratio: 0.5,
            dark_rate_hz: 100.0,
            dead_time_ps: 50_000,
            jitter_sigma_ps: 300.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency", "must be in [0, 1]"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(invalid("split_ratio", "must be in (0, 1)"));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(invalid("dark_rate_hz", "must be >= 0"));
        }
        if !(self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps.is_finite()) {
            return Err(invalid("jitter_sigma_ps", "must be >= 0"));
        }
        Ok(())
    }
}

/// Emission times (ns after the pulse) of one relaxation cascade; at most two photons.
pub type Cascade = ArrayVec<f64, 2>;

fn draw_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Relaxation of `n_excitations` pairs created by one pulse.
///
/// Two or more pairs relax as a biexciton: one radiative or Auger step at the
/// biexciton rate, then the remaining exciton (neutral) or trion (charged).
pub fn pulse_cascade<R: Rng + ?Sized>(
    state: EmitterState,
    n_excitations: u32,
    physics: &EmitterPhysics,
    rng: &mut R,
) -> Cascade {
    let mut photons = Cascade::new();
    if n_excitations == 0 {
        return photons;
    }
    let mut t = 0.0;
    if n_excitations >= 2 {
        let total = physics.biexciton_total_rate();
        t = draw_exponential(total, rng);
        let u: f64 = rng.random();
        if u < physics.biexciton_radiative_rate() / total {
            photons.push(t);
        }
    }
    match state {
        EmitterState::Neutral => {
            t += draw_exponential(physics.gamma_r, rng);
            photons.push(t);
        }
        EmitterState::Charged => {
            let total = physics.trion_total_rate();
            t += draw_exponential(total, rng);
            let u: f64 = rng.random();
            if u < physics.trion_radiative_rate() / total {
                photons.push(t);
            }
        }
    }
    photons
}

/// Switching history of the two-state chain over one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlickerTrajectory {
    pub initial: EmitterState,
    /// Times of state changes, ascending.
    pub switches: Vec<u64>,
    pub duration_ps: u64,
}

impl FlickerTrajectory {
    /// Starts from the stationary distribution.
    pub fn simulate<R: Rng + ?Sized>(model: &EmitterModel, duration_ps: u64, rng: &mut R) -> Self {
        let initial = if rng.random::<f64>() < model.bright_occupancy() {
            EmitterState::Neutral
        } else {
            EmitterState::Charged
        };
        let mean_ps = |s: EmitterState| match s {
            EmitterState::Neutral => model.dwell_bright_ms * 1e9,
            EmitterState::Charged => model.dwell_grey_ms * 1e9,
        };
        let mut switches = Vec::new();
        let mut state = initial;
        let mut t = 0.0f64;
        loop {
            t += draw_exponential(1.0 / mean_ps(state), rng);
            if t >= duration_ps as f64 {
                break;
            }
            switches.push(t as u64);
            state = state.flipped();
        }
        FlickerTrajectory {
            initial,
            switches,
            duration_ps,
        }
    }

    pub fn state_at(&self, time_ps: u64) -> EmitterState {
        let flips = self.switches.partition_point(|&s| s <= time_ps);
        if flips % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    /// Fraction of the acquisition spent in the neutral state.
    pub fn bright_fraction(&self) -> f64 {
        let mut bright = 0u64;
        let mut state = self.initial;
        let mut last = 0u64;
        for &s in self
            .switches
            .iter()
            .chain(std::iter::once(&self.duration_ps))
        {
            if state == EmitterState::Neutral {
                bright += s - last;
            }
            last = s;
            state = state.flipped();
        }
        bright as f64 / self.duration_ps as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionStats {
    pub pulses: u64,
    pub excited_pulses: u64,
    pub emitted_photons: u64,
    pub detected_signal: u64,
    pub dark_counts: u64,
    pub lost_to_dead_time: u64,
}

/// A simulated stream plus ground truth the analysis never sees.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub stream: TimeTagStream,
    /// Emitter state at each tag's pulse, aligned with `stream.tags()`.
    pub labels: Vec<EmitterState>,
    pub trajectory: FlickerTrajectory,
    pub stats: EmissionStats,
}

fn duration_to_ps(duration_s: f64) -> Result<u64, SimError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(invalid("duration_s", "must be > 0"));
    }
    Ok((duration_s * 1e12).round() as u64)
}

fn segment_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct SegmentOutput {
    records: Vec<(Tag, EmitterState)>,
    excited: u64,
    emitted: u64,
}

fn simulate_segment(
    model: &EmitterModel,
    detector: &DetectorModel,
    trajectory: &FlickerTrajectory,
    cdf: &[f64],
    pulses: std::ops::Range<u64>,
    duration_ps: u64,
    rng: &mut ChaCha8Rng,
) -> SegmentOutput {
    let period = model.rep_period_ps;
    let jitter = (detector.jitter_sigma_ps > 0.0)
        .then(|| Normal::new(0.0, detector.jitter_sigma_ps).expect("validated sigma"));
    let mut out = SegmentOutput {
        records: Vec::new(),
        excited: 0,
        emitted: 0,
    };
    let first_time = pulses.start * period;
    let mut next_switch = trajectory.switches.partition_point(|&s| s <= first_time);
    let mut state = trajectory.state_at(first_time);
    for k in pulses {
        let pulse_time = k * period;
        while next_switch < trajectory.switches.len()
            && trajectory.switches[next_switch] <= pulse_time
        {
            state = state.flipped();
            next_switch += 1;
        }
        let u: f64 = rng.random();
        let n = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len()) as u32;
        if n == 0 {
            continue;
        }
        out.excited += 1;
        for t_ns in pulse_cascade(state, n, &model.physics, rng) {
            out.emitted += 1;
            if rng.random::<f64>() >= detector.efficiency {
                continue;
            }
            let channel = if rng.random::<f64>() < detector.split_ratio {
                1
            } else {
                2
            };
            let mut t = pulse_time as f64 + t_ns * 1e3;
            if let Some(j) = &jitter {
                t += j.sample(rng);
            }
            let t = t.round().clamp(0.0, duration_ps as f64) as u64;
            out.records.push((Tag::new(channel, t), state));
        }
    }
    out
}

/// Simulates an HBT acquisition of `duration_s` seconds. Deterministic for a given seed.
pub fn simulate_stream(
    model: &EmitterModel,
    detector: &DetectorModel,
    duration_s: f64,
    seed: u64,
) -> Result<Simulation, SimError> {
    model.validate()?;
    detector.validate()?;
    let duration_ps = duration_to_ps(duration_s)?;
    let period = model.rep_period_ps;
    if duration_ps < period {
        return Err(SimError::DurationTooShort {
            duration_ps,
            rep_period_ps: period,
        });
    }

    let trajectory = FlickerTrajectory::simulate(
        model,
        duration_ps,
        &mut segment_rng(seed, TRAJECTORY_STREAM),
    );

    // P(N <= n) for n < max_excitons; draws past the table are capped
    let cdf: Vec<f64> = (0..model.max_excitons)
        .scan(0.0, |acc, n| {
            *acc += model.excitation.p_exactly(n);
            Some(*acc)
        })
        .collect();

    let n_pulses = duration_ps.div_ceil(period);
    let n_segments = n_pulses.div_ceil(SEGMENT_PULSES);
    let segments: Vec<SegmentOutput> = (0..n_segments)
        .into_par_iter()
        .map(|s| {
            let start = s * SEGMENT_PULSES;
            let end = (start + SEGMENT_PULSES).min(n_pulses);
            let mut rng = segment_rng(seed, 1 + s);
            simulate_segment(
                model,
                detector,
                &trajectory,
                &cdf,
                start..end,
                duration_ps,
                &mut rng,
            )
        })
        .collect();

    let mut stats = EmissionStats {
        pulses: n_pulses,
        ..EmissionStats::default()
    };
    let mut records: Vec<(Tag, EmitterState)> =
        Vec::with_capacity(segments.iter().map(|s| s.records.len()).sum());
    for seg in segments {
        stats.excited_pulses += seg.excited;
        stats.emitted_photons += seg.emitted;
        records.extend(seg.records);
    }
    stats.detected_signal = records.len() as u64;

    if detector.dark_rate_hz > 0.0 {
        let mean_gap_ps = 1e12 / detector.dark_rate_hz;
        for channel in 1..=2u8 {
            let mut rng = segment_rng(seed, DARK_STREAM_BASE + u64::from(channel));
            let mut t = 0.0f64;
            loop {
                t += draw_exponential(1.0 / mean_gap_ps, &mut rng);
                if t >= duration_ps as f64 {
                    break;
                }
                let time = t as u64;
                records.push((Tag::new(channel, time), trajectory.state_at(time)));
                stats.dark_counts += 1;
            }
        }
    }

    records.sort_by_key(|(tag, _)| *tag);

    let mut last = [None::<u64>; 2];
    let before = records.len();
    records.retain(|(tag, _)| {
        let slot = &mut last[usize::from(tag.channel - 1)];
        match *slot {
            Some(prev) if tag.time_ps - prev < detector.dead_time_ps => false,
            _ => {
                *slot = Some(tag.time_ps);
                true
            }
        }
    });
    stats.lost_to_dead_time = (before - records.len()) as u64;

    let (tags, labels): (Vec<Tag>, Vec<EmitterState>) = records.into_iter().unzip();
    let meta = StreamMeta::new(period, duration_ps);
    let stream = TimeTagStream::new(tags, meta).expect("simulated tags are sorted and in range");
    Ok(Simulation {
        stream,
        labels,
        trajectory,
        stats,
    })
}

/// Homogeneous Poisson photons at `rate_hz`, split evenly over two channels.
pub fn poissonian_reference_stream(
    rate_hz: f64,
    duration_s: f64,
    seed: u64,
) -> Result<TimeTagStream, SimError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(invalid("rate_hz", "must be > 0"));
    }
    let duration_ps = duration_to_ps(duration_s)?;
    let mut rng = segment_rng(seed, 0);
    let rate_per_ps = rate_hz * 1e-12;
    let mut tags = Vec::with_capacity((rate_hz * duration_s * 1.01) as usize);
    let mut t = 0.0f64;
    loop {
        t += draw_exponential(rate_per_ps, &mut rng);
        if t >= duration_ps as f64 {
            break;
        }
        let channel = if rng.random::<f64>() < 0.5 { 1 } else { 2 };
        tags.push(Tag::new(channel, t as u64));
    }
    // equal truncated times can land in either channel order
    tags.sort_unstable();
    Ok(TimeTagStream::new(tags, StreamMeta::new(0, duration_ps)).expect("sorted"))
}
