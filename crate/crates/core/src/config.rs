//! TOML run configuration and the bundled emitter presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlate::{CorrelationConfig, PulsedConfig};
use crate::physics::{auger_rates, EmitterPhysics, ExcitationModel, PhysicsError};
use crate::simulate::{DetectorModel, EmitterModel, SimError, DEFAULT_REP_PERIOD_PS};
use crate::trace::{WindowPolicy, DEFAULT_BIN_WIDTH_US};

pub const PRESETS: [(&str, &str); 2] = [
    ("dr1", include_str!("../presets/dr1.toml")),
    ("dr2", include_str!("../presets/dr2.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("unknown preset `{0}` (available: dr1, dr2)")]
    UnknownPreset(String),
    #[error("`{key}` {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Emitter rates, given either as lifetimes or as Table-1-style yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub tau_x_ns: f64,
    pub tau_a_minus_ns: Option<f64>,
    pub tau_a_plus_ns: Option<f64>,
    pub q_trion: Option<f64>,
    pub q_2x: Option<f64>,
    #[serde(default = "default_dwell_bright")]
    pub dwell_bright_ms: f64,
    #[serde(default = "default_dwell_grey")]
    pub dwell_grey_ms: f64,
    #[serde(default = "default_max_excitons")]
    pub max_excitons: u32,
}

fn default_dwell_bright() -> f64 {
    10.0
}

fn default_dwell_grey() -> f64 {
    1.0
}

fn default_max_excitons() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationSection {
    pub mean_excitations: f64,
    pub rep_period_ps: u64,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        ExcitationSection {
            mean_excitations: 0.4,
            rep_period_ps: DEFAULT_REP_PERIOD_PS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection {
            duration_s: 30.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub bin_width_us: f64,
    pub window: WindowPolicy,
    pub decay_bin_ns: f64,
    pub fit_window_bright_ns: Option<(f64, f64)>,
    pub fit_window_grey_ns: Option<(f64, f64)>,
    pub fit_window_all_ns: Option<(f64, f64)>,
    pub correlation: CorrelationConfig,
    pub pulsed: PulsedConfig,
    /// Lag range whose pooled g² sets the side-peak level of the pulsed ACF.
    pub long_delay_ns: (f64, f64),
    /// Mean pairs per pulse; taken from the excitation section when absent.
    pub mean_excitations: Option<f64>,
    pub q_x_assumed: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width_us: DEFAULT_BIN_WIDTH_US,
            window: WindowPolicy::default(),
            decay_bin_ns: 1.0,
            fit_window_bright_ns: None,
            fit_window_grey_ns: None,
            fit_window_all_ns: None,
            correlation: CorrelationConfig::default(),
            pulsed: PulsedConfig::default(),
            long_delay_ns: (1_000.0, 10_000.0),
            mean_excitations: None,
            q_x_assumed: 1.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.bin_width_us > 0.0 && self.bin_width_us.is_finite()) {
            return Err(invalid("analysis.bin_width_us", "must be > 0"));
        }
        if !(self.decay_bin_ns > 0.0 && self.decay_bin_ns.is_finite()) {
            return Err(invalid("analysis.decay_bin_ns", "must be > 0"));
        }
        match self.window {
            WindowPolicy::Posterior { threshold } if !(threshold > 0.5 && threshold < 1.0) => {
                return Err(invalid("analysis.window.threshold", "must be in (0.5, 1)"));
            }
            WindowPolicy::Manual {
                grey_below_per_ms,
                bright_above_per_ms,
            } if !(grey_below_per_ms >= 0.0 && grey_below_per_ms < bright_above_per_ms) => {
                return Err(invalid(
                    "analysis.window",
                    "needs 0 <= grey_below_per_ms < bright_above_per_ms",
                ));
            }
            _ => {}
        }
        self.correlation
            .edges()
            .map_err(|e| invalid("analysis.correlation", e.to_string()))?;
        if self.pulsed.periods == 0 || self.pulsed.resolution_ps == 0 {
            return Err(invalid(
                "analysis.pulsed",
                "periods and resolution_ps must be > 0",
            ));
        }
        let (lo, hi) = self.long_delay_ns;
        if !(lo >= 0.0 && lo < hi) {
            return Err(invalid(
                "analysis.long_delay_ns",
                "must be an increasing pair",
            ));
        }
        if !(self.q_x_assumed > 0.0 && self.q_x_assumed <= 1.0) {
            return Err(invalid("analysis.q_x_assumed", "must be in (0, 1]"));
        }
        if let Some(m) = self.mean_excitations {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid("analysis.mean_excitations", "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the preset this configuration was layered on.
    #[serde(default)]
    pub preset: Option<String>,
    pub emitter: Option<EmitterSection>,
    #[serde(default)]
    pub excitation: ExcitationSection,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = preset_text(name)?;
        let mut cfg = Self::from_toml(text)?;
        cfg.preset = Some(name.to_string());
        Ok(cfg)
    }

    /// Parses TOML, layering it over `preset = "..."` when present. A user
    /// `[emitter]` table replaces the preset's; other sections merge per key.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let merged = match user.get("preset") {
            Some(toml::Value::String(name)) => {
                let mut base: toml::Table = preset_text(name)?
                    .parse()
                    .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
                for (key, value) in user {
                    match (base.get_mut(&key), value) {
                        (Some(toml::Value::Table(b)), toml::Value::Table(u))
                            if key != "emitter" =>
                        {
                            merge_tables(b, u);
                        }
                        (_, value) => {
                            base.insert(key, value);
                        }
                    }
                }
                base
            }
            Some(_) => return Err(invalid("preset", "must be a string")),
            None => user,
        };
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// A file path, or a preset name when no such file exists.
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        let path = Path::new(spec);
        if !path.exists() && PRESETS.iter().any(|(n, _)| *n == spec) {
            Self::preset(spec)
        } else {
            Self::from_path(path)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(e) = &self.emitter {
            self.emitter_physics_from(e)?;
            self.emitter_model()?;
        }
        if self.excitation.mean_excitations < 0.0 || !self.excitation.mean_excitations.is_finite() {
            return Err(invalid("excitation.mean_excitations", "must be >= 0"));
        }
        if self.excitation.rep_period_ps == 0 {
            return Err(invalid("excitation.rep_period_ps", "must be > 0"));
        }
        self.detector
            .validate()
            .map_err(|e| sim_key("detector", e))?;
        let d = self.acquisition.duration_s;
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid(
                "acquisition.duration_s",
                format!("must be > 0, got {d}"),
            ));
        }
        self.analysis.validate()
    }

    fn emitter_physics_from(&self, e: &EmitterSection) -> Result<EmitterPhysics, ConfigError> {
        let phys_err = |key: &str, err: PhysicsError| invalid(key, err.to_string());
        if !(e.tau_x_ns > 0.0 && e.tau_x_ns.is_finite()) {
            return Err(invalid("emitter.tau_x_ns", "must be > 0"));
        }
        let gamma_r = 1.0 / e.tau_x_ns;
        let gamma_a_minus = match (e.tau_a_minus_ns, e.q_trion) {
            (Some(t), None) if t > 0.0 => 1.0 / t,
            (None, Some(q)) if q > 0.0 && q <= 1.0 => 2.0 * gamma_r * (1.0 / q - 1.0),
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "emitter",
                    "give tau_a_minus_ns or q_trion, not both",
                ));
            }
            (None, None) => {
                return Err(invalid(
                    "emitter.tau_a_minus_ns",
                    "is required (or q_trion)",
                ))
            }
            (Some(_), None) => return Err(invalid("emitter.tau_a_minus_ns", "must be > 0")),
            (None, Some(_)) => return Err(invalid("emitter.q_trion", "must be in (0, 1]")),
        };
        let gamma_a_plus = match (e.tau_a_plus_ns, e.q_2x) {
            (Some(t), None) if t > 0.0 => 1.0 / t,
            (None, Some(q)) if q > 0.0 && q <= 1.0 => {
                let q_trion = 2.0 * gamma_r / (2.0 * gamma_r + gamma_a_minus);
                let rates = auger_rates(gamma_r, q_trion, q)
                    .map_err(|err| phys_err("emitter.q_2x", err))?;
                if !rates.is_consistent() {
                    return Err(invalid("emitter.q_2x", "implies a negative Auger rate"));
                }
                rates.value.gamma_a_plus
            }
            (Some(_), Some(_)) => {
                return Err(invalid("emitter", "give tau_a_plus_ns or q_2x, not both"))
            }
            (None, None) => return Err(invalid("emitter.tau_a_plus_ns", "is required (or q_2x)")),
            (Some(_), None) => return Err(invalid("emitter.tau_a_plus_ns", "must be > 0")),
            (None, Some(_)) => return Err(invalid("emitter.q_2x", "must be in (0, 1]")),
        };
        EmitterPhysics::new(gamma_r, gamma_a_minus, gamma_a_plus)
            .map_err(|err| phys_err("emitter", err))
    }

    pub fn emitter_model(&self) -> Result<EmitterModel, ConfigError> {
        let e = self
            .emitter
            .as_ref()
            .ok_or_else(|| invalid("emitter", "section is required for simulation"))?;
        let physics = self.emitter_physics_from(e)?;
        let excitation = ExcitationModel::new(self.excitation.mean_excitations)
            .map_err(|err| invalid("excitation.mean_excitations", err.to_string()))?;
        let model = EmitterModel {
            physics,
            excitation,
            rep_period_ps: self.excitation.rep_period_ps,
            dwell_bright_ms: e.dwell_bright_ms,
            dwell_grey_ms: e.dwell_grey_ms,
            max_excitons: e.max_excitons,
        };
        model.validate().map_err(|err| match err {
            SimError::Invalid {
                name: "mean_excitations",
                reason,
            } => invalid("excitation.mean_excitations", reason),
            SimError::Invalid {
                name: "rep_period_ps",
                reason,
            } => invalid("excitation.rep_period_ps", reason),
            other => sim_key("emitter", other),
        })?;
        Ok(model)
    }

    pub fn mean_excitations(&self) -> f64 {
        self.analysis
            .mean_excitations
            .unwrap_or(self.excitation.mean_excitations)
    }
}

fn sim_key(section: &str, err: SimError) -> ConfigError {
    match err {
        SimError::Invalid { name, reason } => invalid(&format!("{section}.{name}"), reason),
        other => invalid(section, other.to_string()),
    }
}

/// Nested tables merge per key, except tagged ones (`policy = ...`), which replace.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("policy") => {
                merge_tables(b, u)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn preset_text(name: &str) -> Result<&'static str, ConfigError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load() {
        for (name, _) in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            assert!(cfg.emitter_model().is_ok());
        }
        let dr1 = RunConfig::preset("dr1").unwrap();
        assert!((dr1.emitter_model().unwrap().physics.tau_x() - 65.0).abs() < 1e-9);
        assert!(matches!(
            RunConfig::preset("dr3"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn overlay_merges_per_key() {
        let cfg =
            RunConfig::from_toml("preset = \"dr1\"\n[acquisition]\nduration_s = 2.0\n").unwrap();
        assert_eq!(cfg.acquisition.duration_s, 2.0);
        assert_eq!(cfg.acquisition.seed, 1);
        assert_eq!(cfg.detector.efficiency, 0.1043);

        let text =
            "preset = \"dr1\"\n[analysis]\nwindow = { policy = \"posterior\", threshold = 0.95 }\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(
            cfg.analysis.window,
            WindowPolicy::Posterior { threshold: 0.95 }
        );
        assert_eq!(cfg.analysis.bin_width_us, 250.0);
    }

    #[test]
    fn emitter_overlay_replaces() {
        let text = "preset = \"dr1\"\n[emitter]\ntau_x_ns = 30.0\nq_trion = 0.5\nq_2x = 0.2\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let e = cfg.emitter.as_ref().unwrap();
        assert_eq!(e.tau_a_minus_ns, None);
        assert_eq!(e.dwell_grey_ms, 1.0);
        let phys = cfg.emitter_model().unwrap().physics;
        assert!((phys.trion_qy() - 0.5).abs() < 1e-12);
        assert!((phys.biexciton_qy() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_names_key() {
        let err = RunConfig::from_toml("preset = \"dr1\"\n[acquisition]\nduration_s = 0.0\n")
            .unwrap_err();
        assert!(err.to_string().contains("acquisition.duration_s"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml("preset = \"dr1\"\n[detector]\nefficency = 0.2\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn manual_window_parses() {
        let cfg = RunConfig::preset("dr2").unwrap();
        assert_eq!(
            cfg.analysis.window,
            WindowPolicy::Manual {
                grey_below_per_ms: 30.0,
                bright_above_per_ms: 100.0
            }
        );
        let cfg = RunConfig::from_toml(
            "[analysis]\nwindow = { policy = \"posterior\", threshold = 0.95 }\n",
        )
        .unwrap();
        assert!(cfg.emitter.is_none());
        assert!(cfg.emitter_model().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::preset("dr1").unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
