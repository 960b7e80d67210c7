//! Experiment configuration: one record drives a whole run.
//!
//! Configs are read from a flat `key = value` text file whose keys are named
//! exactly after the struct fields. Unknown keys are a hard error so typos
//! cannot silently fall back to defaults.

use crate::grid::{DopplerNorm, ResourceGrid};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("malformed config line {lineno}: {line:?}")]
    MalformedLine { lineno: usize, line: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which allocation solver a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    Bnb,
    #[default]
    Greedy,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverKind::Bnb => write!(f, "bnb"),
            SolverKind::Greedy => write!(f, "greedy"),
        }
    }
}

/// All knobs of a run. Defaults are the full-scale profile
/// ([`ExperimentConfig::paper_scale`]); [`ExperimentConfig::desk_scale`] is
/// the 100x100 profile used by the test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Subcarrier count M.
    pub subcarriers: usize,
    /// Symbol count N.
    pub symbols: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f_hz: f64,
    /// Cyclic prefix duration in s (upper bound on target delays).
    pub cp_duration_s: f64,
    /// Carrier frequency in Hz.
    pub f0_hz: f64,
    /// Total transmit power in dBm.
    pub p_tot_dbm: f64,
    /// Per-resource power sigma^2 in W; if absent it is derived by spreading
    /// the total power over the mu*M*N allocatable resources.
    pub per_resource_power_w: Option<f64>,
    /// Sensing noise variance sigma_w^2 in W (overridden by SNR-targeted sweeps).
    pub sensing_noise_w: f64,
    /// Communication noise variance sigma_z^2 in W.
    pub comm_noise_w: f64,
    /// Occupancy cap mu in (0, 1].
    pub mu: f64,
    /// Spectral-efficiency threshold in bits/s/Hz, per UE.
    pub se_threshold: f64,
    /// Delay-CRB weight in [0, 1].
    pub eps_tau: f64,
    /// Doppler-CRB weight in [0, 1].
    pub eps_nu: f64,
    /// Contiguous-block size N_b for the block scheduler.
    pub block_size: usize,
    /// Schatten exponent p in (0, 1] for matrix completion.
    pub schatten_p: f64,
    /// Doppler normalization for the design objective.
    pub doppler_norm: DopplerNorm,
    /// Subcarriers per coarse subchannel (must divide M).
    pub group_f: usize,
    /// Symbols per coarse slot (must divide N).
    pub group_t: usize,
    /// Reference target range in m.
    pub range_m: f64,
    /// Target reflectivity constant scaling the amplitude power.
    pub reflectivity: f64,
    /// Allocation solver.
    pub solver: SolverKind,
    /// Master RNG seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper_scale()
    }
}

impl ExperimentConfig {
    /// Full-scale parameters: 1000x1000 grid, 1 GHz bandwidth, 30 GHz
    /// carrier, 43 dBm, mu = 0.25, eta = 4 bits/s/Hz, N_b = 10, R = 50 m.
    pub fn paper_scale() -> Self {
        Self {
            subcarriers: 1000,
            symbols: 1000,
            delta_f_hz: 1.0e6,
            cp_duration_s: 1.0e-6,
            f0_hz: 30.0e9,
            p_tot_dbm: 43.0,
            per_resource_power_w: None,
            sensing_noise_w: 1.0e-12,
            // Low enough that the default scenario meets the SE threshold
            // with headroom; studies sweep sensing SNR, never this value.
            comm_noise_w: 1.0e-15,
            mu: 0.25,
            se_threshold: 4.0,
            eps_tau: 0.5,
            eps_nu: 0.5,
            block_size: 10,
            schatten_p: 0.5,
            doppler_norm: DopplerNorm::Burst,
            group_f: 50,
            group_t: 50,
            range_m: 50.0,
            reflectivity: 1.0,
            solver: SolverKind::Greedy,
            seed: 42,
        }
    }

    /// Down-scaled profile for fast runs: 100x100 grid at the same spacing
    /// (B = 100 MHz), 5x5 coarse groups (400 coarse cells).
    pub fn desk_scale() -> Self {
        Self {
            subcarriers: 100,
            symbols: 100,
            group_f: 5,
            group_t: 5,
            comm_noise_w: 1.0e-13,
            ..Self::paper_scale()
        }
    }

    pub fn grid(&self) -> Result<ResourceGrid, ConfigError> {
        ResourceGrid::new(self.subcarriers, self.symbols, self.delta_f_hz, self.cp_duration_s)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Total power in W.
    pub fn p_tot_w(&self) -> f64 {
        10f64.powf((self.p_tot_dbm - 30.0) / 10.0)
    }

    /// Effective per-resource power sigma^2 in W: the explicit value if set,
    /// else P_tot spread uniformly over the mu*M*N allocatable resources.
    pub fn per_resource_power(&self) -> f64 {
        self.per_resource_power_w.unwrap_or_else(|| {
            self.p_tot_w() / (self.mu * (self.subcarriers * self.symbols) as f64)
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.subcarriers < 1 || self.symbols < 1 {
            return fail(format!("grid must be at least 1x1, got {}x{}", self.subcarriers, self.symbols));
        }
        if !(self.delta_f_hz > 0.0) {
            return fail(format!("delta_f_hz must be positive, got {}", self.delta_f_hz));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return fail(format!("mu must lie in (0, 1], got {}", self.mu));
        }
        if !(self.schatten_p > 0.0 && self.schatten_p <= 1.0) {
            return fail(format!("schatten_p must lie in (0, 1], got {}", self.schatten_p));
        }
        if !(self.eps_tau >= 0.0 && self.eps_tau <= 1.0)
            || !(self.eps_nu >= 0.0 && self.eps_nu <= 1.0)
        {
            return fail(format!("weights must lie in [0, 1], got ({}, {})", self.eps_tau, self.eps_nu));
        }
        if self.eps_tau + self.eps_nu <= 0.0 {
            return fail("at least one CRB weight must be positive".into());
        }
        if let Some(s) = self.per_resource_power_w {
            if !(s > 0.0) {
                return fail(format!("per_resource_power_w must be positive, got {s}"));
            }
        }
        if !(self.sensing_noise_w >= 0.0) || !(self.comm_noise_w > 0.0) {
            return fail("noise powers must be nonnegative (comm noise strictly positive)".into());
        }
        if self.block_size < 1 {
            return fail("block_size must be at least 1".into());
        }
        if self.group_f == 0 || self.subcarriers % self.group_f != 0 {
            return fail(format!("group_f = {} must divide M = {}", self.group_f, self.subcarriers));
        }
        if self.group_t == 0 || self.symbols % self.group_t != 0 {
            return fail(format!("group_t = {} must divide N = {}", self.group_t, self.symbols));
        }
        if !(self.se_threshold >= 0.0) {
            return fail(format!("se_threshold must be nonnegative, got {}", self.se_threshold));
        }
        if !(self.range_m > 0.0) || !(self.f0_hz > 0.0) || !(self.reflectivity > 0.0) {
            return fail("f0_hz, range_m and reflectivity must be positive".into());
        }
        Ok(())
    }

    /// Applies `key = value` overrides from a flat config document.
    /// Lines starting with `#` and blank lines are skipped; any key not
    /// matching a field name is rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::MalformedLine { lineno: lineno + 1, line: raw.to_string() }
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Parses a full config document on top of the given base profile.
    pub fn from_text(base: ExperimentConfig, text: &str) -> Result<Self, ConfigError> {
        let mut cfg = base;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "subcarriers" => self.subcarriers = num(key, value)?,
            "symbols" => self.symbols = num(key, value)?,
            "delta_f_hz" => self.delta_f_hz = num(key, value)?,
            "cp_duration_s" => self.cp_duration_s = num(key, value)?,
            "f0_hz" => self.f0_hz = num(key, value)?,
            "p_tot_dbm" => self.p_tot_dbm = num(key, value)?,
            "per_resource_power_w" => self.per_resource_power_w = Some(num(key, value)?),
            "sensing_noise_w" => self.sensing_noise_w = num(key, value)?,
            "comm_noise_w" => self.comm_noise_w = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "se_threshold" => self.se_threshold = num(key, value)?,
            "eps_tau" => self.eps_tau = num(key, value)?,
            "eps_nu" => self.eps_nu = num(key, value)?,
            "block_size" => self.block_size = num(key, value)?,
            "schatten_p" => self.schatten_p = num(key, value)?,
            "doppler_norm" => {
                self.doppler_norm = match value {
                    "burst" => DopplerNorm::Burst,
                    "symbol" => DopplerNorm::Symbol,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: other.to_string(),
                            reason: "expected burst or symbol".into(),
                        })
                    }
                }
            }
            "group_f" => self.group_f = num(key, value)?,
            "group_t" => self.group_t = num(key, value)?,
            "range_m" => self.range_m = num(key, value)?,
            "reflectivity" => self.reflectivity = num(key, value)?,
            "solver" => {
                self.solver = match value {
                    "bnb" => SolverKind::Bnb,
                    "greedy" => SolverKind::Greedy,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: other.to_string(),
                            reason: "expected bnb or greedy".into(),
                        })
                    }
                }
            }
            "seed" => self.seed = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Renders the config back into the flat text format, one key per line
    /// in a fixed order (used verbatim in run manifests for exact replay).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("subcarriers", self.subcarriers.to_string());
        kv("symbols", self.symbols.to_string());
        kv("delta_f_hz", self.delta_f_hz.to_string());
        kv("cp_duration_s", self.cp_duration_s.to_string());
        kv("f0_hz", self.f0_hz.to_string());
        kv("p_tot_dbm", self.p_tot_dbm.to_string());
        if let Some(s) = self.per_resource_power_w {
            kv("per_resource_power_w", s.to_string());
        }
        kv("sensing_noise_w", self.sensing_noise_w.to_string());
        kv("comm_noise_w", self.comm_noise_w.to_string());
        kv("mu", self.mu.to_string());
        kv("se_threshold", self.se_threshold.to_string());
        kv("eps_tau", self.eps_tau.to_string());
        kv("eps_nu", self.eps_nu.to_string());
        kv("block_size", self.block_size.to_string());
        kv("schatten_p", self.schatten_p.to_string());
        kv(
            "doppler_norm",
            match self.doppler_norm {
                DopplerNorm::Burst => "burst".to_string(),
                DopplerNorm::Symbol => "symbol".to_string(),
            },
        );
        kv("group_f", self.group_f.to_string());
        kv("group_t", self.group_t.to_string());
        kv("range_m", self.range_m.to_string());
        kv("reflectivity", self.reflectivity.to_string());
        kv("solver", self.solver.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_full_scale_parameter_table() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.f0_hz, 30.0e9);
        assert_eq!(cfg.subcarriers, 1000);
        assert_eq!(cfg.symbols, 1000);
        assert_eq!(cfg.delta_f_hz, 1.0e6);
        assert_eq!(cfg.p_tot_dbm, 43.0);
        assert_eq!(cfg.mu, 0.25);
        assert_eq!(cfg.range_m, 50.0);
        assert_eq!(cfg.block_size, 10);
        assert_eq!(cfg.se_threshold, 4.0);
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.bandwidth(), 1.0e9);
        assert_eq!(grid.symbol_duration(), 1.0e-6);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn per_resource_power_spreads_p_tot_over_allocatable_cells() {
        let cfg = ExperimentConfig::paper_scale();
        // 43 dBm = 19.9526... W over 0.25 * 10^6 resources
        let expect = 10f64.powf(1.3) / 250_000.0;
        assert!((cfg.per_resource_power() - expect).abs() < 1e-12);
        let mut cfg = cfg;
        cfg.per_resource_power_w = Some(1.0);
        assert_eq!(cfg.per_resource_power(), 1.0);
    }

    #[test]
    fn text_overlay_roundtrip() {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.apply_text("mu = 0.5\nseed = 7\ndoppler_norm = symbol\n# comment\n\n").unwrap();
        assert_eq!(cfg.mu, 0.5);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.doppler_norm, DopplerNorm::Symbol);

        let text = cfg.to_text();
        let reparsed = ExperimentConfig::from_text(ExperimentConfig::paper_scale(), &text).unwrap();
        assertions_on_roundtrip(&cfg, &reparsed);
    }

    fn assertions_on_roundtrip(a: &ExperimentConfig, b: &ExperimentConfig) {
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let mut cfg = ExperimentConfig::desk_scale();
        let err = cfg.apply_text("subcariers = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "subcariers"));
    }

    #[test]
    fn malformed_lines_and_bad_values_are_rejected() {
        let mut cfg = ExperimentConfig::desk_scale();
        assert!(matches!(
            cfg.apply_text("just words\n"),
            Err(ConfigError::MalformedLine { lineno: 1, .. })
        ));
        assert!(matches!(
            cfg.apply_text("mu = fast\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            cfg.apply_text("solver = simplex\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn validation_rejects_out_of_range_parameters() {
        let mut cfg = ExperimentConfig::desk_scale();
        cfg.mu = 0.0;
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::desk_scale();
        cfg.schatten_p = 1.5;
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::desk_scale();
        cfg.eps_tau = 0.0;
        cfg.eps_nu = 0.0;
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::desk_scale();
        cfg.group_f = 7; // does not divide 100
        assert!(cfg.validate().is_err());
    }
}
