//! Experiment configuration: TOML file, dotted-key overrides, validation.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use roughavg::averaging::{ExperimentSetup, FbarParams, FbarStrategy};
use roughavg::coefficients::{CoefficientSet, Dims, Preset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A configuration value that failed validation, named by its dotted key.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

fn invalid(field: &str, message: impl Into<String>) -> ValidationError {
    ValidationError { field: field.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// One of `nonlinear`, `ou`, `ou-linear`, `degenerate`.
    pub preset: String,
    pub hurst: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    pub coarse_steps: usize,
    /// Fine points per coarse step for `sample`, `lift-check` and
    /// `integrate-xcheck`.
    pub fine_factor: usize,
    /// Fast substeps are at most `eps / fast_resolution`.
    pub fast_resolution: f64,
    pub eps_schedule: Vec<f64>,
    pub delta_override: Option<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// Report file read by the `report` subcommand.
    pub input: Option<PathBuf>,
    pub fbar: FbarConfig,
    pub probe: ProbeConfig,
    pub khasminskii: KhasminskiiConfig,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbarConfig {
    pub strategy: FbarStrategy,
    /// Lattice points per slow dimension.
    pub points: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Defaults to `5/β₁`.
    pub burn_in: Option<f64>,
    /// Averaging window after burn-in.
    pub window: f64,
    pub replicas: usize,
    pub dt: f64,
    /// Point estimate for the `fbar` subcommand.
    pub xi: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub xi: Vec<f64>,
    pub lags: Vec<f64>,
    pub replicas: usize,
    pub burn_in: Option<f64>,
    pub window: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KhasminskiiConfig {
    /// Run the freezing-error study as part of `converge`.
    pub enabled: bool,
    pub eps: f64,
    pub deltas: Vec<f64>,
    pub coarse_steps: usize,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative Chen and symmetry residual allowed by `lift-check`.
    pub lift: f64,
    pub xcheck_smooth: f64,
    pub xcheck_rough: f64,
    /// Largest tolerated fraction of excluded replicas.
    pub exclusion_budget: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "ou".into(),
            hurst: 0.4,
            horizon: 1.0,
            coarse_steps: 100,
            fine_factor: 32,
            fast_resolution: 8.0,
            eps_schedule: vec![0.1, 0.03, 0.01],
            delta_override: None,
            replicas: 128,
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            x0: vec![1.0],
            y0: vec![0.0],
            input: None,
            fbar: FbarConfig::default(),
            probe: ProbeConfig::default(),
            khasminskii: KhasminskiiConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl Default for FbarConfig {
    fn default() -> Self {
        Self {
            strategy: FbarStrategy::Tabulated,
            points: roughavg::averaging::DEFAULT_LATTICE_POINTS,
            lo: vec![-5.0],
            hi: vec![7.0],
            burn_in: None,
            window: 50.0,
            replicas: 32,
            dt: 1e-3,
            xi: None,
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { xi: vec![0.0], lags: vec![0.05, 0.1, 0.2], replicas: 32, burn_in: None, window: 50.0, dt: 1e-3 }
    }
}

impl Default for KhasminskiiConfig {
    fn default() -> Self {
        Self { enabled: false, eps: 0.01, deltas: vec![0.02, 0.04, 0.08], coarse_steps: 400, replicas: 256 }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { lift: 1e-10, xcheck_smooth: 1e-3, xcheck_rough: 1e-2, exclusion_budget: 0.01 }
    }
}

/// Sets `key` (dotted, e.g. `fbar.points`) to `value`, parsed as a TOML
/// value when possible and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ValidationError> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| invalid(key, "empty override key"))?;
    let mut node = table;
    for p in parts {
        node = node
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a table")))?;
    }
    node.insert(last.to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    /// Reads an optional TOML file and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                text.parse::<toml::Table>().map_err(|e| invalid("config", e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn preset(&self) -> Result<Preset, ValidationError> {
        Preset::from_str(&self.preset).map_err(|e| invalid("preset", e.to_string()))
    }

    pub fn dims(&self) -> Result<Dims, ValidationError> {
        Ok(CoefficientSet::<f64>::dims(&self.preset()?))
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let preset = self.preset()?;
        let dims = CoefficientSet::<f64>::dims(&preset);
        if !(self.hurst > 1.0 / 3.0 && self.hurst <= 0.5) {
            return Err(invalid("hurst", format!("H = {} outside the supported range (1/3, 1/2]", self.hurst)));
        }
        positive("horizon", self.horizon)?;
        nonzero("coarse_steps", self.coarse_steps)?;
        nonzero("fine_factor", self.fine_factor)?;
        if !(self.fast_resolution >= 4.0) {
            return Err(invalid("fast_resolution", "must be at least 4 (fast substep <= eps/4)"));
        }
        check_eps_schedule(&self.eps_schedule)?;
        if let Some(d) = self.delta_override {
            positive("delta_override", d)?;
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", "must be at least 2"));
        }
        length("x0", &self.x0, dims.m)?;
        length("y0", &self.y0, dims.n)?;

        let f = &self.fbar;
        if f.points < 2 {
            return Err(invalid("fbar.points", "need at least 2 lattice points"));
        }
        length("fbar.lo", &f.lo, dims.m)?;
        length("fbar.hi", &f.hi, dims.m)?;
        if f.lo.iter().zip(&f.hi).any(|(l, h)| !(l < h)) {
            return Err(invalid("fbar.hi", "must exceed fbar.lo in every coordinate"));
        }
        if let Some(b) = f.burn_in {
            nonnegative("fbar.burn_in", b)?;
        }
        positive("fbar.window", f.window)?;
        nonzero("fbar.replicas", f.replicas)?;
        positive("fbar.dt", f.dt)?;
        if let Some(xi) = &f.xi {
            length("fbar.xi", xi, dims.m)?;
        }
        if f.strategy == FbarStrategy::Exact && preset.exact_fbar(0.0).is_none() {
            return Err(invalid(
                "fbar.strategy",
                format!("no closed-form averaged drift for preset `{}`", preset.name()),
            ));
        }

        let p = &self.probe;
        length("probe.xi", &p.xi, dims.m)?;
        if p.lags.iter().any(|l| !(*l > 0.0)) {
            return Err(invalid("probe.lags", "lags must be positive"));
        }
        nonzero("probe.replicas", p.replicas)?;
        if let Some(b) = p.burn_in {
            nonnegative("probe.burn_in", b)?;
        }
        positive("probe.window", p.window)?;
        positive("probe.dt", p.dt)?;
        if p.lags.iter().any(|l| *l >= p.window) {
            return Err(invalid("probe.lags", "lags must be shorter than probe.window"));
        }

        let k = &self.khasminskii;
        if !(k.eps > 0.0 && k.eps < 1.0) {
            return Err(invalid("khasminskii.eps", "must lie in (0, 1)"));
        }
        if k.deltas.is_empty() || k.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("khasminskii.deltas", "need at least one positive delta"));
        }
        nonzero("khasminskii.coarse_steps", k.coarse_steps)?;
        let dt = self.horizon / k.coarse_steps as f64;
        if k.deltas.iter().any(|d| *d < dt * (1.0 - 1e-9)) {
            return Err(invalid("khasminskii.deltas", format!("every delta must be at least the grid step {dt}")));
        }
        if k.replicas < 2 {
            return Err(invalid("khasminskii.replicas", "must be at least 2"));
        }

        let t = &self.tolerances;
        positive("tolerances.lift", t.lift)?;
        positive("tolerances.xcheck_smooth", t.xcheck_smooth)?;
        positive("tolerances.xcheck_rough", t.xcheck_rough)?;
        if !(0.0..=1.0).contains(&t.exclusion_budget) {
            return Err(invalid("tolerances.exclusion_budget", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn setup(&self) -> ExperimentSetup {
        ExperimentSetup {
            hurst: self.hurst,
            horizon: self.horizon,
            coarse_steps: self.coarse_steps,
            fast_resolution: self.fast_resolution,
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            replicas: self.replicas,
            seed: self.seed,
        }
    }

    pub fn fbar_params(&self, beta1: f64) -> FbarParams {
        let burn_in = self.fbar.burn_in.unwrap_or(5.0 / beta1);
        FbarParams { burn_in, horizon: burn_in + self.fbar.window, replicas: self.fbar.replicas, dt: self.fbar.dt }
    }

    pub fn probe_params(&self, beta1: f64) -> FbarParams {
        let burn_in = self.probe.burn_in.unwrap_or(5.0 / beta1);
        FbarParams { burn_in, horizon: burn_in + self.probe.window, replicas: self.probe.replicas, dt: self.probe.dt }
    }
}

fn check_eps_schedule(eps: &[f64]) -> Result<(), ValidationError> {
    if eps.is_empty() {
        return Err(invalid("eps_schedule", "empty schedule"));
    }
    if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(invalid("eps_schedule", "values must lie in (0, 1)"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("eps_schedule", "must be strictly decreasing"));
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), ValidationError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be positive")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<(), ValidationError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be nonnegative")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<(), ValidationError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(field, "must be positive"))
    }
}

fn length(field: &str, v: &[f64], n: usize) -> Result<(), ValidationError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(invalid(field, format!("expected {n} entries, got {}", v.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_tables() {
        let cfg = ExperimentConfig::load(
            None,
            &[("fbar.points".into(), "17".into()), ("preset".into(), "degenerate".into())],
        )
        .unwrap();
        assert_eq!(cfg.fbar.points, 17);
        assert_eq!(cfg.preset, "degenerate");
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig { delta_override: Some(0.02), ..Default::default() };
        let back: ExperimentConfig = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(a, back);
    }
}
