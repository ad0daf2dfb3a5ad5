//! Experiment configuration files.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::Integrator;
use crate::model::ModelParams;

/// Equally spaced or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace {
        start: f64,
        stop: f64,
        count: usize,
        /// Include `stop` itself.
        #[serde(default)]
        endpoint: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::Values(ref v) => v.clone(),
            Grid::Linspace { start, stop, count, endpoint } => {
                let div = if endpoint { count.saturating_sub(1).max(1) } else { count.max(1) };
                (0..count).map(|i| start + (stop - start) * i as f64 / div as f64).collect()
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Grid::Values(v) => v.is_empty(),
            Grid::Linspace { count, .. } => *count == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reduced grids and horizons that finish on a workstation.
    #[default]
    Desk,
    /// Full-size grids and horizons.
    Full,
}

fn one() -> usize {
    1
}

fn twenty() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Experiment {
    /// t₀-averaged velocity against Θ, Floquet asymptotics and finite-horizon average.
    ThetaScan {
        thetas: Grid,
        #[serde(default = "one")]
        l_c: usize,
        #[serde(default = "twenty")]
        n_t0: usize,
        /// Horizon of the direct average, in periods.
        horizon: usize,
    },
    /// Switch-on-time dispersion against the ring size.
    T0DispersionScan {
        sizes: Vec<usize>,
        #[serde(default = "one")]
        l_c: usize,
        #[serde(default = "twenty")]
        n_t0: usize,
        horizon: usize,
    },
    /// Load characteristic on `ω_B = ω·q/r`.
    LoadScan {
        q: Vec<i64>,
        r: u64,
        #[serde(default = "one")]
        l_c: usize,
        #[serde(default = "twenty")]
        n_t0: usize,
        /// Optional finer denominator evaluated on the odd numerators in between.
        #[serde(default)]
        refine_r: Option<u64>,
    },
    /// Velocity trace of one propagation of the standard initial state.
    Trace {
        #[serde(default = "one")]
        l_c: usize,
        periods: usize,
        samples_per_period: usize,
    },
    /// Floquet spectra at the given Θ values, with per-state velocity traces.
    Spectrum {
        thetas: Grid,
        samples_per_period: usize,
    },
    /// Quasienergy curves, avoided crossings and velocity resonances against Θ.
    CrossingScan {
        thetas: Grid,
        #[serde(default = "one")]
        l_c: usize,
        #[serde(default = "twenty")]
        n_t0: usize,
        threshold_fraction: f64,
        /// Points of the local rescan around each velocity resonance; 0 disables it.
        #[serde(default)]
        refine_points: usize,
    },
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelParams<f64>,
    pub experiment: Experiment,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "yes")]
    pub svg: bool,
    #[serde(default)]
    pub scale: Scale,
}

/// A configuration problem, pointing at the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.field, self.message),
            None => write!(f, "`{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parses and validates configuration text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            field: "<document>".into(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        config.validate().map_err(|mut e| {
            e.line = locate(text, &e.field);
            e
        })?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |field: &str, message: String| Err(ConfigError { field: field.into(), line: None, message });
        if let Err(e) = self.model.validate() {
            return fail("model", e.to_string());
        }
        if let Err(e) = self.integrator.validate() {
            return fail("integrator", e.to_string());
        }
        if self.workers == Some(0) {
            return fail("workers", "must be at least 1".into());
        }
        let check_grid = |field: &str, g: &Grid| -> Result<(), ConfigError> {
            if g.is_empty() {
                return fail(field, "grid is empty".into());
            }
            if g.values().iter().any(|v| !v.is_finite()) {
                return fail(field, "grid values must be finite".into());
            }
            Ok(())
        };
        let check_site = |l_c: usize, l: usize| -> Result<(), ConfigError> {
            if l_c == 0 || l_c > l {
                return fail("l_c", format!("carrier site must lie in 1..={l}, got {l_c}"));
            }
            Ok(())
        };
        let check_n_t0 = |n: usize| -> Result<(), ConfigError> {
            if n == 0 {
                return fail("n_t0", "need at least one switch-on time".into());
            }
            Ok(())
        };
        match &self.experiment {
            Experiment::ThetaScan { thetas, l_c, n_t0, .. } => {
                check_grid("thetas", thetas)?;
                check_site(*l_c, self.model.l)?;
                check_n_t0(*n_t0)?;
            }
            Experiment::T0DispersionScan { sizes, l_c, n_t0, .. } => {
                if sizes.is_empty() {
                    return fail("sizes", "grid is empty".into());
                }
                if let Some(&l) = sizes.iter().find(|&&l| l < 2) {
                    return fail("sizes", format!("ring needs at least 2 sites, got {l}"));
                }
                check_site(*l_c, *sizes.iter().min().unwrap())?;
                check_n_t0(*n_t0)?;
            }
            Experiment::LoadScan { q, r, l_c, n_t0, refine_r } => {
                if q.is_empty() {
                    return fail("q", "grid is empty".into());
                }
                if *r == 0 || *refine_r == Some(0) {
                    return fail("r", "denominator must be positive".into());
                }
                check_site(*l_c, self.model.l)?;
                check_n_t0(*n_t0)?;
            }
            Experiment::Trace { l_c, periods, samples_per_period } => {
                check_site(*l_c, self.model.l)?;
                if *periods == 0 || *samples_per_period == 0 {
                    return fail("periods", "trace needs a positive length and sampling".into());
                }
            }
            Experiment::Spectrum { thetas, samples_per_period } => {
                check_grid("thetas", thetas)?;
                if *samples_per_period < 32 || samples_per_period % 2 != 0 {
                    return fail("samples_per_period", "need an even count >= 32".into());
                }
            }
            Experiment::CrossingScan { thetas, l_c, n_t0, threshold_fraction, refine_points } => {
                check_grid("thetas", thetas)?;
                if thetas.values().len() < 3 {
                    return fail("thetas", "need at least 3 points".into());
                }
                check_site(*l_c, self.model.l)?;
                check_n_t0(*n_t0)?;
                if !(*threshold_fraction > 0.0 && threshold_fraction.is_finite()) {
                    return fail("threshold_fraction", "must be positive".into());
                }
                if *refine_points != 0 && *refine_points < 3 {
                    return fail("refine_points", "need 0 or at least 3 points".into());
                }
            }
        }
        Ok(())
    }
}

/// First line mentioning `"field"`, 1-based.
fn locate(text: &str, field: &str) -> Option<usize> {
    let key = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&key)).map(|i| i + 1)
}
