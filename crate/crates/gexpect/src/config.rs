//! Run configuration: a flat sectioned key-value text format.
//!
//! ```text
//! # comment
//! [band]
//! sigma_lo = 0.5
//! sigma_hi = 1.0
//! ```
//!
//! Sections and keys are validated against a fixed schema; unknown names and
//! duplicate keys are rejected at load. Every command falls back to
//! documented defaults for keys it needs but the file does not set.

use std::collections::BTreeMap;

use crate::band::{MeanBand, VolBand};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::{Payoff, PayoffTable};

/// Known sections and their keys.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("band", &["sigma_lo", "sigma_hi"]),
    ("mean", &["mu_lo", "mu_hi"]),
    (
        "grid",
        &[
            "x_min",
            "x_max",
            "nx",
            "t",
            "nt",
            "cfl_safety",
            "store_every",
            "boundary_policy",
        ],
    ),
    ("payoff", &["kind", "strike", "exponent", "cap", "file"]),
    ("market", &["spot", "t", "nx"]),
    ("clt", &["p_lo", "p_hi", "p_count", "n_list"]),
    ("simulate", &["n_paths", "n_steps", "theta", "t"]),
    (
        "sde",
        &["x0", "t", "n_paths", "n_steps", "theta", "tol", "max_iter", "init"],
    ),
    ("bsde", &["n_steps", "sigmas", "lambda"]),
    ("represent", &["space_file", "directions", "fresh"]),
    ("check", &["space_file", "samples"]),
];

/// Parsed configuration: section -> key -> raw value.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    /// Parse and validate against the schema.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{name}]",
                        lineno + 1
                    )));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value' or '[section]'",
                    lineno + 1
                )));
            };
            let Some(section) = &current else {
                return Err(Error::Config(format!(
                    "line {}: key outside of any section",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let known = SCHEMA
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, keys)| keys.contains(&key))
                .unwrap_or(false);
            if !known {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{key}' in section [{section}]",
                    lineno + 1
                )));
            }
            let entry = sections.get_mut(section).expect("section exists");
            if entry.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}' in section [{section}]",
                    lineno + 1
                )));
            }
        }
        Ok(Self { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("[{section}] {key}: '{v}' is not a number"))
            }),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("[{section}] {key}: '{v}' is not an integer"))
            }),
        }
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.raw(section, key).unwrap_or(default)
    }

    pub fn str_opt(&self, section: &str, key: &str) -> Option<&str> {
        self.raw(section, key)
    }

    pub fn usize_list_or(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: '{s}' is not an integer"))
                    })
                })
                .collect(),
        }
    }

    pub fn f64_list_or(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: '{s}' is not a number"))
                    })
                })
                .collect(),
        }
    }

    /// Volatility band (defaults [0.5, 1.0]).
    pub fn band(&self) -> Result<VolBand> {
        VolBand::new(
            self.f64_or("band", "sigma_lo", 0.5)?,
            self.f64_or("band", "sigma_hi", 1.0)?,
        )
    }

    /// Mean band for the drift equation (defaults to the variance band of
    /// [`RunConfig::band`]).
    pub fn mean_band(&self) -> Result<MeanBand> {
        let band = self.band()?;
        let (vlo, vhi) = band.variance_band();
        MeanBand::new(
            self.f64_or("mean", "mu_lo", vlo)?,
            self.f64_or("mean", "mu_hi", vhi)?,
        )
    }

    /// Grid (defaults: [-8, 8], nx 801, t 1, automatic nt).
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.f64_or("grid", "x_min", -8.0)?,
            self.f64_or("grid", "x_max", 8.0)?,
            self.usize_or("grid", "nx", 801)?,
            self.f64_or("grid", "t", 1.0)?,
            self.usize_or("grid", "nt", 0)?,
        )
    }

    pub fn cfl_safety(&self) -> Result<f64> {
        let v = self.f64_or("grid", "cfl_safety", crate::grid::CFL_SAFETY)?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Config(format!(
                "[grid] cfl_safety must be in (0, 1], got {v}"
            )));
        }
        Ok(v)
    }

    pub fn store_every(&self) -> Result<usize> {
        self.usize_or("grid", "store_every", 0)
    }

    /// The only implemented truncation policy; anything else is rejected.
    pub fn boundary_policy(&self) -> Result<&str> {
        let v = self.str_or("grid", "boundary_policy", "linear-extension");
        if v != "linear-extension" {
            return Err(Error::Config(format!(
                "[grid] boundary_policy '{v}' is not supported (linear-extension)"
            )));
        }
        Ok(v)
    }

    /// Payoff from the `[payoff]` section (default: call at strike 1).
    pub fn payoff(&self) -> Result<Payoff> {
        match self.str_or("payoff", "kind", "call") {
            "call" => Ok(Payoff::call(self.f64_or("payoff", "strike", 1.0)?)),
            "put" => Ok(Payoff::put(self.f64_or("payoff", "strike", 1.0)?)),
            "power" => {
                let p = self.usize_or("payoff", "exponent", 2)?;
                if p > 6 {
                    return Err(Error::Config("power payoff exponent capped at 6".into()));
                }
                Ok(Payoff::power(p as u32))
            }
            "abs-cap" => Ok(Payoff::abs_cap(self.f64_or("payoff", "cap", 1.0)?)),
            "table" => {
                let Some(path) = self.str_opt("payoff", "file") else {
                    return Err(Error::Config("[payoff] kind = table needs file = PATH".into()));
                };
                let text = std::fs::read_to_string(path)?;
                Ok(Payoff::from_table(PayoffTable::parse(&text)?))
            }
            other => Err(Error::Config(format!(
                "[payoff] unknown kind '{other}' (call|put|power|abs-cap|table)"
            ))),
        }
    }
}
