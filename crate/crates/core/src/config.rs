//! Experiment configuration and the A1–A6 assumption report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub p: usize,
    pub mu_norm: f64,
    pub eta: f64,
    pub m: usize,
    pub omega_init: f64,
    pub alpha: f64,
    pub steps: u64,
    pub seed: u64,
    pub n_test: usize,
    pub epsilon: f64,
    pub c_const: f64,
}

pub const DEFAULT_N_TEST: usize = 1000;
pub const DEFAULT_EPSILON: f64 = 2e-4;
pub const DEFAULT_C: f64 = 1.0;

pub const REQUIRED_KEYS: [&str; 9] = [
    "n", "p", "mu_norm", "eta", "m", "omega_init", "alpha", "steps", "seed",
];
pub const OPTIONAL_KEYS: [&str; 3] = ["n_test", "epsilon", "c_const"];

impl RunConfig {
    /// Experimental setup of the reference experiment (step size 1e-12, 15 steps).
    pub fn reference() -> Self {
        RunConfig {
            n: 200,
            p: 40_000,
            mu_norm: 2.5 * (40_000f64 / 200.0).sqrt(),
            eta: 0.05,
            m: 1000,
            omega_init: 1e-15,
            alpha: 1e-12,
            steps: 15,
            seed: 0,
            n_test: DEFAULT_N_TEST,
            epsilon: DEFAULT_EPSILON,
            c_const: DEFAULT_C,
        }
    }

    pub fn mu_sq(&self) -> f64 {
        self.mu_norm * self.mu_norm
    }

    /// Checks every invariant; the error names the first offending key.
    /// Comparisons are negated so that NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        if self.p == 0 {
            return Err(Error::invalid("p", "must be positive"));
        }
        if !(self.mu_norm.is_finite() && self.mu_norm > 0.0) {
            return Err(Error::invalid("mu_norm", "must be positive"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta", "must be >= 0"));
        }
        if !(self.eta < 0.5) {
            return Err(Error::invalid("eta", "must be < 0.5"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "must be positive"));
        }
        if !(self.omega_init.is_finite() && self.omega_init >= 0.0) {
            return Err(Error::invalid("omega_init", "must be >= 0"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if self.n_test == 0 {
            return Err(Error::invalid("n_test", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(self.epsilon < 2.5e-4) {
            return Err(Error::invalid("epsilon", "must be < 0.00025"));
        }
        if !(self.c_const.is_finite() && self.c_const > 0.0) {
            return Err(Error::invalid("c_const", "must be positive"));
        }
        if !(self.mu_sq() < self.p as f64) {
            return Err(Error::invalid("mu_norm", "squared must be < p"));
        }
        Ok(())
    }

    /// Sets one key from its textual value without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let v = value.trim();
        match key {
            "n" => self.n = parse_count(v).ok_or_else(bad)?,
            "p" => self.p = parse_count(v).ok_or_else(bad)?,
            "m" => self.m = parse_count(v).ok_or_else(bad)?,
            "n_test" => self.n_test = parse_count(v).ok_or_else(bad)?,
            "steps" => self.steps = parse_count(v).ok_or_else(bad)? as u64,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "mu_norm" => self.mu_norm = parse_real(v).ok_or_else(bad)?,
            "eta" => self.eta = parse_real(v).ok_or_else(bad)?,
            "omega_init" => self.omega_init = parse_real(v).ok_or_else(bad)?,
            "alpha" => self.alpha = parse_real(v).ok_or_else(bad)?,
            "epsilon" => self.epsilon = parse_real(v).ok_or_else(bad)?,
            "c_const" => self.c_const = parse_real(v).ok_or_else(bad)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Renders the config as a `key = value` document that [`load_config`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n", self.n.to_string()),
            ("p", self.p.to_string()),
            ("mu_norm", fmt_real(self.mu_norm)),
            ("eta", fmt_real(self.eta)),
            ("m", self.m.to_string()),
            ("omega_init", fmt_real(self.omega_init)),
            ("alpha", fmt_real(self.alpha)),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("n_test", self.n_test.to_string()),
            ("epsilon", fmt_real(self.epsilon)),
            ("c_const", fmt_real(self.c_const)),
        ]
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

// `{:?}` on f64 prints the shortest string that parses back to the same bits.
fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| !x.is_nan())
}

fn parse_count(s: &str) -> Option<usize> {
    if let Ok(v) = s.parse::<usize>() {
        return Some(v);
    }
    // Accept integral scientific notation such as `4e4`.
    let x = s.parse::<f64>().ok()?;
    (x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53)).then_some(x as usize)
}

/// Splits a document into `(key, value)` pairs. Lines may hold a single
/// `key = value` or several whitespace-separated `key=value` tokens.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = || Error::Syntax {
            line: lineno + 1,
            text: raw.to_string(),
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let spaced = tokens.len() == 3 && tokens[1] == "=";
        if spaced {
            out.push((tokens[0].to_string(), tokens[2].to_string()));
            continue;
        }
        if tokens.iter().all(|t| t.contains('=')) {
            for t in tokens {
                let (k, v) = t.split_once('=').ok_or_else(syntax)?;
                if k.is_empty() || v.is_empty() {
                    return Err(syntax());
                }
                out.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(syntax)?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() || k.contains(char::is_whitespace) {
            return Err(syntax());
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses and validates a `key = value` configuration document.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let pairs = parse_pairs(text)?;
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for (k, v) in &pairs {
        if !REQUIRED_KEYS.contains(&k.as_str()) && !OPTIONAL_KEYS.contains(&k.as_str()) {
            return Err(Error::UnknownKey(k.clone()));
        }
        if seen.insert(k.as_str(), v.as_str()).is_some() {
            return Err(Error::DuplicateKey(k.clone()));
        }
    }
    for k in REQUIRED_KEYS {
        if !seen.contains_key(k) {
            return Err(Error::MissingKey(k.to_string()));
        }
    }
    let mut cfg = RunConfig::reference();
    cfg.n_test = DEFAULT_N_TEST;
    cfg.epsilon = DEFAULT_EPSILON;
    cfg.c_const = DEFAULT_C;
    for (k, v) in seen {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

impl AssumptionEntry {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let ratio = lhs / rhs;
        AssumptionEntry {
            name: name.to_string(),
            lhs,
            rhs,
            ratio,
            satisfied: lhs >= rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub entries: Vec<AssumptionEntry>,
    pub t_max: f64,
}

impl AssumptionReport {
    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(|e| e.satisfied)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Validity horizon of the step-decomposition bounds, `1/(sqrt(n) p alpha) - 2`.
pub fn t_max(cfg: &RunConfig) -> f64 {
    1.0 / ((cfg.n as f64).sqrt() * cfg.p as f64 * cfg.alpha) - 2.0
}

/// Evaluates A1–A6, each normalized to `lhs >= rhs`.
pub fn check_assumptions(cfg: &RunConfig) -> AssumptionReport {
    let c = cfg.c_const;
    let n = cfg.n as f64;
    let p = cfg.p as f64;
    let m = cfg.m as f64;
    let mu2 = cfg.mu_sq();
    let entries = vec![
        AssumptionEntry::new("A1", mu2, c * n.powf(0.51) * p.sqrt()),
        AssumptionEntry::new("A2", p, c * n * n * mu2),
        AssumptionEntry::new("A3", 1.0 / c, cfg.eta),
        AssumptionEntry::new("A4", 1.0 / (c * n * p), cfg.alpha),
        AssumptionEntry::new("A5", cfg.alpha * mu2, cfg.omega_init * n * m.powf(1.5) * p),
        AssumptionEntry::new("A6", m, c * n.powf(0.02)),
    ];
    AssumptionReport {
        entries,
        t_max: t_max(cfg),
    }
}
