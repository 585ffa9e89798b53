//! Experiment configuration: `key = value` files merged with command-line
//! overrides (overrides win), parsed and validated up front.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::network::{CLaw, InitLaw, MIN_MC_SAMPLES};

/// Recognised keys, in echo order.
pub const KEYS: &[&str] = &[
    "dataset",
    "activation",
    "c_law",
    "alpha",
    "T",
    "N",
    "Ns",
    "replicas",
    "n_mc",
    "seed",
    "out",
    "workers",
    "grid_points",
    "dt",
    "n_nodes",
    "pd_threshold",
    "seeds",
    "x_index",
    "martingale_Ns",
    "martingale_replicas",
    "check",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub activation: Activation,
    pub c_law: CLaw,
    pub alpha: f64,
    pub horizon: f64,
    pub n: usize,
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores. Never affects results.
    pub workers: usize,
    pub grid_points: usize,
    pub dt: f64,
    pub n_nodes: usize,
    pub pd_threshold: f64,
    pub seeds: usize,
    pub x_index: usize,
    pub martingale_ns: Vec<usize>,
    pub martingale_replicas: usize,
    /// Turn failed checks into exit status 1.
    pub check: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            activation: Activation::Tanh,
            c_law: CLaw::PointMass,
            alpha: 1.0,
            horizon: 1.0,
            n: 1000,
            ns: vec![250, 1000, 4000],
            replicas: 20,
            n_mc: 1_000_000,
            seed: 0,
            out: PathBuf::from("out"),
            workers: 0,
            grid_points: 41,
            dt: 1e-3,
            n_nodes: 128,
            pd_threshold: 1e-8,
            seeds: 400,
            x_index: 0,
            martingale_ns: Vec::new(),
            martingale_replicas: 50,
            check: false,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_file_text(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            row: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(parse_err(format!("unknown key `{k}`")));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err(format!("duplicate key `{k}`")));
        }
    }
    Ok(map)
}

pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_file_text(&text, path)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s)).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl ExperimentConfig {
    /// Merges `file` and `overrides` (overrides win) over the defaults and
    /// validates the result.
    pub fn resolve(file: &BTreeMap<String, String>, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut merged = file.clone();
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        let mut c = ExperimentConfig::default();
        for (k, v) in &merged {
            match k.as_str() {
                "dataset" => c.dataset = Some(PathBuf::from(v)),
                "activation" => c.activation = v.parse()?,
                "c_law" => c.c_law = v.parse()?,
                "alpha" => c.alpha = num(k, v)?,
                "T" => c.horizon = num(k, v)?,
                "N" => c.n = num(k, v)?,
                "Ns" => c.ns = list(k, v)?,
                "replicas" => c.replicas = num(k, v)?,
                "n_mc" => c.n_mc = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "workers" => c.workers = num(k, v)?,
                "grid_points" => c.grid_points = num(k, v)?,
                "dt" => c.dt = num(k, v)?,
                "n_nodes" => c.n_nodes = num(k, v)?,
                "pd_threshold" => c.pd_threshold = num(k, v)?,
                "seeds" => c.seeds = num(k, v)?,
                "x_index" => c.x_index = num(k, v)?,
                "martingale_Ns" => c.martingale_ns = list(k, v)?,
                "martingale_replicas" => c.martingale_replicas = num(k, v)?,
                "check" => c.check = boolean(k, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("T must be finite and > 0, got {}", self.horizon));
        }
        if self.n == 0 {
            return bad("N must be positive".into());
        }
        for (key, ns) in [("Ns", &self.ns), ("martingale_Ns", &self.martingale_ns)] {
            if ns.contains(&0) || ns.windows(2).any(|w| w[1] <= w[0]) {
                return bad(format!("{key} must be positive and strictly increasing"));
            }
        }
        if self.replicas == 0 || self.martingale_replicas < 2 {
            return bad("replica counts must be positive (martingale needs 2)".into());
        }
        if self.n_mc < MIN_MC_SAMPLES {
            return bad(format!("n_mc must be at least {MIN_MC_SAMPLES}, got {}", self.n_mc));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.pd_threshold) {
            return bad(format!("pd_threshold must lie in [0, 1), got {}", self.pd_threshold));
        }
        if self.seeds == 0 {
            return bad("seeds must be positive".into());
        }
        if let Some(p) = &self.dataset {
            if !p.is_file() {
                return bad(format!("dataset file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn law(&self) -> InitLaw {
        InitLaw::new(self.c_law)
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("a dataset is required (--dataset PATH)".into()))
    }

    /// The resolved configuration as embedded in output JSON. Worker count and
    /// output directory are left out since they never change results.
    pub fn echo(&self) -> BTreeMap<&'static str, Value> {
        let mut m = BTreeMap::new();
        m.insert(
            "dataset",
            self.dataset
                .as_ref()
                .map_or(Value::Null, |p| json!(p.display().to_string())),
        );
        m.insert("activation", json!(self.activation.name()));
        m.insert("c_law", json!(self.c_law.to_string()));
        m.insert("alpha", json!(self.alpha));
        m.insert("T", json!(self.horizon));
        m.insert("N", json!(self.n));
        m.insert("Ns", json!(self.ns));
        m.insert("replicas", json!(self.replicas));
        m.insert("n_mc", json!(self.n_mc));
        m.insert("seed", json!(self.seed));
        m.insert("grid_points", json!(self.grid_points));
        m.insert("dt", json!(self.dt));
        m.insert("n_nodes", json!(self.n_nodes));
        m.insert("pd_threshold", json!(self.pd_threshold));
        m.insert("seeds", json!(self.seeds));
        m.insert("x_index", json!(self.x_index));
        m.insert("martingale_Ns", json!(self.martingale_ns));
        m.insert("martingale_replicas", json!(self.martingale_replicas));
        m.insert("check", json!(self.check));
        m
    }
}
