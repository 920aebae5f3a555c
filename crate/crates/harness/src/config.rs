//! Experiment configuration: defaults, `key = value` / JSON files and overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cligme::linop::{uniform_stencil, Boundary};

use crate::error::{HarnessError, Result};

/// Regularization weight giving the best TV results without constraints.
pub const DEFAULT_MU_TV: f64 = 0.013;
/// Regularization weight giving the best cLiGME results without constraints.
pub const DEFAULT_MU_CLIGME: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    /// Anisotropic total variation (`B = O`).
    Tv,
    /// Enhanced total variation with the designed `B_theta`.
    Cligme,
}

impl Model {
    pub const ALL: [Model; 2] = [Model::Tv, Model::Cligme];

    pub fn default_mu(self) -> f64 {
        match self {
            Model::Tv => DEFAULT_MU_TV,
            Model::Cligme => DEFAULT_MU_CLIGME,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Tv => "tv",
            Model::Cligme => "cligme",
        })
    }
}

impl FromStr for Model {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tv" => Ok(Model::Tv),
            "cligme" => Ok(Model::Cligme),
            other => Err(HarnessError::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Which of the two prior sets are imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintCase {
    /// No constraint.
    Club,
    /// Pixel range box only.
    Diamond,
    /// Constant background only.
    Heart,
    /// Box and constant background.
    Spade,
}

impl ConstraintCase {
    pub const ALL: [ConstraintCase; 4] = [
        ConstraintCase::Club,
        ConstraintCase::Diamond,
        ConstraintCase::Heart,
        ConstraintCase::Spade,
    ];

    pub fn uses_box(self) -> bool {
        matches!(self, ConstraintCase::Diamond | ConstraintCase::Spade)
    }

    pub fn uses_background(self) -> bool {
        matches!(self, ConstraintCase::Heart | ConstraintCase::Spade)
    }
}

impl fmt::Display for ConstraintCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintCase::Club => "club",
            ConstraintCase::Diamond => "diamond",
            ConstraintCase::Heart => "heart",
            ConstraintCase::Spade => "spade",
        })
    }
}

impl FromStr for ConstraintCase {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "club" | "♣" => Ok(ConstraintCase::Club),
            "diamond" | "♦" => Ok(ConstraintCase::Diamond),
            "heart" | "♥" => Ok(ConstraintCase::Heart),
            "spade" | "♠" => Ok(ConstraintCase::Spade),
            other => Err(HarnessError::Config(format!("unknown constraint case `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurSpec {
    /// Row-major stencil with odd sides, nonnegative entries summing to one.
    pub kernel: Vec<Vec<f64>>,
    pub boundary: Boundary,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            kernel: uniform_stencil(3),
            boundary: Boundary::Reflect,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Image side `N`.
    pub side: usize,
    pub snr_db: f64,
    /// `None` selects the model default.
    pub mu: Option<f64>,
    /// Per-block `theta_i` for the horizontal and vertical difference blocks.
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub kappa: f64,
    pub case: ConstraintCase,
    pub model: Model,
    pub trials: usize,
    pub iterations: usize,
    pub stop_tol: f64,
    pub rng_seed: u64,
    pub blur: BlurSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            side: 16,
            snr_db: 20.0,
            mu: None,
            theta: vec![0.99, 0.99],
            omega: vec![0.5, 0.5],
            kappa: 1.001,
            case: ConstraintCase::Club,
            model: Model::Cligme,
            trials: 100,
            iterations: 5000,
            stop_tol: 1e-10,
            rng_seed: 0,
            blur: BlurSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "n",
    "snr_db",
    "mu",
    "theta",
    "omega",
    "kappa",
    "case",
    "model",
    "trials",
    "iterations",
    "stop_tol",
    "rng_seed",
    "blur_kernel",
    "blur_boundary",
    "output_dir",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// Accepts `[a, b]`, `a, b` or a single number.
fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let inner = v.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(v);
    inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_kernel(value: &str) -> Result<Vec<Vec<f64>>> {
    let v = value.trim();
    if let Some(k) = v.strip_prefix("uniform") {
        let k: usize = parse_num("blur_kernel", k)?;
        return Ok(uniform_stencil(k));
    }
    if v == "identity" {
        return Ok(vec![vec![1.0]]);
    }
    serde_json::from_str(v).map_err(|e| {
        HarnessError::Config(format!(
            "`blur_kernel`: expected `uniformK`, `identity` or a nested JSON array ({e})"
        ))
    })
}

fn format_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

impl ExperimentConfig {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or_else(|| self.model.default_mu())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "n" | "side" => self.side = parse_num(key, value)?,
            "snr_db" => self.snr_db = parse_num(key, value)?,
            "mu" => {
                self.mu = match value.trim() {
                    "" | "default" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "theta" => self.theta = parse_list(key, value)?,
            "omega" => self.omega = parse_list(key, value)?,
            "kappa" => self.kappa = parse_num(key, value)?,
            "case" => self.case = value.parse()?,
            "model" => self.model = value.parse()?,
            "trials" => self.trials = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "stop_tol" => self.stop_tol = parse_num(key, value)?,
            "rng_seed" | "seed" => self.rng_seed = parse_num(key, value)?,
            "blur_kernel" => self.blur.kernel = parse_kernel(value)?,
            "blur_boundary" => {
                self.blur.boundary = value
                    .parse()
                    .map_err(|e: cligme::Error| HarnessError::Config(e.to_string()))?
            }
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let value = value.trim().trim_matches('"');
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies the members of a flat JSON object.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| HarnessError::Config("JSON config must be an object".into()))?;
        for (key, v) in obj {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            };
            self.set(key, &text)?;
        }
        Ok(())
    }

    /// Reads a config file; `.json` files (or content starting with `{`) are JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        let is_json = path.extension().is_some_and(|e| e == "json")
            || text.trim_start().starts_with('{');
        if is_json {
            cfg.apply_json(&text)?;
        } else {
            cfg.apply_key_values(&text)?;
        }
        Ok(cfg)
    }

    /// Renders the config as `key = value` lines accepted by
    /// [`apply_key_values`](Self::apply_key_values).
    pub fn to_key_values(&self) -> String {
        let kernel = serde_json::to_string(&self.blur.kernel).expect("finite stencil");
        let mu = self.mu.map_or_else(|| "default".to_string(), |m| m.to_string());
        [
            format!("n = {}", self.side),
            format!("snr_db = {}", self.snr_db),
            format!("mu = {mu}"),
            format!("theta = {}", format_list(&self.theta)),
            format!("omega = {}", format_list(&self.omega)),
            format!("kappa = {}", self.kappa),
            format!("case = {}", self.case),
            format!("model = {}", self.model),
            format!("trials = {}", self.trials),
            format!("iterations = {}", self.iterations),
            format!("stop_tol = {}", self.stop_tol),
            format!("rng_seed = {}", self.rng_seed),
            format!("blur_kernel = {kernel}"),
            format!("blur_boundary = {}", self.blur.boundary),
            format!("output_dir = {}", self.output_dir.display()),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.side < 8 {
            return bad(format!("n must be at least 8, got {}", self.side));
        }
        if !self.snr_db.is_finite() {
            return bad(format!("snr_db must be finite, got {}", self.snr_db));
        }
        if !(self.mu() > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu()));
        }
        if self.theta.len() != 2 || self.omega.len() != 2 {
            return bad("theta and omega need one entry per difference block (2)".into());
        }
        if self.theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad(format!("theta entries must lie in [0, 1], got {:?}", self.theta));
        }
        if self.omega.iter().any(|w| !(*w > 0.0)) {
            return bad(format!("omega entries must be positive, got {:?}", self.omega));
        }
        let total: f64 = self.omega.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("omega must sum to 1, sums to {total}"));
        }
        if !(self.kappa > 1.0) {
            return bad(format!("kappa must exceed 1, got {}", self.kappa));
        }
        if self.trials == 0 || self.iterations == 0 {
            return bad("trials and iterations must be positive".into());
        }
        if !(self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.side, 16);
        assert_eq!(cfg.kappa, 1.001);
        assert_eq!(cfg.mu(), DEFAULT_MU_CLIGME);
        let tv = ExperimentConfig {
            model: Model::Tv,
            ..cfg
        };
        assert_eq!(tv.mu(), DEFAULT_MU_TV);
    }

    #[test]
    fn key_value_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("model", "tv").unwrap();
        cfg.set("case", "spade").unwrap();
        cfg.set("mu", "0.02").unwrap();
        cfg.set("theta", "0.5, 0.75").unwrap();
        cfg.set("blur_kernel", "[[0.25, 0.5, 0.25]]").unwrap();
        cfg.set("blur_boundary", "zero").unwrap();
        cfg.set("rng_seed", "42").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_is_addressable() {
        let mut cfg = ExperimentConfig::default();
        for line in cfg.clone().to_key_values().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(KEYS.contains(&k.trim()), "{k}");
            cfg.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn json_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_json(
            r#"{"n": 12, "model": "tv", "case": "diamond", "theta": [0.1, 0.2],
                "blur_kernel": "uniform5", "trials": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.side, 12);
        assert_eq!(cfg.model, Model::Tv);
        assert_eq!(cfg.case, ConstraintCase::Diamond);
        assert_eq!(cfg.theta, vec![0.1, 0.2]);
        assert_eq!(cfg.blur.kernel.len(), 5);
        assert_eq!(cfg.trials, 3);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("trials", "many").is_err());
        assert!(cfg.apply_key_values("n 16").is_err());
        cfg.omega = vec![0.5, 0.6];
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            side: 7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            kappa: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
