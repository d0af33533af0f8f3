//! `key = value` configuration with defaults, environment overrides and a
//! canonical digest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use emofuse::agents::{DegradationPolicy, SupervisorConfig, SyntheticProfile};
use emofuse::aggregate::{PoolingMode, PoolingModes};
use emofuse::classify::{ClassWeight, ClassifierKind, CvOptions, FoldScaling, LogRegConfig, MlpConfig};
use emofuse::domain::SentimentClass;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "EMOFUSE_";

/// Every accepted key with its default. Empty means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("archive", ""),
    ("labels", ""),
    ("target_archive", ""),
    ("adapter", ""),
    ("model", ""),
    ("predictions", ""),
    ("pooling.fed", "mean"),
    ("pooling.ser", "mean"),
    ("pooling.ted", "mean"),
    ("adapter.alpha", "1.0"),
    ("adapter.val_fraction", "0.2"),
    ("adapter.search", "false"),
    ("classifier", "logreg"),
    ("logreg.max_iter", "5000"),
    ("logreg.tol", "1e-4"),
    ("logreg.class_weight", "balanced"),
    ("cv.k", "5"),
    ("cv.grid", "0.01,0.1,0.5,1,5,10,50"),
    ("cv.strict", "false"),
    ("mlp.layers", "6"),
    ("mlp.width_factor", "1.0"),
    ("mlp.dropout", "0.1"),
    ("mlp.lr", "0.000186"),
    ("mlp.weight_decay", "0.1"),
    ("mlp.epochs", "80"),
    ("mlp.batch_size", "32"),
    ("mlp.grad_clip", "0.3"),
    ("mlp.val_fraction", "0.1"),
    ("test_fraction", "0.2"),
    ("supervisor.timeout_ms", "5000"),
    ("supervisor.retries", "1"),
    ("supervisor.policy", "zero_fill"),
    ("synthetic.segments", "100"),
    ("synthetic.class_balance", "1,1,1,1,1"),
    ("synthetic.frames_min", "4"),
    ("synthetic.frames_max", "12"),
    ("synthetic.class_shift", "3.0"),
    ("synthetic.noise", "1.0"),
    ("synthetic.ser_dim", "256"),
    ("synthetic.speech_absent_fraction", "0.0"),
];

/// Locations rather than behaviour; left out of the digest so the same
/// settings produce the same digest wherever the files live.
const PATH_KEYS: &[&str] = &["out", "archive", "labels", "target_archive", "adapter", "model", "predictions"];

fn canonical_key(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

fn env_key(var: &str) -> Option<&'static str> {
    let rest = var.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    KEYS.iter().map(|(k, _)| *k).find(|k| k.replace('.', "_") == rest)
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored.
pub fn parse_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect(),
            explicit: BTreeSet::new(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = canonical_key(key).ok_or_else(|| CliError::config(format!("unknown config key {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        self.explicit.insert(k);
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (k, v) in parse_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies `EMOFUSE_*` variables, e.g. `EMOFUSE_CV_K` for `cv.k`.
    /// Unrecognized variables under the prefix are rejected.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> CliResult<()> {
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, value) in vars {
            let key = env_key(&var).ok_or_else(|| CliError::config(format!("unknown config variable {var}")))?;
            self.set(key, &value)?;
        }
        Ok(())
    }

    /// File, then environment, then `key=value` overrides.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[String],
    ) -> CliResult<Self> {
        let mut cfg = Config::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("config {}", p.display()), e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_env(env)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::config(format!("{key} = {raw:?}: {e}")))
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        let v: f64 = self.parsed(key)?;
        if !v.is_finite() {
            return Err(CliError::config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        match self.raw(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(CliError::config(format!("{key} = {other:?} is not a boolean"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::config(format!("{key}: {s:?} is not a number")))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key).ok_or_else(|| CliError::config(format!("{key} is required for this command")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out").unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.u64("seed")
    }

    /// Every behavioural key in order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !PATH_KEYS.contains(k))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn pooling(&self) -> CliResult<PoolingModes> {
        let get = |k: &str| -> CliResult<PoolingMode> { self.raw(k).parse().map_err(|e| CliError::config(format!("{k}: {e}"))) };
        Ok(PoolingModes {
            fed: get("pooling.fed")?,
            ser: get("pooling.ser")?,
            ted: get("pooling.ted")?,
        })
    }

    pub fn classifier(&self) -> CliResult<ClassifierKind> {
        let kind: ClassifierKind =
            self.raw("classifier").parse().map_err(|e| CliError::config(format!("classifier: {e}")))?;
        // Hyperparameters for the other classifier mean the config was
        // written for a different model.
        let foreign = match kind {
            ClassifierKind::Logreg => "mlp.",
            ClassifierKind::Mlp => "logreg.",
        };
        let mut stray: Vec<&str> = self.explicit.iter().copied().filter(|k| k.starts_with(foreign)).collect();
        if kind == ClassifierKind::Mlp {
            stray.extend(self.explicit.iter().copied().filter(|k| k.starts_with("cv.")));
        }
        if !stray.is_empty() {
            return Err(CliError::config(format!("classifier = {kind} but {} set", stray.join(", "))));
        }
        Ok(kind)
    }

    pub fn logreg(&self) -> CliResult<LogRegConfig> {
        let class_weight: ClassWeight = self
            .raw("logreg.class_weight")
            .parse()
            .map_err(|e| CliError::config(format!("logreg.class_weight: {e}")))?;
        let cfg = LogRegConfig {
            max_iter: self.usize("logreg.max_iter")?,
            tol: self.f64("logreg.tol")?,
            class_weight,
            ..Default::default()
        };
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn cv(&self, strict_flag: bool) -> CliResult<CvOptions> {
        let grid = self.f64_list("cv.grid")?;
        if grid.is_empty() || grid.iter().any(|c| *c <= 0.0) {
            return Err(CliError::config("cv.grid needs positive values"));
        }
        let k = self.usize("cv.k")?;
        if k < 2 {
            return Err(CliError::config("cv.k must be >= 2"));
        }
        let strict = strict_flag || self.bool("cv.strict")?;
        Ok(CvOptions {
            grid,
            k,
            seed: self.seed()?,
            logreg: self.logreg()?,
            scaling: if strict { FoldScaling::PerModality } else { FoldScaling::None },
        })
    }

    pub fn mlp(&self) -> CliResult<MlpConfig> {
        let layers = self.usize("mlp.layers")?;
        let factor = self.f64("mlp.width_factor")?;
        if factor <= 0.0 {
            return Err(CliError::config("mlp.width_factor must be positive"));
        }
        let mut cfg = MlpConfig::with_width_factor(factor);
        let width = cfg.hidden[0];
        cfg.hidden = vec![width; layers];
        cfg.dropout_p = self.f64("mlp.dropout")?;
        cfg.lr = self.f64("mlp.lr")?;
        cfg.weight_decay = self.f64("mlp.weight_decay")?;
        cfg.epochs = self.usize("mlp.epochs")?;
        cfg.batch_size = self.usize("mlp.batch_size")?;
        cfg.grad_clip = match self.raw("mlp.grad_clip") {
            "none" | "off" | "" => None,
            _ => Some(self.f64("mlp.grad_clip")?),
        };
        cfg.seed = self.seed()?;
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn fraction(&self, key: &str) -> CliResult<f64> {
        let v = self.f64(key)?;
        if !(0.0..1.0).contains(&v) {
            return Err(CliError::config(format!("{key} must be in [0, 1), got {v}")));
        }
        Ok(v)
    }

    pub fn supervisor(&self) -> CliResult<SupervisorConfig> {
        let timeout_ms = self.u64("supervisor.timeout_ms")?;
        let policy: DegradationPolicy = self
            .raw("supervisor.policy")
            .parse()
            .map_err(|e| CliError::config(format!("supervisor.policy: {e}")))?;
        let cfg = SupervisorConfig {
            timeout: Duration::from_millis(timeout_ms),
            retries: self.parsed("supervisor.retries")?,
            policy,
            ..Default::default()
        };
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn synthetic(&self) -> CliResult<SyntheticProfile> {
        let p = SyntheticProfile {
            frames_min: self.usize("synthetic.frames_min")?,
            frames_max: self.usize("synthetic.frames_max")?,
            class_shift: self.f64("synthetic.class_shift")?,
            noise: self.f64("synthetic.noise")?,
            ser_dim: self.usize("synthetic.ser_dim")?,
            speech_absent_fraction: self.f64("synthetic.speech_absent_fraction")?,
            ..Default::default()
        };
        p.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(p)
    }

    /// Relative class weights, one per class from very negative upward.
    pub fn class_balance(&self) -> CliResult<[f64; SentimentClass::COUNT]> {
        let w = self.f64_list("synthetic.class_balance")?;
        if w.len() != SentimentClass::COUNT || w.iter().any(|v| *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CliError::config("synthetic.class_balance needs 5 non-negative weights with a positive sum"));
        }
        Ok([w[0], w[1], w[2], w[3], w[4]])
    }
}
