//! Flat `key=value` settings files and their layering with command-line
//! flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kpem_core::benchmark::{BenchmarkConfig, Estimator};

use crate::error::{Error, Result};
use crate::formats::read_text;

/// Keys starting with this prefix are run metadata and never settings.
pub const META_PREFIX: &str = "manifest.";

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    /// Origin used in error messages: `file:line` or `--flag`.
    origin: String,
}

/// Resolved settings; later layers override earlier ones.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
    meta: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, i as u64 + 1, format!("expected `key=value`, found `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(path, i as u64 + 1, "empty key"));
            }
            if let Some(meta) = k.strip_prefix(META_PREFIX) {
                s.meta.insert(meta.to_string(), v.to_string());
            } else {
                s.entries.insert(
                    k.to_string(),
                    Entry {
                        value: v.to_string(),
                        origin: format!("{}:{}", path.display(), i + 1),
                    },
                );
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Loads `path` when given, otherwise starts empty.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Overrides `key` with a flag value when present.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.entries.insert(
                key.to_string(),
                Entry {
                    value: v.to_string(),
                    origin: format!("--{key}"),
                },
            );
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("{}: invalid value `{}` for `{key}`", e.origin, e.value))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Usage(format!("missing required setting `{key}`")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, e) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Usage(format!("{}: unknown setting `{k}`", e.origin)));
            }
        }
        Ok(())
    }
}

/// `lo:hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range(pub f64, pub f64);

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected `lo:hi`, found `{s}`"))?;
        let lo = a.trim().parse().map_err(|_| format!("invalid bound `{a}`"))?;
        let hi = b.trim().parse().map_err(|_| format!("invalid bound `{b}`"))?;
        Ok(Range(lo, hi))
    }
}

impl std::fmt::Display for Range {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

/// Comma separated list.
pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| format!("invalid list item `{}`", p.trim())))
        .collect()
}

pub const BENCHMARK_KEYS: &[&str] = &[
    "preset",
    "runs",
    "order",
    "poles",
    "T",
    "N",
    "Nv",
    "snr",
    "period",
    "duty",
    "lo",
    "hi",
    "baseline_max_order",
    "seed",
    "estimators",
    "arx_order",
    "max_evals",
    "workers",
    "out",
];

/// Preset, then every explicit key.
pub fn benchmark_config(s: &Settings) -> Result<BenchmarkConfig> {
    let preset = s.get_or("preset", "full".to_string())?;
    let mut cfg =
        BenchmarkConfig::preset(&preset).ok_or_else(|| Error::Usage(format!("unknown preset `{preset}` (desk|full)")))?;
    cfg.n_runs = s.get_or("runs", cfg.n_runs)?;
    cfg.order = s.get_or("order", cfg.order)?;
    if let Some(Range(lo, hi)) = s.get("poles")? {
        cfg.pole_range = (lo, hi);
    }
    cfg.t = s.get_or("T", cfg.t)?;
    cfg.n = s.get_or("N", cfg.n)?;
    cfg.n_v = s.get_or("Nv", cfg.n_v)?;
    cfg.snr = s.get_or("snr", cfg.snr)?;
    cfg.input.period = s.get_or("period", cfg.input.period)?;
    cfg.input.duty = s.get_or("duty", cfg.input.duty)?;
    cfg.input.lo = s.get_or("lo", cfg.input.lo)?;
    cfg.input.hi = s.get_or("hi", cfg.input.hi)?;
    cfg.baseline_max_order = s.get_or("baseline_max_order", cfg.baseline_max_order)?;
    cfg.master_seed = s.get_or("seed", cfg.master_seed)?;
    if let Some(list) = s.raw("estimators") {
        cfg.estimators = parse_list::<Estimator>(list).map_err(|e| Error::Usage(format!("estimators: {e}")))?;
    }
    cfg.arx_order = s.get_or("arx_order", cfg.arx_order)?;
    cfg.search_max_evals = s.get_or("max_evals", cfg.search_max_evals)?;
    cfg.validate().map_err(|e| Error::Usage(format!("benchmark configuration: {e}")))?;
    Ok(cfg)
}

/// Every field of `cfg` as settings pairs; feeding them back through
/// [`benchmark_config`] reproduces `cfg`.
pub fn benchmark_pairs(cfg: &BenchmarkConfig) -> Vec<(String, String)> {
    let est: Vec<&str> = cfg.estimators.iter().map(|e| e.name()).collect();
    vec![
        ("runs".into(), cfg.n_runs.to_string()),
        ("order".into(), cfg.order.to_string()),
        ("poles".into(), Range(cfg.pole_range.0, cfg.pole_range.1).to_string()),
        ("T".into(), cfg.t.to_string()),
        ("N".into(), cfg.n.to_string()),
        ("Nv".into(), cfg.n_v.to_string()),
        ("snr".into(), cfg.snr.to_string()),
        ("period".into(), cfg.input.period.to_string()),
        ("duty".into(), cfg.input.duty.to_string()),
        ("lo".into(), cfg.input.lo.to_string()),
        ("hi".into(), cfg.input.hi.to_string()),
        ("baseline_max_order".into(), cfg.baseline_max_order.to_string()),
        ("seed".into(), cfg.master_seed.to_string()),
        ("estimators".into(), est.join(",")),
        ("arx_order".into(), cfg.arx_order.to_string()),
        ("max_evals".into(), cfg.search_max_evals.to_string()),
    ]
}
