//! Run manifests: resolved settings plus `manifest.*` metadata, written next
//! to the outputs. Passing a manifest back as `--config` (or to `replay`)
//! repeats the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::META_PREFIX;
use crate::error::Result;
use crate::formats::write_atomic;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub settings: Vec<(String, String)>,
    /// Extra metadata such as derived quantities; ignored on replay.
    pub info: Vec<(String, String)>,
    pub outputs: Vec<PathBuf>,
    pub start_unix: f64,
    pub end_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl Manifest {
    pub fn begin(command: &str) -> Self {
        Self {
            command: command.to_string(),
            settings: Vec::new(),
            info: Vec::new(),
            outputs: Vec::new(),
            start_unix: unix_now(),
            end_unix: f64::NAN,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    pub fn info(&mut self, key: &str, value: impl ToString) {
        self.info.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let meta = |s: &mut String, k: &str, v: &str| s.push_str(&format!("{META_PREFIX}{k}={v}\n"));
        meta(&mut s, "command", &self.command);
        meta(&mut s, "version", env!("CARGO_PKG_VERSION"));
        meta(&mut s, "start_unix", &format!("{:.3}", self.start_unix));
        meta(&mut s, "end_unix", &format!("{:.3}", self.end_unix));
        let outs: Vec<String> = self.outputs.iter().map(|p| p.display().to_string()).collect();
        meta(&mut s, "outputs", &outs.join(","));
        for (k, v) in &self.info {
            meta(&mut s, k, v);
        }
        for (k, v) in &self.settings {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Stamps the end time and writes `dir/manifest.txt` atomically.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.end_unix = unix_now();
        let path = dir.join(FILE_NAME);
        write_atomic(&path, self.render().as_bytes())?;
        Ok(path)
    }
}
