use std::path::{Path, PathBuf};
use std::time::SystemTime;

use lagmart::checks::{CheckResult, Status};
use lagmart::simulate::SimConfig;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: SimConfig,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

pub fn timestamp(t: SystemTime) -> String {
    humantime::format_rfc3339_seconds(t).to_string()
}

impl RunManifest {
    pub fn new(command: &'static str, config: &SimConfig, started: SystemTime) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.clone(),
            master_seed: config.master_seed,
            started_at: timestamp(started),
            finished_at: String::new(),
            outputs: Vec::new(),
            checks: Vec::new(),
            all_passed: true,
        }
    }

    pub fn with_checks(mut self, checks: Vec<CheckResult>) -> Self {
        self.all_passed = checks.iter().all(|c| c.status != Status::Fail);
        self.checks = checks;
        self
    }

    /// Stamps the finish time and writes the manifest as the last output.
    pub fn write(mut self, path: &Path) -> std::io::Result<()> {
        self.outputs.push(path.to_path_buf());
        self.finished_at = timestamp(SystemTime::now());
        let mut json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        json.push('\n');
        std::fs::write(path, json)
    }
}
