use std::path::Path;

use serde::Serialize;
use start_core::harness::LodoConfig;

use crate::error::Result;
use crate::output::write_json;

pub const TOOL: &str = "start";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written once, before any training starts, and never rewritten. The
/// finish time lives in the summary file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub started_at: String,
    /// Canonical text form of the effective configuration.
    pub config_text: String,
    pub config: LodoConfig,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: &LodoConfig, outputs: Vec<String>) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            args,
            started_at: now(),
            config_text: crate::config::render(config),
            config: config.clone(),
            seeds: config.seeds.clone(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
