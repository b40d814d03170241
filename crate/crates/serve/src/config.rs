use std::path::{Path, PathBuf};

use lesionpipe::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

/// The `serve` section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
    /// Largest accepted request body; larger uploads get 413.
    pub body_limit_bytes: usize,
    /// Classifications remembered for feedback correlation, oldest evicted first.
    pub request_log_capacity: usize,
    /// Keep uploads on disk so clinician-labelled images can feed retraining.
    pub spill_uploads: bool,
    pub spill_dir: Option<PathBuf>,
    /// When set, `/api` requests must carry it in the `x-lesionpipe-token` header.
    pub auth_token: Option<String>,
    /// Static files served under `/console/`.
    pub console_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            body_limit_bytes: 10 * 1024 * 1024,
            request_log_capacity: 10_000,
            spill_uploads: false,
            spill_dir: None,
            auth_token: None,
            console_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub serve: ServeConfig,
}

#[derive(Deserialize, Default)]
struct ServeOnly {
    #[serde(default)]
    serve: ServeConfig,
}

impl AppConfig {
    /// Loads both sections from one file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let pipeline = PipelineConfig::load(path)?;
        let text = std::fs::read_to_string(path)?;
        let mut serve = serde_json::from_str::<ServeOnly>(&text)?.serve;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut serve.spill_dir, &mut serve.console_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(Self { pipeline, serve })
    }

    pub fn spill_dir(&self) -> PathBuf {
        self.serve.spill_dir.clone().unwrap_or_else(|| self.pipeline.data_dir.join("spill"))
    }
}
