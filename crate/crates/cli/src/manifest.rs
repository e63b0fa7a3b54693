use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};
use sksv::jl::SketchConfig;
use xxhash_rust::xxh3::xxh3_64;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    /// XXH3-64 of the file contents, lowercase hex.
    pub xxh3: String,
    pub bytes: usize,
}

/// One record per invocation: what ran, on what, and what it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub config: Option<SketchConfig>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub stats: Map<String, Value>,
    pub exit_code: u8,
    pub wall_time_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &'static str) -> Self {
        RunManifest {
            command,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: Map::new(),
            exit_code: 0,
            wall_time_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path, contents: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            xxh3: format!("{:016x}", xxh3_64(contents)),
            bytes: contents.len(),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn stat(&mut self, key: &str, value: impl Into<Value>) {
        self.stats.insert(key.to_string(), value.into());
    }

    pub fn finish(mut self, exit_code: u8) -> Self {
        self.exit_code = exit_code;
        if let Some(t) = self.started {
            self.wall_time_secs = t.elapsed().as_secs_f64();
        }
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("manifest serialization is infallible")
    }
}
