use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prodintent::io;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one subcommand run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, Artifact>,
    pub wall_time_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serializes");
    }

    pub fn input(&mut self, name: &str, path: impl AsRef<Path>) {
        self.inputs.insert(name.to_string(), path.as_ref().to_path_buf());
    }

    /// Hashes `path` as it is on disk now.
    pub fn output(&mut self, name: &str, path: impl AsRef<Path>) -> prodintent::Result<()> {
        let path = path.as_ref();
        let sha256 = io::file_sha256(path)?;
        self.outputs.insert(
            name.to_string(),
            Artifact {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn finish(mut self, path: impl AsRef<Path>) -> prodintent::Result<()> {
        if let Some(t) = self.started {
            self.wall_time_secs = t.elapsed().as_secs_f64();
        }
        io::write_json(path, &self)
    }
}

/// Default manifest location inside an output directory.
pub fn default_path(dir: impl AsRef<Path>, subcommand: &str) -> PathBuf {
    dir.as_ref().join(format!("manifest.{subcommand}.json"))
}
