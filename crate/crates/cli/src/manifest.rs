//! `manifest.json`: the resolved configuration, seeds, crate versions, and
//! per-stage input/output checksums. It carries no timestamps, so reruns
//! reproduce it byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub struct Manifest {
    path: PathBuf,
    root: Value,
}

impl Manifest {
    /// Opens the run directory's manifest, starting a fresh one when it is
    /// absent or was written for another configuration.
    pub fn open(run_dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        let path = run_dir.join(FILE_NAME);
        let config: Map<String, Value> = cfg
            .canonical()
            .into_iter()
            .map(|(k, v)| (k, Value::String(v)))
            .collect();
        let fresh = json!({
            "config": config,
            "run": format!("run-{}", cfg.stamp()),
            "seeds": { "master": cfg.seed },
            "stages": {},
            "versions": {
                "freezecast": freezecast_version(),
                "freezecast-cli": env!("CARGO_PKG_VERSION"),
            },
        });
        let root = match std::fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<Value>(&bytes) {
                Ok(old) if old.get("config") == fresh.get("config") => old,
                _ => fresh,
            },
            Err(_) => fresh,
        };
        Ok(Manifest { path, root })
    }

    /// Records a stage's inputs (label to file) and outputs (file names
    /// inside the run directory), replacing any earlier entry for it.
    pub fn record(
        &mut self,
        stage: &str,
        inputs: &[(String, PathBuf)],
        outputs: &[String],
        extra: BTreeMap<String, Value>,
    ) -> Result<(), CliError> {
        let run_dir = self
            .path
            .parent()
            .expect("manifest lives in the run directory")
            .to_path_buf();
        let mut ins = Map::new();
        for (label, path) in inputs {
            ins.insert(
                label.clone(),
                json!({ "path": display_path(path, &run_dir), "sha256": sha256_file(path)? }),
            );
        }
        let mut outs = Map::new();
        for name in outputs {
            outs.insert(
                name.clone(),
                Value::String(sha256_file(&run_dir.join(name))?),
            );
        }
        let mut entry = Map::new();
        entry.insert("inputs".into(), Value::Object(ins));
        entry.insert("outputs".into(), Value::Object(outs));
        for (k, v) in extra {
            entry.insert(k, v);
        }
        self.root["stages"][stage] = Value::Object(entry);
        Ok(())
    }

    pub fn save(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.root).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&self.path, text).map_err(|e| CliError::io(&self.path, e))
    }
}

/// Paths inside the run directory are recorded relative to it, so the
/// manifest does not depend on where the output root lives.
fn display_path(path: &Path, run_dir: &Path) -> String {
    match path.strip_prefix(run_dir) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => path.display().to_string(),
    }
}

fn freezecast_version() -> &'static str {
    freezecast::VERSION
}
