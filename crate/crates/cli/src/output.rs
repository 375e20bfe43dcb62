//! Output envelope: every run emits a manifest describing the invocation and
//! a deterministic result payload. JSON outputs embed both; CSV outputs get a
//! manifest sidecar (or the manifest on stderr when streaming to stdout).

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restriction: Option<Value>,
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_ms: u128,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub struct ManifestBuilder {
    started: Instant,
    subcommand: String,
    inputs: Vec<String>,
    restriction: Option<Value>,
    config: Value,
    seed: Option<u64>,
    warnings: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            restriction: None,
            config: Value::Null,
            seed: None,
            warnings: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn restriction<T: Serialize>(mut self, r: &T) -> Self {
        self.restriction = serde_json::to_value(r).ok();
        self
    }

    pub fn config<T: Serialize>(mut self, c: &T) -> Self {
        self.config = serde_json::to_value(c).unwrap_or(Value::Null);
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }

    pub fn warn(&mut self, message: String) {
        self.warnings.push(message);
    }

    pub fn finish(self) -> Manifest {
        Manifest {
            tool: "crc-bounds".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand,
            inputs: self.inputs,
            restriction: self.restriction,
            config: self.config,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            wall_time_ms: self.started.elapsed().as_millis(),
            warnings: self.warnings,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a Manifest,
    result: &'a T,
}

/// Write a JSON envelope to the given path or stdout.
pub fn emit_json<T: Serialize>(manifest: &Manifest, result: &T, out: Option<&PathBuf>) -> Result<()> {
    let envelope = Envelope { manifest, result };
    let text = serde_json::to_string_pretty(&envelope).context("serializing output")?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Write CSV text to the path (manifest sidecar alongside) or stdout
/// (manifest on stderr).
pub fn emit_csv(manifest: &Manifest, csv_text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, csv_text).with_context(|| format!("writing {}", path.display()))?;
            let sidecar = sidecar_path(path);
            fs::write(&sidecar, serde_json::to_string_pretty(manifest)? + "\n")
                .with_context(|| format!("writing {}", sidecar.display()))?;
        }
        None => {
            print!("{csv_text}");
            let mut err = std::io::stderr();
            writeln!(err, "{}", serde_json::to_string(manifest)?)?;
        }
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
