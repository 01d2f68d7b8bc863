//! Run manifests: one per command invocation, written next to its outputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub schema_version: String,
    pub started: String,
    /// `(role, path, sha256)`
    pub inputs: Vec<(String, PathBuf, String)>,
    /// Effective settings as `key = value` pairs.
    pub config: Vec<(String, String)>,
    /// `(role, path, sha256)`
    pub outputs: Vec<(String, PathBuf, String)>,
    /// Extra per-run facts, such as sweep cells.
    pub notes: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, schema_version: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            schema_version: schema_version.to_string(),
            started: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            inputs: Vec::new(),
            config: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push((role.to_string(), path.to_path_buf(), sha256_hex(&bytes)));
        Ok(())
    }

    /// Writes an output atomically and records its digest.
    pub fn write_output(&mut self, role: &str, path: PathBuf, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&path, bytes)?;
        self.outputs.push((role.to_string(), path, sha256_hex(bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: &str| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("tool", concat!("tmc ", env!("CARGO_PKG_VERSION")));
        line("command", &self.command);
        line("seed", &self.seed.to_string());
        line("schema_version", &self.schema_version);
        line("started", &self.started);
        line(
            "finished",
            &chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        );
        for (role, path, digest) in &self.inputs {
            line(&format!("input.{role}.path"), &path.display().to_string());
            line(&format!("input.{role}.sha256"), digest);
        }
        for (k, v) in &self.config {
            line(&format!("config.{k}"), v);
        }
        for (role, path, digest) in &self.outputs {
            line(&format!("output.{role}.path"), &path.display().to_string());
            line(&format!("output.{role}.sha256"), digest);
        }
        for (k, v) in &self.notes {
            line(k, v);
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join(MANIFEST_NAME);
        write_atomic(&path, self.render().as_bytes())?;
        Ok(path)
    }
}

/// Parses a manifest back into ordered `(key, value)` pairs.
pub fn parse(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
