//! Run directories and the run manifest.
//!
//! Every command writes its artifacts into one directory together with an
//! echo of the configuration and a `run_manifest.json` recording the config
//! hash, tool version, timestamps, and output file list. The manifest is
//! written atomically (temp file + rename) at the end of the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUT_ROOT_ENV: &str = "IONTRAP_OUT_ROOT";

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    started_unix_s: u64,
    outputs: Vec<String>,
}

impl RunDir {
    /// Create (or, with `force`, reuse) the run directory. Without an
    /// explicit `--out`, the directory name is derived from the command,
    /// the config hash, and the seed under the output root
    /// (`$IONTRAP_OUT_ROOT`, default `./iontrap-runs`).
    pub fn create(
        command: &str,
        out: Option<PathBuf>,
        config_bytes: Option<&[u8]>,
        seed: Option<u64>,
        force: bool,
    ) -> CliResult<Self> {
        let config_sha256 = config_bytes.map(sha256_hex);
        let path = match out {
            Some(p) => p,
            None => {
                let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "iontrap-runs".into());
                let tag = config_sha256
                    .as_deref()
                    .map(|h| h[..8].to_string())
                    .unwrap_or_else(|| "noconfig".into());
                let seed_tag = seed.map(|s| format!("-s{s}")).unwrap_or_default();
                Path::new(&root).join(format!("{command}-{tag}{seed_tag}"))
            }
        };
        if path.exists() {
            let occupied = std::fs::read_dir(&path)
                .map(|mut d| d.next().is_some())
                .unwrap_or(false);
            if occupied && !force {
                return Err(CliError::Io(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    path.display()
                )));
            }
        }
        std::fs::create_dir_all(&path)?;
        let mut run = Self {
            path,
            command: command.to_string(),
            config_sha256,
            seed,
            started_unix_s: unix_now(),
            outputs: Vec::new(),
        };
        if let Some(bytes) = config_bytes {
            run.write_file("config.toml", bytes)?;
        }
        Ok(run)
    }

    /// Write one artifact and record it in the manifest's output list.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        std::fs::write(self.path.join(name), bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write_file(name, text.as_bytes())
    }

    /// Write the manifest atomically. Call once, at the end of the run
    /// (also before returning a numerical error, so partial runs are
    /// accounted for).
    pub fn finish(&self) -> CliResult<()> {
        let manifest = serde_json::json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "started_unix_s": self.started_unix_s,
            "finished_unix_s": unix_now(),
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Io(format!("cannot serialize manifest: {e}")))?;
        let tmp = self.path.join("run_manifest.json.tmp");
        std::fs::write(&tmp, format!("{text}\n"))?;
        std::fs::rename(&tmp, self.path.join("run_manifest.json"))?;
        Ok(())
    }
}
