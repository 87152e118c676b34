//! Output directory bookkeeping: digests of every input read and output
//! written, the manifest, and the timing sidecar.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";
pub const ERROR: &str = "error.json";

#[derive(Clone, Debug, Serialize)]
struct InputRecord {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Clone, Debug, Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
}

#[derive(Clone, Debug, Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Run {
    out_dir: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<OutputRecord>,
    stages: Vec<Stage>,
    started: Instant,
}

impl Run {
    pub fn create(out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::validation(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Run { out_dir: out_dir.to_path_buf(), inputs: Vec::new(), outputs: Vec::new(), stages: Vec::new(), started: Instant::now() })
    }

    /// Reads a UTF-8 input file and records its digest under `role`.
    pub fn read(&mut self, role: &str, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|e| CliError::validation(format!("cannot read {role} file {}: {e}", path.display())))?;
        self.inputs.push(InputRecord { role: role.into(), path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        String::from_utf8(bytes).map_err(|_| CliError::validation(format!("{role} file {} is not UTF-8", path.display())))
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(OutputRecord { path: name.into(), sha256: sha256_hex(contents) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.stages.push(Stage { name: name.into(), seconds: t0.elapsed().as_secs_f64() });
        out
    }

    /// Writes `manifest.json`, which holds only content-determined fields,
    /// and `timing.json` with the wall-clock stages.
    pub fn finish<S: Serialize>(self, subcommand: &str, settings: &S, seed: Option<u64>) -> CliResult<()> {
        let manifest = serde_json::json!({
            "tool": "klioc",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "seed": seed,
            "settings": settings,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let timing = serde_json::json!({
            "stages": self.stages,
            "total_seconds": self.started.elapsed().as_secs_f64(),
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.out_dir.join(MANIFEST), text)?;
        let mut text = serde_json::to_string_pretty(&timing)?;
        text.push('\n');
        fs::write(self.out_dir.join(TIMING), text)?;
        Ok(())
    }
}
