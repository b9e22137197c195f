//! Run manifests: the resolved settings of a command plus digests of its
//! inputs and outputs. A manifest is itself a valid `--config` file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::settings::MANIFEST_PREFIX;

pub struct RunManifest {
    command: &'static str,
    settings: Vec<(String, String)>,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            command,
            settings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.push((key.to_string(), value.to_string()));
        self
    }

    pub fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.push((key.to_string(), path.to_path_buf()));
        self.setting(key, path.display())
    }

    pub fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.artifact(key, path);
        self.setting(key, path.display())
    }

    /// Digest only; for outputs whose path follows from other settings.
    pub fn artifact(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.push((key.to_string(), path.to_path_buf()));
        self
    }

    pub fn render(&self) -> Result<String, CliError> {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_PREFIX}command={}", self.command);
        let _ = writeln!(s, "{MANIFEST_PREFIX}tool=featsel {}", env!("CARGO_PKG_VERSION"));
        for (k, p) in &self.inputs {
            let _ = writeln!(s, "{MANIFEST_PREFIX}input.{k}.sha256={}", sha256_file(p)?);
        }
        for (k, p) in &self.outputs {
            let _ = writeln!(s, "{MANIFEST_PREFIX}output.{k}.sha256={}", sha256_file(p)?);
        }
        for (k, v) in &self.settings {
            let _ = writeln!(s, "{k}={v}");
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render()?).map_err(|e| CliError::io(path, e))
    }
}

/// `<path>.manifest`, beside a single-file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
