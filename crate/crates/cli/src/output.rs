//! Output directory bookkeeping and the run manifest.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rlfollow::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to regenerate an output directory.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub argv: Vec<String>,
    pub seed: u64,
    pub jobs: usize,
    pub config: &'a RunConfig,
    pub inputs: &'a [InputFile],
    pub checkpoints: &'a [String],
    pub outputs: &'a [String],
}

/// Collects written files and input digests for one command.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    inputs: Vec<InputFile>,
    checkpoints: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| {
            Error::Config(format!("cannot create output directory {}: {e}", root.display()))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            inputs: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        let path = self.path(name);
        fs::write(path, text)?;
        Ok(())
    }

    /// Records an input file by content hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::Data {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn checkpoint_ids(&mut self, ids: impl IntoIterator<Item = String>) {
        self.checkpoints.extend(ids);
    }

    pub fn finish(mut self, command: &str, cfg: &RunConfig, jobs: usize) -> Result<()> {
        let name = format!("manifest-{command}.json");
        self.written.push(name.clone());
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().skip(1).collect(),
            seed: cfg.seed,
            jobs,
            config: cfg,
            inputs: &self.inputs,
            checkpoints: &self.checkpoints,
            outputs: &self.written,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(name), text)?;
        Ok(())
    }
}
