use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub version: &'static str,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_s: f64,
}

/// Tracks the files a command reads and writes.
pub struct Run {
    pub command: String,
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn new(command: &str, out_dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out_dir).map_err(|e| CliError::from_io(&out_dir, e))?;
        Ok(Self {
            command: command.to_string(),
            out_dir,
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        if !path.exists() {
            return Err(CliError::MissingFile {
                path: path.display().to_string(),
            });
        }
        self.inputs.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    /// Output path inside the run directory (or `explicit`), refusing to overwrite.
    pub fn output(&mut self, name: &str, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
        let path = explicit.map_or_else(|| self.out_dir.join(name), Path::to_path_buf);
        if path.exists() {
            return Err(CliError::Exists {
                path: path.display().to_string(),
            });
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::from_io(parent, e))?;
        }
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn create(&mut self, name: &str, explicit: Option<&Path>) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.output(name, explicit)?;
        let f = File::create(&path).map_err(|e| CliError::from_io(&path, e))?;
        Ok((path, BufWriter::new(f)))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, explicit: Option<&Path>, value: &T) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name, explicit)?;
        serde_json::to_writer_pretty(&mut w, value).expect("serializable report");
        writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::from_io(&path, e))?;
        Ok(path)
    }

    pub fn input_digests(&self) -> Result<Vec<FileDigest>, CliError> {
        self.inputs.iter().map(|p| digest(p)).collect()
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.input_digests()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::from_io(&path, e))?;
        Ok(path)
    }
}
