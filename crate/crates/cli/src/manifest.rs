//! Run directory: `manifest.json` first, then the outputs, then
//! `outputs.json` listing every output with its digest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUTPUTS_FILE: &str = "outputs.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub output_dir: String,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    /// Digest of subcommand, seed, version, inputs and effective config.
    /// Independent of the output directory.
    pub run_id: String,
    pub effective_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputIndex {
    pub run_id: String,
    pub manifest: String,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// An output directory with its manifest already on disk.
pub struct RunDir {
    dir: PathBuf,
    pub manifest: RunManifest,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(
        dir: &Path,
        subcommand: &str,
        config_path: Option<&Path>,
        seed: u64,
        inputs: &[PathBuf],
        effective_config: serde_json::Value,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let inputs = inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>, _>>()?;
        let version = env!("CARGO_PKG_VERSION").to_string();
        let key = serde_json::json!({
            "subcommand": subcommand,
            "seed": seed,
            "version": version,
            "inputs": inputs.iter().map(|d| &d.sha256).collect::<Vec<_>>(),
            "config": effective_config,
        });
        let run_id = sha256_hex(key.to_string().as_bytes())[..16].to_string();
        let manifest = RunManifest {
            subcommand: subcommand.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            output_dir: dir.display().to_string(),
            version,
            inputs,
            run_id,
            effective_config,
        };
        let run = Self { dir: dir.to_path_buf(), manifest, outputs: Vec::new() };
        let text = serde_json::to_string_pretty(&run.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = run.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(io(&path))?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Creates `name` and hands a buffered writer to `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> Result<(), CliError>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io(&path))?);
        f(&mut w)?;
        w.flush().map_err(io(&path))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Pretty JSON with the run id attached under `run_id`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("run_id".into(), self.manifest.run_id.clone().into());
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(name, |w| w.write_all((text + "\n").as_bytes()).map_err(|e| CliError::Runtime(e.to_string())))
    }

    pub fn finish(self) -> Result<OutputIndex, CliError> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                let mut d = file_digest(&self.dir.join(name))?;
                d.path = name.clone();
                Ok(d)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let index = OutputIndex { run_id: self.manifest.run_id.clone(), manifest: MANIFEST_FILE.into(), outputs };
        let path = self.dir.join(OUTPUTS_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io(&path))?;
        Ok(index)
    }
}
