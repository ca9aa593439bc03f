//! Run directory: data files plus `manifest.json`, all written from one
//! thread in a fixed order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Entry {
    file: String,
    sha256: String,
    bytes: usize,
}

pub struct RunDir {
    root: PathBuf,
    entries: Vec<Entry>,
}

impl RunDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.entries.push(Entry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json`. `timing` is only present outside
    /// deterministic mode.
    pub fn finish(
        self,
        command: &str,
        config: &Value,
        summary: Value,
        timing: Option<Value>,
    ) -> std::io::Result<()> {
        let config_text = serde_json::to_string(config).map_err(std::io::Error::other)?;
        let mut manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": sha256_hex(config_text.as_bytes()),
            "config": config,
            "outputs": self.entries,
            "summary": summary,
        });
        if let Some(t) = timing {
            manifest["timing"] = t;
        }
        let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)
    }
}
