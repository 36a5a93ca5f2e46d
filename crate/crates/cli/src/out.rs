//! Artifact directory with a `manifest.json` of file hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cachenet::config::{sha256_hex, ExperimentConfig};
use cachenet::textfmt::{Provenance, TOOL_VERSION};

use crate::{Failure, EXIT_MISSING};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

pub struct OutDir {
    dir: PathBuf,
    manifest: Manifest,
    pub prov: Provenance,
}

impl OutDir {
    /// Opens `dir`, keeping manifest entries only if they came from the same
    /// config.
    pub fn open(dir: &Path, cfg: &ExperimentConfig) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(1, format!("{}: {e}", dir.display())))?;
        let hash = cfg.hash();
        let mut manifest = std::fs::read_to_string(dir.join(MANIFEST))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| m.config_hash == hash)
            .unwrap_or_default();
        manifest.config_hash = hash.clone();
        manifest.tool_version = TOOL_VERSION.to_owned();
        manifest.seed = cfg.seed;
        Ok(Self {
            dir: dir.to_owned(),
            manifest,
            prov: Provenance::new(hash),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Metadata string for binary artifacts.
    pub fn binary_meta(&self) -> String {
        format!(
            "config-hash={} tool-version={}",
            self.prov.config_hash, self.prov.tool_version
        )
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
        let bytes = bytes.as_ref();
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))?;
        self.manifest.files.insert(name.to_owned(), sha256_hex(bytes));
        Ok(())
    }

    pub fn read(&self, name: &str, needed_by: &str) -> Result<Vec<u8>, Failure> {
        let path = self.path(name);
        std::fs::read(&path).map_err(|e| {
            Failure::new(
                EXIT_MISSING,
                format!("{} ({e}); run `cachenet {needed_by}` first", path.display()),
            )
        })
    }

    pub fn read_text(&self, name: &str, needed_by: &str) -> Result<String, Failure> {
        String::from_utf8(self.read(name, needed_by)?)
            .map_err(|_| Failure::new(1, format!("{} is not UTF-8", self.path(name).display())))
    }

    pub fn finish(&self) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifests serialize");
        let path = self.path(MANIFEST);
        std::fs::write(&path, text + "\n").map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
    }
}
