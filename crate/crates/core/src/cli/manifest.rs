use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything needed to reproduce one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool: String,
    pub version: String,
    /// Fully resolved parameters, defaults included.
    pub parameters: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub convention: Option<String>,
    pub convention_source: Option<String>,
    pub format: String,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Recognises a manifest by its leading `{`.
    pub fn sniff(text: &str) -> Option<Result<Self>> {
        text.trim_start()
            .starts_with('{')
            .then(|| serde_json::from_str(text).map_err(|e| Error::Config(format!("bad manifest: {e}"))))
    }
}
