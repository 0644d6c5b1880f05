//! Durable description of which files make up the system state.
//!
//! Written as JSON to a temporary file and renamed into place, so a reader
//! sees either the old or the new manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphParams;

pub const MANIFEST_NAME: &str = "MANIFEST.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub params: GraphParams,
    /// Long-term index file name, if one has been built.
    pub lti: Option<String>,
    /// Read-only temp index snapshots, oldest first.
    pub ro: Vec<String>,
    /// Delete list at the checkpoint, sorted.
    pub deletes: Vec<u64>,
    /// Log offset up to which every operation is reflected in the files above.
    pub checkpoint: u64,
    pub next_id: u64,
    pub next_file: u64,
    /// Points the current codebook was trained on.
    #[serde(default)]
    pub codebook_points: usize,
}

impl Manifest {
    pub fn new(dim: usize, params: GraphParams, checkpoint: u64) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            dim,
            params,
            lti: None,
            ro: Vec::new(),
            deletes: Vec::new(),
            checkpoint,
            next_id: 0,
            next_file: 0,
            codebook_points: 0,
        }
    }

    /// Every file name the manifest refers to, LTI sidecars excluded.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.lti.iter().chain(&self.ro).map(String::as_str)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(None);
        }
        let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format("manifest", format!("unsupported version {}", m.version)));
        }
        Ok(Some(m))
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec_pretty(self)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(MANIFEST_NAME))?;
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_and_load() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), None);
        let mut m = Manifest::new(8, GraphParams::new(8, 16, 1.2), 12);
        m.lti = Some("lti-3.fda".into());
        m.ro = vec!["ro-4.fvg".into()];
        m.deletes = vec![1, 5];
        m.store(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), Some(m.clone()));
        assert_eq!(m.files().collect::<Vec<_>>(), vec!["lti-3.fda", "ro-4.fvg"]);
        assert!(!dir.path().join("MANIFEST.json.tmp").exists());
    }
}
