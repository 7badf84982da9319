//! Parameter checkpoints with a JSON sidecar, written atomically.

use std::fs;
use std::path::{Path, PathBuf};

use mtlb_autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::Regime;
use crate::error::{MtlbError, Result};

/// What produced a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub regime: Regime,
    pub config_hash: String,
    pub seed: u64,
    /// Selected epoch, 0-based.
    pub epoch: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the parameters and then the sidecar; a reader that finds the
/// sidecar can trust the parameter file is complete.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let mut buf = Vec::new();
    store.write_checkpoint(&mut buf)?;
    write_atomic(path, &buf)?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| MtlbError::Checkpoint(e.to_string()))?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, CheckpointMeta)> {
    let side = sidecar_path(path);
    let meta_bytes = fs::read(&side)
        .map_err(|e| MtlbError::Checkpoint(format!("missing checkpoint manifest {}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| MtlbError::Checkpoint(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(|e| MtlbError::Checkpoint(format!("missing checkpoint {}: {e}", path.display())))?;
    let entries = ParamStore::read_checkpoint(bytes.as_slice())?;
    Ok((entries, meta))
}

pub fn checkpoint_exists(path: &Path) -> bool {
    path.is_file() && sidecar_path(path).is_file()
}
