//! Append-only JSON-lines stores guarded by an advisory file lock.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MtlbError, Result};
use crate::tasks::Category;
use crate::train::Regime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subgroup {
    #[serde(rename = "all")]
    All,
    M,
    F,
}

/// One metric of one run: a (regime, category, seed, fraction, subgroup) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Key of the grid cell that produced this record.
    pub cell: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub regime: Regime,
    pub seed: u64,
    pub fraction: f64,
    #[serde(default)]
    pub female_removal: Option<f64>,
    pub category: Category,
    pub subgroup: Subgroup,
    /// `None` when every label of the category was degenerate.
    pub macro_auroc: Option<f64>,
    #[serde(default)]
    pub per_label: Vec<Option<f64>>,
    pub n: usize,
    pub selected_epoch: usize,
}

pub struct JsonlStore<T> {
    path: PathBuf,
    _kind: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> JsonlStore<T> {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            _kind: PhantomData,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends all rows in one locked write so readers never see half a batch.
    pub fn append(&self, rows: &[T]) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| MtlbError::Data(e.to_string()))?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.lock()?;
        let out = f.write_all(&buf).and_then(|_| f.flush());
        f.unlock()?;
        out?;
        Ok(())
    }

    /// Every row; a missing file reads as empty.
    pub fn load(&self) -> Result<Vec<T>> {
        let f = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        f.lock_shared()?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(&f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = serde_json::from_str(&line)
                .map_err(|e| MtlbError::Data(format!("{} line {}: {e}", self.path.display(), i + 1)))?;
            out.push(row);
        }
        f.unlock()?;
        Ok(out)
    }
}

pub type ResultsStore = JsonlStore<ResultRecord>;

impl ResultsStore {
    pub fn completed_cells(&self) -> Result<BTreeSet<String>> {
        Ok(self.load()?.into_iter().map(|r| r.cell).collect())
    }
}
