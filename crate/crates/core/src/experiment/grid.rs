//! Grid enumeration and dependency-ordered, resumable execution.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, RegimeKind, CODE_VERSION};
use super::store::{ResultRecord, ResultsStore, Subgroup};
use crate::data::{CohortDataset, SubsampleMode, SubsampleSpec};
use crate::error::{MtlbError, Result};
use crate::model::EncoderConfig;
use crate::tasks::{Category, TaskId};
use crate::train::checkpoint::checkpoint_exists;
use crate::train::{load_checkpoint, run_regime, save_checkpoint, CheckpointMeta, Pretrained, Regime, RunResult, RunSpec, TrainConfig};

/// One run of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub regime: Regime,
    /// Training fraction; 1.0 is full data.
    pub fraction: f64,
    pub female_removal: Option<f64>,
    pub seed: u64,
}

/// Seed a cell's model and subsample derive from. Cells that differ only in
/// regime share it, so their comparisons are paired.
pub fn run_seed(master_seed: u64, seed: u64) -> u64 {
    let mut z = master_seed.wrapping_add(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Cell {
    /// Stable identity of the cell under one configuration.
    pub fn key(&self, config_hash: &str) -> String {
        #[derive(Serialize)]
        struct K<'a> {
            config: &'a str,
            cell: &'a Cell,
        }
        let json = serde_json::to_vec(&K {
            config: config_hash,
            cell: self,
        })
        .expect("cell serializes");
        hex::encode(&Sha256::digest(&json)[..12])
    }

    pub fn subsample(&self, seed: u64) -> SubsampleSpec {
        let mode = match self.female_removal {
            Some(f) => SubsampleMode::Imbalanced { female_removal: f },
            None if self.fraction < 1.0 => SubsampleMode::FewShot { fraction: self.fraction },
            None => SubsampleMode::None,
        };
        SubsampleSpec { mode, seed }
    }

    /// The pretraining cell this one loads from.
    pub fn dependency(&self) -> Option<Cell> {
        self.regime.dependency().map(|regime| Cell {
            regime,
            fraction: 1.0,
            female_removal: None,
            seed: self.seed,
        })
    }

    pub fn label(&self) -> String {
        let mut s = format!("{} seed {}", self.regime, self.seed);
        if self.fraction < 1.0 {
            s += &format!(" fraction {}", self.fraction);
        }
        if let Some(f) = self.female_removal {
            s += &format!(" female-removal {f}");
        }
        s
    }
}

/// What a grid command asks for.
#[derive(Clone, Debug)]
pub struct GridRequest {
    pub regimes: Vec<RegimeKind>,
    pub categories: Vec<Category>,
    pub fractions: Vec<f64>,
    pub female_removal: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl GridRequest {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            regimes: cfg.regimes.clone(),
            categories: cfg.categories.iter().copied().filter(|c| c.is_reported()).collect(),
            fractions: cfg.fractions.clone(),
            female_removal: cfg.female_removal.clone(),
            seeds: cfg.seeds.clone(),
        }
    }
}

/// Cells of the request plus the pretraining cells they depend on, with
/// every dependency ahead of its dependents. MT runs on full data only;
/// pretraining always uses the full training split.
pub fn enumerate(req: &GridRequest) -> Vec<Cell> {
    let mut cells: Vec<Cell> = Vec::new();
    let push = |c: Cell, cells: &mut Vec<Cell>| {
        if !cells.contains(&c) {
            cells.push(c);
        }
    };
    for &kind in &req.regimes {
        for &seed in &req.seeds {
            let full = |regime| Cell {
                regime,
                fraction: 1.0,
                female_removal: None,
                seed,
            };
            match kind {
                RegimeKind::Mt => push(full(Regime::Mt), &mut cells),
                RegimeKind::PretrainOmit => {
                    for &c in &req.categories {
                        push(full(Regime::PretrainOmit(c)), &mut cells);
                    }
                }
                RegimeKind::St | RegimeKind::Ftd | RegimeKind::Ftf => {
                    for &c in &req.categories {
                        let regime = match kind {
                            RegimeKind::St => Regime::St(c),
                            RegimeKind::Ftd => Regime::Ftd(c),
                            _ => Regime::Ftf(c),
                        };
                        for &fraction in &req.fractions {
                            push(
                                Cell {
                                    regime,
                                    fraction,
                                    female_removal: None,
                                    seed,
                                },
                                &mut cells,
                            );
                        }
                        for &f in &req.female_removal {
                            push(
                                Cell {
                                    regime,
                                    fraction: 1.0,
                                    female_removal: Some(f),
                                    seed,
                                },
                                &mut cells,
                            );
                        }
                    }
                }
            }
        }
    }
    let deps: Vec<Cell> = cells.iter().filter_map(Cell::dependency).collect();
    for d in deps {
        push(d, &mut cells);
    }
    // Stable partition: pretraining first.
    let (mut first, rest): (Vec<Cell>, Vec<Cell>) = cells.into_iter().partition(|c| matches!(c.regime, Regime::PretrainOmit(_)));
    first.extend(rest);
    first
}

/// Metric records for one finished run, one per reported category and subgroup.
pub fn records_for(cell: &Cell, key: &str, config_hash: &str, master_seed: u64, suite: &[TaskId], result: &RunResult) -> Vec<ResultRecord> {
    let active = cell.regime.active_tasks(suite);
    let cats: BTreeSet<Category> = active.iter().map(|t| t.category()).filter(|c| c.is_reported()).collect();
    let mut out = Vec::new();
    for c in cats {
        let tasks: Vec<&TaskId> = active.iter().filter(|t| t.category() == c).collect();
        let per_label: Vec<Option<f64>> = tasks
            .iter()
            .filter_map(|t| result.test.tasks.get(t))
            .flat_map(|m| m.per_label.iter().copied())
            .collect();
        let n = tasks.iter().filter_map(|t| result.test.tasks.get(t)).map(|m| m.n).sum();
        for sg in [Subgroup::All, Subgroup::M, Subgroup::F] {
            let macro_auroc = match sg {
                Subgroup::All => result.test.category_score(c),
                Subgroup::M => result.test.category_subgroup(c, true),
                Subgroup::F => result.test.category_subgroup(c, false),
            };
            out.push(ResultRecord {
                cell: key.to_string(),
                config_hash: config_hash.to_string(),
                code_version: CODE_VERSION.to_string(),
                master_seed,
                regime: cell.regime,
                seed: cell.seed,
                fraction: cell.fraction,
                female_removal: cell.female_removal,
                category: c,
                subgroup: sg,
                macro_auroc,
                per_label: if sg == Subgroup::All { per_label.clone() } else { Vec::new() },
                n,
                selected_epoch: result.selected_epoch,
            });
        }
    }
    out
}

/// Everything a grid run needs besides the cells.
pub struct GridContext<'a> {
    pub dataset: &'a CohortDataset,
    pub suite: Vec<TaskId>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub store: ResultsStore,
    pub checkpoint_dir: PathBuf,
}

impl GridContext<'_> {
    pub fn checkpoint_path(&self, cell: &Cell) -> PathBuf {
        let cat = cell.regime.category().map_or("all".to_string(), |c| c.abbr().to_ascii_lowercase());
        self.checkpoint_dir
            .join(&self.config_hash[..16])
            .join(format!("{}-{cat}-seed{}.ckpt", cell.regime.kind().to_ascii_lowercase(), cell.seed))
    }
}

#[derive(Debug, Default)]
pub struct GridSummary {
    pub requested: usize,
    pub skipped: usize,
    pub executed: usize,
    pub failed: Vec<(String, MtlbError)>,
}

fn pretrained_for(ctx: &GridContext<'_>, cell: &Cell, cache: &Mutex<BTreeMap<PathBuf, Arc<Pretrained>>>) -> Result<Arc<Pretrained>> {
    let dep = cell.dependency().expect("fine-tuning cell");
    let path = ctx.checkpoint_path(&dep);
    if let Some(p) = cache.lock().expect("cache lock").get(&path) {
        return Ok(p.clone());
    }
    let (entries, meta) = load_checkpoint(&path)?;
    if meta.regime != dep.regime || meta.config_hash != ctx.config_hash {
        return Err(MtlbError::Checkpoint(format!(
            "{} holds {} for config {}, expected {} for {}",
            path.display(),
            meta.regime,
            meta.config_hash,
            dep.regime,
            ctx.config_hash
        )));
    }
    let p = Arc::new(Pretrained {
        regime: meta.regime,
        entries,
    });
    cache.lock().expect("cache lock").insert(path, p.clone());
    Ok(p)
}

fn run_cell(ctx: &GridContext<'_>, cell: &Cell, append: bool, cache: &Mutex<BTreeMap<PathBuf, Arc<Pretrained>>>) -> Result<()> {
    let seed = run_seed(ctx.master_seed, cell.seed);
    let pre = if cell.regime.is_finetune() {
        Some(pretrained_for(ctx, cell, cache)?)
    } else {
        None
    };
    let out = run_regime(&RunSpec {
        dataset: ctx.dataset,
        suite: &ctx.suite,
        encoder: &ctx.encoder,
        train: &ctx.train,
        regime: cell.regime,
        seed,
        subsample: cell.subsample(seed),
        pretrained: pre.as_deref(),
    })?;
    if matches!(cell.regime, Regime::PretrainOmit(_)) {
        let meta = CheckpointMeta {
            regime: cell.regime,
            config_hash: ctx.config_hash.clone(),
            seed: cell.seed,
            epoch: out.result.selected_epoch,
        };
        save_checkpoint(&ctx.checkpoint_path(cell), &out.model.store, &meta)?;
    }
    if append {
        let key = cell.key(&ctx.config_hash);
        ctx.store
            .append(&records_for(cell, &key, &ctx.config_hash, ctx.master_seed, &ctx.suite, &out.result))?;
    }
    Ok(())
}

/// Runs every cell not yet in the store, pretraining first, on `jobs`
/// threads. A finished pretraining cell whose checkpoint has gone missing
/// is rerun to restore the checkpoint but not recorded twice.
pub fn run_grid(ctx: &GridContext<'_>, cells: &[Cell], jobs: usize) -> Result<GridSummary> {
    let done = ctx.store.completed_cells()?;
    let needed_deps: BTreeSet<String> = cells
        .iter()
        .filter(|c| !done.contains(&c.key(&ctx.config_hash)))
        .filter_map(Cell::dependency)
        .map(|d| d.key(&ctx.config_hash))
        .collect();
    let mut summary = GridSummary {
        requested: cells.len(),
        ..GridSummary::default()
    };
    let mut phases: [Vec<(Cell, bool)>; 2] = [Vec::new(), Vec::new()];
    for c in cells {
        let key = c.key(&ctx.config_hash);
        let is_pre = matches!(c.regime, Regime::PretrainOmit(_));
        let complete = done.contains(&key);
        if !complete {
            phases[usize::from(!is_pre)].push((*c, true));
        } else if is_pre && needed_deps.contains(&key) && !checkpoint_exists(&ctx.checkpoint_path(c)) {
            phases[0].push((*c, false));
            summary.skipped += 1;
        } else {
            summary.skipped += 1;
        }
    }
    let cache = Mutex::new(BTreeMap::new());
    let failed = Mutex::new(Vec::new());
    let executed = AtomicUsize::new(0);
    for phase in &phases {
        let next = AtomicUsize::new(0);
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some((cell, append)) = phase.get(i) else { break };
            log::info!("running {}", cell.label());
            match run_cell(ctx, cell, *append, &cache) {
                Ok(()) => {
                    if *append {
                        executed.fetch_add(1, Ordering::SeqCst);
                    }
                }
                Err(e) => {
                    log::error!("{} failed: {e}", cell.label());
                    failed.lock().expect("failure list").push((cell.label(), e));
                }
            }
        };
        let n = jobs.max(1).min(phase.len().max(1));
        if n == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..n {
                    s.spawn(work);
                }
            });
        }
    }
    summary.executed = executed.into_inner();
    summary.failed = failed.into_inner().expect("failure list");
    Ok(summary)
}

pub fn default_checkpoint_dir(output: &Path) -> PathBuf {
    output.join("checkpoints")
}
