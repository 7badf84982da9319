//! Training regimes: single-task, multi-task, task-omitted pretraining and
//! the two fine-tuning variants, plus the optimizer and evaluation loop.

pub mod adam;
pub mod batch;
pub mod checkpoint;
pub mod eval;

use std::fmt;
use std::str::FromStr;

use mtlb_autodiff::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{subsample, CohortDataset, Split, SubsampleSpec};
use crate::error::{MtlbError, Result};
use crate::model::{decoder_prefix, EncoderConfig, ModelBundle, ENCODER_PREFIX};
use crate::tasks::{Category, TaskId};

pub use adam::{adam_step, clip_global_norm, lr_at};
pub use batch::{total_loss, Batch, Item};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use eval::{eval_batch, evaluate, EvalReport, TaskMetrics};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    BestTune,
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Patients per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `lr_step` epochs; 1.0 disables decay.
    #[serde(default = "one")]
    pub lr_decay: f64,
    #[serde(default = "one_usize")]
    pub lr_step: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "one")]
    pub regression_weight: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub selection: Selection,
    /// Epochs for FTD/FTF; defaults to `epochs`.
    #[serde(default)]
    pub finetune_epochs: Option<usize>,
    /// Items per forward pass during evaluation.
    #[serde(default = "default_eval_chunk")]
    pub eval_chunk: usize,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}
fn default_eval_chunk() -> usize {
    512
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            lr_step: 1,
            weight_decay: 0.0,
            regression_weight: 1.0,
            clip_norm: default_clip(),
            selection: Selection::BestTune,
            finetune_epochs: None,
            eval_chunk: default_eval_chunk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MtlbError::Config(m));
        if self.epochs == 0 || self.finetune_epochs == Some(0) {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay {} outside (0,1]", self.lr_decay));
        }
        if self.weight_decay < 0.0 || self.regression_weight < 0.0 {
            return bad("weight decay and regression weight must be non-negative".into());
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return bad("clip norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    St(Category),
    Mt,
    PretrainOmit(Category),
    Ftd(Category),
    Ftf(Category),
}

impl Regime {
    /// The category this regime targets or omits.
    pub fn category(self) -> Option<Category> {
        match self {
            Regime::Mt => None,
            Regime::St(c) | Regime::PretrainOmit(c) | Regime::Ftd(c) | Regime::Ftf(c) => Some(c),
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            Regime::St(_) => "ST",
            Regime::Mt => "MT",
            Regime::PretrainOmit(_) => "PRETRAIN-OMIT",
            Regime::Ftd(_) => "FTD",
            Regime::Ftf(_) => "FTF",
        }
    }

    pub fn is_finetune(self) -> bool {
        matches!(self, Regime::Ftd(_) | Regime::Ftf(_))
    }

    /// The pretraining run a fine-tuning regime starts from.
    pub fn dependency(self) -> Option<Regime> {
        match self {
            Regime::Ftd(c) | Regime::Ftf(c) => Some(Regime::PretrainOmit(c)),
            _ => None,
        }
    }

    /// Tasks whose losses are summed under this regime.
    pub fn active_tasks(self, suite: &[TaskId]) -> Vec<TaskId> {
        let in_group = |t: &TaskId, c: Category| t.category().group() == c.group();
        suite
            .iter()
            .copied()
            .filter(|t| match self {
                Regime::Mt => true,
                Regime::PretrainOmit(c) => !in_group(t, c),
                Regime::St(c) | Regime::Ftd(c) | Regime::Ftf(c) => in_group(t, c),
            })
            .collect()
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.category() {
            Some(c) => write!(f, "{}({c})", self.kind()),
            None => f.write_str(self.kind()),
        }
    }
}

impl FromStr for Regime {
    type Err = MtlbError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("MT") {
            return Ok(Regime::Mt);
        }
        let bad = || MtlbError::Config(format!("cannot parse regime {s:?}; expected e.g. MT, ST(MOR), FTF(MOR)"));
        let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
        let cat = Category::parse(rest.strip_suffix(')').ok_or_else(bad)?)?;
        match kind.trim().to_ascii_uppercase().as_str() {
            "ST" => Ok(Regime::St(cat)),
            "PRETRAIN-OMIT" | "OMIT" => Ok(Regime::PretrainOmit(cat)),
            "FTD" => Ok(Regime::Ftd(cat)),
            "FTF" => Ok(Regime::Ftf(cat)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parameters of a task-omitted pretraining run.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub regime: Regime,
    pub entries: Vec<(String, Tensor)>,
}

impl Pretrained {
    pub fn from_model(regime: Regime, model: &ModelBundle) -> Self {
        Self {
            regime,
            entries: model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }
}

pub struct RunSpec<'a> {
    pub dataset: &'a CohortDataset,
    /// Every task with a decoder; regimes pick their active subset.
    pub suite: &'a [TaskId],
    pub encoder: &'a EncoderConfig,
    pub train: &'a TrainConfig,
    pub regime: Regime,
    pub seed: u64,
    pub subsample: SubsampleSpec,
    pub pretrained: Option<&'a Pretrained>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub regime: Regime,
    pub seed: u64,
    pub train_patients: usize,
    /// Selection score on the tune split after each epoch.
    pub tune_curve: Vec<Option<f64>>,
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    pub selected_epoch: usize,
    pub test: EvalReport,
}

pub struct RunOutput {
    pub model: ModelBundle,
    pub result: RunResult,
}

/// Index of the epoch to keep: best tune score with ties going to the
/// earliest, or the last one. Epochs without a score never win.
pub fn select_epoch(curve: &[Option<f64>], rule: Selection) -> usize {
    match rule {
        Selection::Final => curve.len().saturating_sub(1),
        Selection::BestTune => {
            let mut best: Option<(usize, f64)> = None;
            for (i, s) in curve.iter().enumerate() {
                if let Some(s) = *s {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((i, s));
                    }
                }
            }
            best.map_or(curve.len().saturating_sub(1), |(i, _)| i)
        }
    }
}

fn selection_score(report: &EvalReport, regime: Regime, active: &[TaskId]) -> Option<f64> {
    match regime {
        Regime::St(c) | Regime::Ftd(c) | Regime::Ftf(c) => report.category_score(c).or_else(|| report.objective(active)),
        Regime::Mt | Regime::PretrainOmit(_) => report.objective(active),
    }
}

/// Builds the model a regime starts from: fresh, or the pretrained weights
/// with the target decoders left at initialization.
pub fn initial_model(spec: &RunSpec<'_>) -> Result<ModelBundle> {
    let mut model = ModelBundle::new(spec.encoder, spec.suite, spec.seed)?;
    if let Some(dep) = spec.regime.dependency() {
        let pre = spec
            .pretrained
            .ok_or_else(|| MtlbError::Checkpoint(format!("{} needs a {dep} checkpoint", spec.regime)))?;
        if pre.regime != dep {
            return Err(MtlbError::Checkpoint(format!(
                "{} cannot start from a {} checkpoint",
                spec.regime, pre.regime
            )));
        }
        let skip: Vec<String> = spec.regime.active_tasks(spec.suite).into_iter().map(decoder_prefix).collect();
        model.load_from(&pre.entries, &skip)?;
    }
    Ok(model)
}

/// Freezes everything the regime must not update.
pub fn apply_freeze(model: &mut ModelBundle, regime: Regime, active: &[TaskId]) {
    model.store.set_all_frozen(true);
    if !matches!(regime, Regime::Ftd(_)) {
        model.store.set_frozen_prefix(ENCODER_PREFIX, false);
    }
    for &t in active {
        model.store.set_frozen_prefix(&decoder_prefix(t), false);
    }
}

/// Trains one regime end to end and scores the selected epoch on the test split.
pub fn run_regime(spec: &RunSpec<'_>) -> Result<RunOutput> {
    spec.train.validate()?;
    let active = spec.regime.active_tasks(spec.suite);
    if active.is_empty() {
        return Err(MtlbError::Config(format!("{} leaves no task to train in this suite", spec.regime)));
    }
    let ds = spec.dataset;
    let window = spec.encoder.window_hours;
    let train_all = ds.indices(Split::Train);
    let patients = subsample(ds, &train_all, &spec.subsample)?;
    let tune = eval_batch(ds, &ds.indices(Split::Tune), &active, window);

    let mut model = initial_model(spec)?;
    apply_freeze(&mut model, spec.regime, &active);

    let epochs = if spec.regime.is_finetune() {
        spec.train.finetune_epochs.unwrap_or(spec.train.epochs)
    } else {
        spec.train.epochs
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7a11_0c0d);
    let mut tune_curve = Vec::with_capacity(epochs);
    let mut train_loss = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..epochs {
        let lr = lr_at(spec.train.learning_rate, spec.train.lr_decay, spec.train.lr_step, epoch);
        let order = batch::shuffled(&patients, &mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(spec.train.batch_size) {
            let b = Batch::training(ds, chunk, &active, window, &mut rng);
            if b.labels.values().all(Vec::is_empty) {
                continue;
            }
            let mut tape = Tape::new();
            let (loss, _) = total_loss(&mut tape, &model, ds, &b, &active, spec.train.regression_weight, true, &mut rng)?;
            let l = tape.value(loss).item();
            if !l.is_finite() {
                return Err(MtlbError::Numeric(format!("{} loss is {l} at epoch {epoch}", spec.regime)));
            }
            let mut grads = tape.backward(loss)?.into_params();
            grads.retain(|id, _| !model.store.get(*id).frozen);
            if let Some(c) = spec.train.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut model.store, &grads, lr, spec.train.weight_decay)?;
            loss_sum += l;
            steps += 1;
        }
        train_loss.push(if steps > 0 { loss_sum / steps as f64 } else { f64::NAN });

        let score = match spec.train.selection {
            Selection::BestTune => {
                let rep = evaluate(&model, ds, &tune, &active, spec.train.eval_chunk)?;
                selection_score(&rep, spec.regime, &active)
            }
            Selection::Final => None,
        };
        tune_curve.push(score);
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
                best = Some((epoch, s, model.store.snapshot()));
            }
        }
        log::debug!("{} epoch {epoch}: loss {:.5} tune {:?}", spec.regime, train_loss[epoch], score);
    }

    let selected_epoch = select_epoch(&tune_curve, spec.train.selection);
    if let Some((e, _, snap)) = best {
        debug_assert_eq!(e, selected_epoch);
        model.store.restore(&snap);
    }
    let test = evaluate(&model, ds, &eval_batch(ds, &ds.indices(Split::Test), &active, window), &active, spec.train.eval_chunk)?;
    Ok(RunOutput {
        model,
        result: RunResult {
            regime: spec.regime,
            seed: spec.seed,
            train_patients: patients.len(),
            tune_curve,
            train_loss,
            selected_epoch,
            test,
        },
    })
}
