//! Training and evaluation batches: windows, inputs and per-task labels.

use std::collections::BTreeMap;

use mtlb_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_training_window, window_features, CohortDataset, Window, INPUT_DIM};
use crate::error::{MtlbError, Result};
use crate::model::{FtsBatch, ModelBundle};
use crate::tasks::{label_for, Label, LabelType, Mode, TaskId, STATIC_ANCHOR};

/// One encoded window: a patient seen up to `anchor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Item {
    pub record: usize,
    pub mode: Mode,
    pub window: Window,
    pub anchor: u32,
}

impl Item {
    /// The window a task in `mode` reads when the patient is observed up to `anchor`.
    pub fn at(ds: &CohortDataset, record: usize, mode: Mode, anchor: u32, window_hours: u32) -> Self {
        let end = match mode {
            Mode::Dynamic => anchor,
            Mode::Static => STATIC_ANCHOR,
            Mode::Terminal => ds.records[record].stay_hours(),
        };
        Item {
            record,
            mode,
            window: Window::ending_at(end, window_hours),
            anchor: end,
        }
    }
}

/// Modes needed to serve `tasks`, in a fixed order.
pub fn modes_for(tasks: &[TaskId]) -> Vec<Mode> {
    [Mode::Dynamic, Mode::Static, Mode::Terminal]
        .into_iter()
        .filter(|m| tasks.iter().any(|t| t.mode() == *m))
        .collect()
}

/// Items plus the valid labels of every task, as `(row, label)` pairs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub items: Vec<Item>,
    pub labels: BTreeMap<TaskId, Vec<(usize, Label)>>,
}

impl Batch {
    pub fn from_items(ds: &CohortDataset, items: Vec<Item>, tasks: &[TaskId]) -> Self {
        let mut labels: BTreeMap<TaskId, Vec<(usize, Label)>> = tasks.iter().map(|&t| (t, Vec::new())).collect();
        for (row, it) in items.iter().enumerate() {
            let rec = &ds.records[it.record];
            for &t in tasks {
                if t.mode() != it.mode {
                    continue;
                }
                if let Some(l) = label_for(rec, t, it.anchor) {
                    labels.get_mut(&t).expect("task listed").push((row, l));
                }
            }
        }
        Batch { items, labels }
    }

    /// One randomly placed window per patient and mode.
    pub fn training(ds: &CohortDataset, patients: &[usize], tasks: &[TaskId], window_hours: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut items = Vec::new();
        for mode in modes_for(tasks) {
            for &p in patients {
                let item = match mode {
                    Mode::Dynamic => {
                        let w = sample_training_window(ds.records[p].stay_hours(), window_hours, rng);
                        Item {
                            record: p,
                            mode,
                            window: w,
                            anchor: w.end,
                        }
                    }
                    _ => Item::at(ds, p, mode, 0, window_hours),
                };
                items.push(item);
            }
        }
        Self::from_items(ds, items, tasks)
    }

    /// `[n × T × INPUT_DIM]` model input for the items.
    pub fn input(&self, ds: &CohortDataset, window_hours: u32) -> Tensor {
        let t = window_hours as usize;
        let mut data = vec![0.0; self.items.len() * t * INPUT_DIM];
        for (it, chunk) in self.items.iter().zip(data.chunks_mut(t * INPUT_DIM)) {
            window_features(&ds.records[it.record], it.window, chunk);
        }
        Tensor::new(vec![self.items.len(), t, INPUT_DIM], data).expect("sized above")
    }
}

fn rows_of(tape: &mut Tape, encoded: Var, rows: &[usize]) -> Result<Var> {
    let n = tape.shape(encoded)[0];
    if rows.len() == n && rows.iter().enumerate().all(|(i, &r)| i == r) {
        return Ok(encoded);
    }
    Ok(tape.gather_rows(encoded, rows)?)
}

/// Decoder output for one task over its labelled rows: logits for
/// classification heads, predictions for regression, step logits for FTS.
pub fn task_output(tape: &mut Tape, model: &ModelBundle, task: TaskId, encoded: Var, labels: &[(usize, Label)]) -> Result<Var> {
    let rows: Vec<usize> = labels.iter().map(|(r, _)| *r).collect();
    let enc = rows_of(tape, encoded, &rows)?;
    if task == TaskId::Fts {
        let fb = fts_batch(labels)?;
        model.fts(tape, enc, &fb)
    } else {
        model.head(tape, task, enc)
    }
}

pub(crate) fn fts_batch(labels: &[(usize, Label)]) -> Result<FtsBatch> {
    let seqs: Vec<Option<&[u8]>> = labels
        .iter()
        .map(|(_, l)| match l {
            Label::Sequence(s) => Some(s.as_slice()),
            _ => None,
        })
        .collect();
    FtsBatch::new(&seqs)
}

/// Masked mean loss of one task over its labelled rows, or `None` when the
/// batch holds no label for it.
pub fn task_loss(tape: &mut Tape, model: &ModelBundle, task: TaskId, encoded: Var, labels: &[(usize, Label)]) -> Result<Option<Var>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let out = task_output(tape, model, task, encoded, labels)?;
    let n = labels.len();
    let loss = match task.spec().label_type {
        LabelType::Binary => {
            let t: Vec<f64> = labels
                .iter()
                .map(|(_, l)| match l {
                    Label::Binary(b) => f64::from(u8::from(*b)),
                    _ => unreachable!("binary task"),
                })
                .collect();
            tape.bce_with_logits(out, &Tensor::new(vec![n, 1], t)?, &Tensor::ones(&[n, 1]))?
        }
        LabelType::Multilabel(k) => {
            let mut t = Vec::with_capacity(n * k);
            for (_, l) in labels {
                match l {
                    Label::Multilabel(bits) => t.extend(bits.iter().map(|&b| f64::from(u8::from(b)))),
                    _ => unreachable!("multilabel task"),
                }
            }
            tape.bce_with_logits(out, &Tensor::new(vec![n, k], t)?, &Tensor::ones(&[n, k]))?
        }
        LabelType::Multiclass(_) => {
            let cls: Vec<usize> = labels
                .iter()
                .map(|(_, l)| match l {
                    Label::Class(c) => *c,
                    _ => unreachable!("multiclass task"),
                })
                .collect();
            tape.cross_entropy(out, &cls, &vec![1.0; n])?
        }
        LabelType::Regression(k) => {
            let mut t = Vec::with_capacity(n * k);
            let mut m = Vec::with_capacity(n * k);
            for (_, l) in labels {
                match l {
                    Label::Regression(v) => {
                        for &(y, ok) in v {
                            t.push(f64::from(y));
                            m.push(f64::from(u8::from(ok)));
                        }
                    }
                    _ => unreachable!("regression task"),
                }
            }
            tape.mse(out, &Tensor::new(vec![n, k], t)?, &Tensor::new(vec![n, k], m)?)?
        }
        LabelType::SeqMulticlass(_) => {
            let fb = fts_batch(labels)?;
            tape.cross_entropy(out, &fb.targets, &fb.mask)?
        }
    };
    Ok(Some(loss))
}

/// Sum of per-task losses over `active`; the regression term is scaled by
/// `regression_weight`. Returns the total and each task's unscaled loss node.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    model: &ModelBundle,
    ds: &CohortDataset,
    batch: &Batch,
    active: &[TaskId],
    regression_weight: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Vec<(TaskId, Var)>)> {
    if active.is_empty() {
        return Err(MtlbError::Usage("total loss over an empty task set".into()));
    }
    let x = batch.input(ds, model.config.window_hours);
    let enc = model.encode(tape, &x, train, rng)?;
    let mut parts = Vec::new();
    let mut total: Option<Var> = None;
    for &t in active {
        let labels = batch.labels.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        let Some(l) = task_loss(tape, model, t, enc, labels)? else { continue };
        parts.push((t, l));
        let term = if matches!(t.spec().label_type, LabelType::Regression(_)) {
            tape.scale(l, regression_weight)
        } else {
            l
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok((total, parts))
}

/// Draws a uniformly shuffled copy of `xs`.
pub(crate) fn shuffled(xs: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v = xs.to_vec();
    v.shuffle(rng);
    v
}
