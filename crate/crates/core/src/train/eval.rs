//! Evaluation over fixed anchors of a split.

use std::collections::BTreeMap;

use mtlb_autodiff::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{fts_batch, modes_for, task_output, Batch, Item};
use crate::data::record::Sex;
use crate::data::CohortDataset;
use crate::error::Result;
use crate::metrics::{auroc, macro_mean, one_vs_rest, r_squared, regression_analog};
use crate::model::ModelBundle;
use crate::tasks::{sample_eval_points, Category, Label, LabelType, TaskId};

/// Anchors are drawn once per dataset so every run is scored on the same points.
pub const EVAL_SEED: u64 = 0x00e7_a15e;

/// Items of `patients` at their evaluation anchors, with labels for `tasks`.
pub fn eval_batch(ds: &CohortDataset, patients: &[usize], tasks: &[TaskId], window_hours: u32) -> Batch {
    let mut items = Vec::new();
    for &p in patients {
        let rec = &ds.records[p];
        for mode in modes_for(tasks) {
            for t in sample_eval_points(rec, mode, EVAL_SEED) {
                items.push(Item::at(ds, p, mode, t, window_hours));
            }
        }
    }
    Batch::from_items(ds, items, tasks)
}

/// Scores of one task on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    /// AUROC per label or class; `None` marks a degenerate label.
    pub per_label: Vec<Option<f64>>,
    pub macro_auroc: Option<f64>,
    #[serde(default)]
    pub r_squared: Option<f64>,
    pub n: usize,
    #[serde(default)]
    pub male: Option<f64>,
    #[serde(default)]
    pub female: Option<f64>,
}

impl TaskMetrics {
    /// AUROC, or `2^(R²−1)` for the regression task.
    pub fn score(&self) -> Option<f64> {
        self.macro_auroc.or(self.r_squared.map(regression_analog))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<TaskId, TaskMetrics>,
}

impl EvalReport {
    /// Mean of the macro AUROCs of the category's tasks.
    pub fn category_score(&self, cat: Category) -> Option<f64> {
        let v: Vec<Option<f64>> = self
            .tasks
            .iter()
            .filter(|(t, _)| t.category() == cat)
            .map(|(_, m)| m.macro_auroc)
            .collect();
        if v.is_empty() {
            None
        } else {
            macro_mean(&v)
        }
    }

    /// Mean task score over `tasks` (regression through its analog).
    pub fn objective(&self, tasks: &[TaskId]) -> Option<f64> {
        let v: Vec<Option<f64>> = tasks.iter().map(|t| self.tasks.get(t).and_then(TaskMetrics::score)).collect();
        macro_mean(&v)
    }

    pub fn category_subgroup(&self, cat: Category, male: bool) -> Option<f64> {
        let v: Vec<Option<f64>> = self
            .tasks
            .iter()
            .filter(|(t, _)| t.category() == cat)
            .map(|(_, m)| if male { m.male } else { m.female })
            .collect();
        if v.is_empty() {
            None
        } else {
            macro_mean(&v)
        }
    }
}

#[derive(Default)]
struct Acc {
    /// Row-major `[n × k]` scores.
    scores: Vec<f64>,
    /// Binary targets per score column (multilabel / binary).
    bits: Vec<bool>,
    classes: Vec<usize>,
    male: Vec<bool>,
    reg_pred: Vec<f64>,
    reg_true: Vec<f64>,
}

fn softmax_rows(v: &mut [f64], k: usize) {
    for row in v.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - m).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= z);
    }
}

/// Multilabel-style AUROCs of score columns against bit columns, restricted
/// to rows where `keep` holds.
fn column_aurocs(scores: &[f64], bits: &[bool], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let (s, l): (Vec<f64>, Vec<bool>) = scores
                .chunks(k)
                .zip(bits.chunks(k))
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, (sr, br))| (sr[c], br[c]))
                .unzip();
            auroc(&s, &l)
        })
        .collect()
}

fn class_aurocs(scores: &[f64], classes: &[usize], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Option<f64>> {
    let (s, c): (Vec<&[f64]>, Vec<usize>) = scores
        .chunks(k)
        .zip(classes)
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, (r, &c))| (r, c))
        .unzip();
    let flat: Vec<f64> = s.concat();
    one_vs_rest(&flat, k, &c)
}

/// Scores every task of `batch` in chunks of `chunk` items.
pub fn evaluate(model: &ModelBundle, ds: &CohortDataset, batch: &Batch, tasks: &[TaskId], chunk: usize) -> Result<EvalReport> {
    let mut accs: BTreeMap<TaskId, Acc> = tasks.iter().map(|&t| (t, Acc::default())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < batch.items.len() {
        let end = (start + chunk).min(batch.items.len());
        let sub = Batch {
            items: batch.items[start..end].to_vec(),
            labels: batch
                .labels
                .iter()
                .map(|(&t, ls)| {
                    let lo = ls.partition_point(|(r, _)| *r < start);
                    let hi = ls.partition_point(|(r, _)| *r < end);
                    (t, ls[lo..hi].iter().map(|(r, l)| (r - start, l.clone())).collect())
                })
                .collect(),
        };
        let x = sub.input(ds, model.config.window_hours);
        let mut tape = Tape::new();
        let enc = model.encode(&mut tape, &x, false, &mut rng)?;
        for &t in tasks {
            let labels = sub.labels.get(&t).map(Vec::as_slice).unwrap_or(&[]);
            if labels.is_empty() {
                continue;
            }
            let out = task_output(&mut tape, model, t, enc, labels)?;
            let mut v = tape.value(out).data().to_vec();
            let acc = accs.get_mut(&t).expect("task listed");
            let male = |row: usize| ds.records[sub.items[row].record].sex == Sex::M;
            match t.spec().label_type {
                LabelType::Binary | LabelType::Multilabel(_) => {
                    // Logits rank exactly like probabilities and never saturate.
                    acc.scores.extend(v);
                    for (row, l) in labels {
                        match l {
                            Label::Binary(b) => acc.bits.push(*b),
                            Label::Multilabel(bits) => acc.bits.extend(bits),
                            _ => unreachable!(),
                        }
                        acc.male.push(male(*row));
                    }
                }
                LabelType::Multiclass(k) => {
                    softmax_rows(&mut v, k);
                    acc.scores.extend(v);
                    for (row, l) in labels {
                        let Label::Class(c) = l else { unreachable!() };
                        acc.classes.push(*c);
                        acc.male.push(male(*row));
                    }
                }
                LabelType::SeqMulticlass(k) => {
                    softmax_rows(&mut v, k);
                    let fb = fts_batch(labels)?;
                    // Step-major rows; keep the ones carrying a target.
                    for (i, row) in v.chunks(k).enumerate() {
                        if fb.mask[i] > 0.0 {
                            acc.scores.extend_from_slice(row);
                            acc.classes.push(fb.targets[i]);
                            acc.male.push(male(labels[i % fb.batch].0));
                        }
                    }
                }
                LabelType::Regression(k) => {
                    for ((_, l), pr) in labels.iter().zip(v.chunks(k)) {
                        let Label::Regression(ys) = l else { unreachable!() };
                        for (&(y, ok), &p) in ys.iter().zip(pr) {
                            if ok {
                                acc.reg_pred.push(p);
                                acc.reg_true.push(f64::from(y));
                            }
                        }
                    }
                }
            }
        }
        start = end;
    }

    let mut report = EvalReport::default();
    for (&t, acc) in &accs {
        let k = t.spec().label_type.head_width();
        let m = match t.spec().label_type {
            LabelType::Binary | LabelType::Multilabel(_) => {
                let all = column_aurocs(&acc.scores, &acc.bits, k, |_| true);
                let male = macro_mean(&column_aurocs(&acc.scores, &acc.bits, k, |i| acc.male[i]));
                let female = macro_mean(&column_aurocs(&acc.scores, &acc.bits, k, |i| !acc.male[i]));
                TaskMetrics {
                    macro_auroc: macro_mean(&all),
                    per_label: all,
                    r_squared: None,
                    n: acc.scores.len() / k,
                    male,
                    female,
                }
            }
            LabelType::Multiclass(_) | LabelType::SeqMulticlass(_) => {
                let all = class_aurocs(&acc.scores, &acc.classes, k, |_| true);
                let male = macro_mean(&class_aurocs(&acc.scores, &acc.classes, k, |i| acc.male[i]));
                let female = macro_mean(&class_aurocs(&acc.scores, &acc.classes, k, |i| !acc.male[i]));
                TaskMetrics {
                    macro_auroc: macro_mean(&all),
                    per_label: all,
                    r_squared: None,
                    n: acc.classes.len(),
                    male,
                    female,
                }
            }
            LabelType::Regression(_) => TaskMetrics {
                per_label: Vec::new(),
                macro_auroc: None,
                r_squared: r_squared(&acc.reg_pred, &acc.reg_true),
                n: acc.reg_true.len(),
                male: None,
                female: None,
            },
        };
        report.tasks.insert(t, m);
    }
    Ok(report)
}
