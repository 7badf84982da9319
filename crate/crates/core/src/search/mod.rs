//! Hyperparameter search: the space, a TPE suggester and the sweep loop.

pub mod space;
pub mod tpe;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CohortDataset, SubsampleSpec};
use crate::error::{MtlbError, Result};
use crate::tasks::TaskId;
use crate::train::{run_regime, Regime, RunSpec};

pub use space::{preset, to_configs, Dist, Point, SearchSpace, Value, PRESETS};
pub use tpe::tpe_suggest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Tpe,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub point: Point,
    /// Set only when the run finished.
    pub objective: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Runs one configuration and returns its tune objective.
pub trait TrialRunner {
    fn run(&mut self, point: &Point, seed: u64) -> Result<f64>;
}

impl<F: FnMut(&Point, u64) -> Result<f64>> TrialRunner for F {
    fn run(&mut self, point: &Point, seed: u64) -> Result<f64> {
        self(point, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub trials: Vec<Trial>,
    /// Index of the best finished trial per architecture.
    pub best: BTreeMap<String, usize>,
}

impl SweepOutcome {
    pub fn best_objective(&self) -> Option<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.objective)
            .fold(None, |m, y| Some(m.map_or(y, |m: f64| m.max(y))))
    }
}

/// Seed handed to trial `i` of a sweep started with `seed`.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64)
}

/// Runs `budget` trials one after another. Failed trials are recorded and
/// skipped by the suggester. `on_trial` sees each trial as it finishes.
pub fn run_sweep(
    space: &SearchSpace,
    budget: usize,
    strategy: Strategy,
    seed: u64,
    runner: &mut dyn TrialRunner,
    mut on_trial: impl FnMut(&Trial),
) -> Result<SweepOutcome> {
    if budget == 0 {
        return Err(MtlbError::Config("sweep budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    let mut history: Vec<(Point, f64)> = Vec::new();
    for index in 0..budget {
        let point = match strategy {
            Strategy::Tpe => tpe_suggest(space, &history, &mut rng),
            Strategy::Random => space.sample(&mut rng),
        };
        let tseed = trial_seed(seed, index);
        let (objective, error) = match space.check(&point).and_then(|_| runner.run(&point, tseed)) {
            Ok(y) if y.is_finite() => (Some(y), None),
            Ok(y) => (None, Some(format!("objective is {y}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(y) = objective {
            history.push((point.clone(), y));
        }
        let t = Trial {
            index,
            seed: tseed,
            point,
            objective,
            error,
        };
        on_trial(&t);
        trials.push(t);
    }
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for t in &trials {
        let (Some(y), Ok(arch)) = (t.objective, space::point_arch(&t.point)) else {
            continue;
        };
        let slot = best.entry(space::arch_name(arch).to_string()).or_insert(t.index);
        if trials[*slot].objective.is_some_and(|b| y > b) {
            *slot = t.index;
        }
    }
    Ok(SweepOutcome { trials, best })
}

/// Trial runner that trains the full multi-task model and scores the
/// selected epoch on the tune split.
pub struct MtRunner<'a> {
    pub dataset: &'a CohortDataset,
    pub suite: &'a [TaskId],
}

impl TrialRunner for MtRunner<'_> {
    fn run(&mut self, point: &Point, seed: u64) -> Result<f64> {
        let (encoder, train) = to_configs(point)?;
        let out = run_regime(&RunSpec {
            dataset: self.dataset,
            suite: self.suite,
            encoder: &encoder,
            train: &train,
            regime: Regime::Mt,
            seed,
            subsample: SubsampleSpec::default(),
            pretrained: None,
        })?;
        out.result
            .tune_curve
            .get(out.result.selected_epoch)
            .copied()
            .flatten()
            .ok_or_else(|| MtlbError::Numeric("no tune score for the selected epoch".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;

    fn space() -> SearchSpace {
        SearchSpace::standard(&[EncoderKind::LinearConcat, EncoderKind::Gru]).unwrap()
    }

    fn lr_objective(p: &Point, _: u64) -> Result<f64> {
        Ok(-(p["learning_rate"].as_f64().unwrap().ln() + 7.5).abs())
    }

    #[test]
    fn single_trial_is_the_best() {
        let out = run_sweep(&space(), 1, Strategy::Tpe, 3, &mut lr_objective, |_| {}).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best.values().copied().collect::<Vec<_>>(), vec![0]);
        assert!(run_sweep(&space(), 0, Strategy::Tpe, 3, &mut lr_objective, |_| {}).is_err());
    }

    #[test]
    fn running_best_never_drops_with_budget() {
        let mut prev = f64::NEG_INFINITY;
        for budget in [1, 5, 12, 20] {
            let b = run_sweep(&space(), budget, Strategy::Tpe, 9, &mut lr_objective, |_| {})
                .unwrap()
                .best_objective()
                .unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let mut n = 0;
        let mut flaky = |p: &Point, s: u64| {
            n += 1;
            if n % 3 == 0 {
                Err(MtlbError::Numeric("boom".into()))
            } else {
                lr_objective(p, s)
            }
        };
        let out = run_sweep(&space(), 15, Strategy::Tpe, 1, &mut flaky, |_| {}).unwrap();
        assert_eq!(out.trials.iter().filter(|t| t.error.is_some()).count(), 5);
        for (_, &i) in &out.best {
            assert!(out.trials[i].objective.is_some());
        }
    }

    #[test]
    fn same_seed_same_sweep() {
        let a = run_sweep(&space(), 14, Strategy::Tpe, 4, &mut lr_objective, |_| {}).unwrap();
        let b = run_sweep(&space(), 14, Strategy::Tpe, 4, &mut lr_objective, |_| {}).unwrap();
        assert_eq!(a, b);
    }
}
