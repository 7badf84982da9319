//! Cohorts: records, splits, subsampling, training windows and model inputs.

pub mod calibration;
pub mod generate;
pub mod io;
pub mod record;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MtlbError, Result};
use crate::tables::NUM_CHANNELS;
use record::{PatientRecord, Sex};

pub use generate::{generate_cohort, GeneratorParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const NUM_TREATMENTS: usize = 3;
/// Per-hour model input: imputed values, measured mask, treatment flags.
pub const INPUT_DIM: usize = 2 * NUM_CHANNELS + NUM_TREATMENTS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Tune,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortDataset {
    pub schema_version: u32,
    pub records: Vec<PatientRecord>,
    pub split: Vec<Split>,
}

impl CohortDataset {
    pub fn new(records: Vec<PatientRecord>, split: Vec<Split>) -> Self {
        assert_eq!(records.len(), split.len());
        Self {
            schema_version: SCHEMA_VERSION,
            records,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices in `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split.iter().filter(|&&x| x == s).count();
        (count(Split::Train), count(Split::Tune), count(Split::Test))
    }
}

/// Percentages for train, tune and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub u32, pub u32, pub u32);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios(80, 10, 10)
    }
}

/// Patient-level split: train gets `floor(n·train%)`, the remainder is shared
/// between tune and test in proportion (tune rounds half up).
pub fn split_patients(n: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    let SplitRatios(a, b, c) = ratios;
    if a + b + c != 100 {
        return Err(MtlbError::Config(format!("split ratios {a}/{b}/{c} do not sum to 100")));
    }
    let train = n * a as usize / 100;
    let rest = n - train;
    let tune = if b + c == 0 {
        0
    } else {
        (rest as f64 * f64::from(b) / f64::from(b + c)).round() as usize
    };
    let test = rest - tune;
    if train == 0 || (b > 0 && tune == 0) || (c > 0 && test == 0) {
        return Err(MtlbError::Config(format!("{n} patients is too few for a {a}/{b}/{c} split")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5917_7a11));
    let mut split = vec![Split::Train; n];
    for &i in &order[train..train + tune] {
        split[i] = Split::Tune;
    }
    for &i in &order[train + tune..] {
        split[i] = Split::Test;
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SubsampleMode {
    None,
    FewShot { fraction: f64 },
    Imbalanced { female_removal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    #[serde(flatten)]
    pub mode: SubsampleMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SubsampleSpec {
    fn default() -> Self {
        Self {
            mode: SubsampleMode::None,
            seed: 0,
        }
    }
}

/// Few-shot fractions, in percent of the training split.
pub const FEW_SHOT_GRID: [f64; 13] = [0.1, 0.2, 0.3, 0.6, 1.0, 1.8, 3.2, 5.6, 10.0, 17.8, 31.6, 56.2, 100.0];

/// Reduces a list of training indices. Tune and test indices never pass
/// through here.
pub fn subsample(dataset: &CohortDataset, train: &[usize], spec: &SubsampleSpec) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5ab5_a3b1e);
    let out: Vec<usize> = match spec.mode {
        SubsampleMode::None => train.to_vec(),
        SubsampleMode::FewShot { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(MtlbError::Config(format!("few-shot fraction {fraction} outside (0,1]")));
            }
            let keep = (fraction * train.len() as f64).round() as usize;
            let mut pool = train.to_vec();
            pool.shuffle(&mut rng);
            pool.truncate(keep);
            pool.sort_unstable();
            pool
        }
        SubsampleMode::Imbalanced { female_removal } => {
            if !(female_removal > 0.0 && female_removal <= 1.0) {
                return Err(MtlbError::Config(format!("female removal fraction {female_removal} outside (0,1]")));
            }
            let mut females: Vec<usize> = train
                .iter()
                .copied()
                .filter(|&i| dataset.records[i].sex == Sex::F)
                .collect();
            let drop = (female_removal * females.len() as f64).round() as usize;
            females.shuffle(&mut rng);
            let removed: std::collections::HashSet<usize> = females[..drop].iter().copied().collect();
            train.iter().copied().filter(|i| !removed.contains(i)).collect()
        }
    };
    if out.is_empty() {
        return Err(MtlbError::Config("subsampling left an empty training set".into()));
    }
    Ok(out)
}

/// Hours `start..end` of a stay fed to the model; `start` is negative when
/// the window reaches before admission and is left-padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: i64,
    pub end: u32,
}

impl Window {
    /// The `len` hours ending at `anchor`.
    pub fn ending_at(anchor: u32, len: u32) -> Self {
        Window {
            start: i64::from(anchor) - i64::from(len),
            end: anchor,
        }
    }

    pub fn padded_hours(&self) -> u32 {
        (-self.start).max(0) as u32
    }
}

/// Uniform start among the valid starts; short stays are left-padded.
pub fn sample_training_window(stay: u32, window: u32, rng: &mut impl Rng) -> Window {
    if stay >= window {
        let start = rng.random_range(0..=stay - window);
        Window {
            start: i64::from(start),
            end: start + window,
        }
    } else {
        Window::ending_at(stay, window)
    }
}

/// Writes the `[len × INPUT_DIM]` input block for `window` into `out`.
/// Values are carried forward from the last measurement (else zero); padded
/// hours are all zero.
pub fn window_features(record: &PatientRecord, window: Window, out: &mut [f64]) {
    let len = (i64::from(window.end) - window.start) as usize;
    debug_assert_eq!(out.len(), len * INPUT_DIM);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut last = [0.0f64; NUM_CHANNELS];
    for h in 0..window.end.min(record.stay_hours()) {
        for (c, v) in record.hour_values(h) {
            last[c] = f64::from(v);
        }
        let row = i64::from(h) - window.start;
        if row < 0 {
            continue;
        }
        let o = &mut out[row as usize * INPUT_DIM..(row as usize + 1) * INPUT_DIM];
        o[..NUM_CHANNELS].copy_from_slice(&last);
        let mask = record.measured[h as usize];
        for c in 0..NUM_CHANNELS {
            o[NUM_CHANNELS + c] = (mask >> c & 1) as f64;
        }
        let t = record.treatments[h as usize];
        for k in 0..NUM_TREATMENTS {
            o[2 * NUM_CHANNELS + k] = f64::from(t >> k & 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::Outcomes;

    #[test]
    fn split_sizes_match_reference_counts() {
        let s = split_patients(21_876, SplitRatios::default(), 1).unwrap();
        let c = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((c(Split::Train), c(Split::Tune), c(Split::Test)), (17_500, 2_188, 2_188));
        let s = split_patients(10, SplitRatios::default(), 1).unwrap();
        assert_eq!((c_of(&s, Split::Train), c_of(&s, Split::Tune), c_of(&s, Split::Test)), (8, 1, 1));
        assert!(split_patients(3, SplitRatios::default(), 1).is_err());
        assert!(split_patients(100, SplitRatios(80, 10, 5), 1).is_err());
    }

    fn c_of(s: &[Split], k: Split) -> usize {
        s.iter().filter(|&&x| x == k).count()
    }

    #[test]
    fn windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_training_window(48, 48, &mut rng), Window { start: 0, end: 48 });
        }
        let w = sample_training_window(30, 48, &mut rng);
        assert_eq!(w.padded_hours(), 18);
        assert_eq!(w.end, 30);
    }

    #[test]
    fn locf_features_and_padding() {
        let mut hours = vec![[None; NUM_CHANNELS]; 4];
        hours[0][3] = Some(1.5);
        hours[2][3] = Some(-0.5);
        let r = PatientRecord::from_hours(
            0,
            Sex::F,
            &hours,
            vec![0, 1, 0, 4],
            vec![],
            Outcomes {
                death_hour: None,
                discharge_location: 1,
                acuity: 0,
                cmo_hour: None,
                dnr_hour: None,
                icd_bits: 0,
                readmit_days: None,
            },
        )
        .unwrap();
        let w = Window::ending_at(4, 6);
        let mut out = vec![9.0; 6 * INPUT_DIM];
        window_features(&r, w, &mut out);
        let row = |i: usize| &out[i * INPUT_DIM..(i + 1) * INPUT_DIM];
        assert!(row(0).iter().all(|&v| v == 0.0));
        assert!(row(1).iter().all(|&v| v == 0.0));
        assert_eq!(row(2)[3], 1.5);
        assert_eq!(row(2)[NUM_CHANNELS + 3], 1.0);
        assert_eq!(row(3)[3], 1.5);
        assert_eq!(row(3)[NUM_CHANNELS + 3], 0.0);
        assert_eq!(row(3)[2 * NUM_CHANNELS], 1.0);
        assert_eq!(row(4)[3], -0.5);
        assert_eq!(row(5)[2 * NUM_CHANNELS + 2], 1.0);
        // A window starting late still carries the value forward.
        let mut out = vec![0.0; 2 * INPUT_DIM];
        window_features(&r, Window { start: 1, end: 3 }, &mut out);
        assert_eq!(out[3], 1.5);
    }
}
