//! Task battery: specs, label derivation and evaluation anchors.
//!
//! Hours are counted from ICU admission. An anchor `t` means hours `0..t`
//! have been observed, so hour `t` is the first unseen hour.

use std::fmt;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::record::PatientRecord;
use crate::error::{MtlbError, Result};
use crate::tables::{ACUITY_CLASSES, CHANNELS, DISCHARGE_LOCATIONS, ICD_CATEGORIES, NO_DISCHARGE, NUM_CHANNELS};

/// Static tasks look at the first 24 hours.
pub const STATIC_ANCHOR: u32 = 24;
pub const STATIC_GAP: u32 = 12;
/// Earliest hour at which rolling and autoregressive tasks are evaluated.
pub const MIN_ROLLING_ANCHOR: u32 = 12;
pub const EVAL_POINTS_PER_PATIENT: usize = 10;
pub const LOS_THRESHOLD_HOURS: u32 = 72;
pub const READMIT_WINDOW_DAYS: u32 = 30;
/// Treatment-set tokens: 8 subsets of the three treatments, then end-of-sequence.
pub const FTS_VOCAB: usize = 9;
pub const FTS_EOS: u8 = 8;
/// Longest target sequence; longer futures are cut and carry no end token.
pub const FTS_MAX_TOKENS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Category {
    Mor,
    Cmo,
    Dnr,
    Dis,
    Icd,
    Los,
    Rea,
    Acu,
    Wbm,
    Fts,
    NextReg,
}

impl Category {
    /// The ten categories with reported scores, in report order.
    pub const REPORTED: [Category; 10] = [
        Category::Mor,
        Category::Cmo,
        Category::Dnr,
        Category::Dis,
        Category::Icd,
        Category::Los,
        Category::Rea,
        Category::Acu,
        Category::Wbm,
        Category::Fts,
    ];

    pub fn abbr(self) -> &'static str {
        match self {
            Category::Mor => "MOR",
            Category::Cmo => "CMO",
            Category::Dnr => "DNR",
            Category::Dis => "DIS",
            Category::Icd => "ICD",
            Category::Los => "LOS",
            Category::Rea => "REA",
            Category::Acu => "ACU",
            Category::Wbm => "WBM",
            Category::Fts => "FTS",
            Category::NextReg => "NEXT-REG",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Category::REPORTED
            .iter()
            .chain(std::iter::once(&Category::NextReg))
            .copied()
            .find(|c| c.abbr() == up)
            .ok_or_else(|| MtlbError::Config(format!("unknown task category {s:?}")))
    }

    /// The next-hour regression trains alongside the will-be-measured task and
    /// is omitted together with it.
    pub fn group(self) -> Category {
        match self {
            Category::NextReg => Category::Wbm,
            c => c,
        }
    }

    pub fn is_reported(self) -> bool {
        self != Category::NextReg
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbr())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    Mor24,
    Mor48,
    Cmo24,
    Cmo48,
    Dnr24,
    Dnr48,
    Dis24,
    Dis48,
    Icd,
    Los,
    Rea,
    Acu,
    Wbm,
    NextReg,
    Fts,
}

impl TaskId {
    pub const ALL: [TaskId; 15] = [
        TaskId::Mor24,
        TaskId::Mor48,
        TaskId::Cmo24,
        TaskId::Cmo48,
        TaskId::Dnr24,
        TaskId::Dnr48,
        TaskId::Dis24,
        TaskId::Dis48,
        TaskId::Icd,
        TaskId::Los,
        TaskId::Rea,
        TaskId::Acu,
        TaskId::Wbm,
        TaskId::NextReg,
        TaskId::Fts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Mor24 => "MOR24",
            TaskId::Mor48 => "MOR48",
            TaskId::Cmo24 => "CMO24",
            TaskId::Cmo48 => "CMO48",
            TaskId::Dnr24 => "DNR24",
            TaskId::Dnr48 => "DNR48",
            TaskId::Dis24 => "DIS24",
            TaskId::Dis48 => "DIS48",
            TaskId::Icd => "ICD",
            TaskId::Los => "LOS",
            TaskId::Rea => "REA",
            TaskId::Acu => "ACU",
            TaskId::Wbm => "WBM",
            TaskId::NextReg => "NEXT-REG",
            TaskId::Fts => "FTS",
        }
    }

    pub fn spec(self) -> &'static TaskSpec {
        static SPECS: OnceLock<Vec<TaskSpec>> = OnceLock::new();
        &SPECS.get_or_init(|| TaskId::ALL.iter().map(|&t| TaskSpec::of(t)).collect())[self as usize]
    }

    pub fn category(self) -> Category {
        match self {
            TaskId::Mor24 | TaskId::Mor48 => Category::Mor,
            TaskId::Cmo24 | TaskId::Cmo48 => Category::Cmo,
            TaskId::Dnr24 | TaskId::Dnr48 => Category::Dnr,
            TaskId::Dis24 | TaskId::Dis48 => Category::Dis,
            TaskId::Icd => Category::Icd,
            TaskId::Los => Category::Los,
            TaskId::Rea => Category::Rea,
            TaskId::Acu => Category::Acu,
            TaskId::Wbm => Category::Wbm,
            TaskId::NextReg => Category::NextReg,
            TaskId::Fts => Category::Fts,
        }
    }

    pub fn mode(self) -> Mode {
        match self.category() {
            Category::Icd | Category::Los | Category::Acu => Mode::Static,
            Category::Rea => Mode::Terminal,
            _ => Mode::Dynamic,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Temporal {
    Rolling,
    Static,
    Terminal,
    Autoregressive,
}

/// Which input window a task reads. Rolling and autoregressive tasks share
/// the same anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Dynamic,
    Static,
    Terminal,
}

impl Temporal {
    pub fn mode(self) -> Mode {
        match self {
            Temporal::Rolling | Temporal::Autoregressive => Mode::Dynamic,
            Temporal::Static => Mode::Static,
            Temporal::Terminal => Mode::Terminal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelType {
    Binary,
    Multilabel(usize),
    Multiclass(usize),
    SeqMulticlass(usize),
    Regression(usize),
}

impl LabelType {
    /// Width of the affine head that scores this task.
    pub fn head_width(self) -> usize {
        match self {
            LabelType::Binary => 1,
            LabelType::Multilabel(n) | LabelType::Multiclass(n) | LabelType::SeqMulticlass(n) | LabelType::Regression(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RollingEvent {
    Death,
    Cmo,
    Dnr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub category: Category,
    pub temporal: Temporal,
    pub gap_hours: Option<u32>,
    pub horizon_hours: Option<u32>,
    pub label_type: LabelType,
    pub label_space: Vec<String>,
}

impl TaskSpec {
    pub fn of(id: TaskId) -> Self {
        use TaskId::*;
        let binary = || vec!["negative".to_string(), "positive".to_string()];
        let (category, temporal, gap, horizon, label_type, label_space) = match id {
            Mor24 | Mor48 | Cmo24 | Cmo48 | Dnr24 | Dnr48 => {
                let (g, w) = if matches!(id, Mor24 | Cmo24 | Dnr24) { (2, 24) } else { (6, 48) };
                let cat = match id {
                    Mor24 | Mor48 => Category::Mor,
                    Cmo24 | Cmo48 => Category::Cmo,
                    _ => Category::Dnr,
                };
                (cat, Temporal::Rolling, Some(g), Some(w), LabelType::Binary, binary())
            }
            Dis24 | Dis48 => {
                let (g, w) = if id == Dis24 { (2, 24) } else { (6, 48) };
                let names = DISCHARGE_LOCATIONS.iter().map(|d| d.0.to_string()).collect();
                (Category::Dis, Temporal::Rolling, Some(g), Some(w), LabelType::Multiclass(DISCHARGE_LOCATIONS.len()), names)
            }
            Icd => (
                Category::Icd,
                Temporal::Static,
                Some(STATIC_GAP),
                None,
                LabelType::Multilabel(ICD_CATEGORIES.len()),
                ICD_CATEGORIES.iter().map(|c| c.0.to_string()).collect(),
            ),
            Los => (Category::Los, Temporal::Static, Some(STATIC_GAP), None, LabelType::Binary, binary()),
            Rea => (Category::Rea, Temporal::Terminal, None, None, LabelType::Binary, binary()),
            Acu => (
                Category::Acu,
                Temporal::Static,
                Some(STATIC_GAP),
                None,
                LabelType::Multiclass(ACUITY_CLASSES.len()),
                ACUITY_CLASSES.iter().map(|c| c.0.to_string()).collect(),
            ),
            Wbm => (
                Category::Wbm,
                Temporal::Autoregressive,
                Some(0),
                Some(1),
                LabelType::Multilabel(NUM_CHANNELS),
                CHANNELS.iter().map(|c| c.0.to_string()).collect(),
            ),
            NextReg => (
                Category::NextReg,
                Temporal::Autoregressive,
                Some(0),
                Some(1),
                LabelType::Regression(NUM_CHANNELS),
                CHANNELS.iter().map(|c| c.0.to_string()).collect(),
            ),
            Fts => (
                Category::Fts,
                Temporal::Autoregressive,
                None,
                None,
                LabelType::SeqMulticlass(FTS_VOCAB),
                (0..FTS_VOCAB as u8).map(token_name).collect(),
            ),
        };
        TaskSpec {
            id,
            category,
            temporal,
            gap_hours: gap,
            horizon_hours: horizon,
            label_type,
            label_space,
        }
    }

    pub fn rolling_event(&self) -> Option<RollingEvent> {
        match self.category {
            Category::Mor => Some(RollingEvent::Death),
            Category::Cmo => Some(RollingEvent::Cmo),
            Category::Dnr => Some(RollingEvent::Dnr),
            _ => None,
        }
    }
}

pub fn token_name(token: u8) -> String {
    if token == FTS_EOS {
        return "EOS".into();
    }
    let parts: Vec<&str> = ["vent", "vaso", "bolus"]
        .iter()
        .enumerate()
        .filter(|(k, _)| token >> k & 1 == 1)
        .map(|(_, n)| *n)
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

/// Tasks belonging to the given categories, in canonical order.
pub fn tasks_for(categories: &[Category]) -> Vec<TaskId> {
    TaskId::ALL
        .iter()
        .copied()
        .filter(|t| categories.contains(&t.category().group()))
        .collect()
}

/// Label for one task at one anchor. `None` stands for a masked label.
#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Binary(bool),
    Multilabel(Vec<bool>),
    Class(usize),
    /// Next-hour values with a per-channel measured flag.
    Regression(Vec<(f32, bool)>),
    Sequence(Vec<u8>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventLabel {
    Positive,
    Negative,
    Masked,
}

fn check_anchor(record: &PatientRecord, t: u32) -> Result<()> {
    if t >= record.stay_hours() {
        return Err(MtlbError::Usage(format!(
            "anchor {t} is past discharge (stay of {}h) for patient {}",
            record.stay_hours(),
            record.id
        )));
    }
    Ok(())
}

/// Event label on the interval `(t+g, t+g+w]`, masked when the event falls
/// inside the gap or, for care orders, when the order already exists.
pub fn label_rolling_event(record: &PatientRecord, event: RollingEvent, t: u32, gap: u32, horizon: u32) -> Result<EventLabel> {
    check_anchor(record, t)?;
    let o = &record.outcomes;
    let hour = match event {
        RollingEvent::Death => o.death_hour,
        RollingEvent::Cmo => o.cmo_hour,
        RollingEvent::Dnr => o.dnr_hour,
    };
    Ok(classify_event(hour, t, gap, horizon, event != RollingEvent::Death))
}

pub fn classify_event(hour: Option<u32>, t: u32, gap: u32, horizon: u32, mask_if_present: bool) -> EventLabel {
    match hour {
        None => EventLabel::Negative,
        Some(e) if e <= t => {
            if mask_if_present {
                EventLabel::Masked
            } else {
                EventLabel::Negative
            }
        }
        Some(e) if e <= t + gap => EventLabel::Masked,
        Some(e) if e <= t + gap + horizon => EventLabel::Positive,
        Some(_) => EventLabel::Negative,
    }
}

/// Discharge destination within `(t+g, t+g+w]`, else the no-discharge class.
pub fn label_discharge(record: &PatientRecord, t: u32, gap: u32, horizon: u32) -> Result<Option<usize>> {
    check_anchor(record, t)?;
    Ok(match record.discharge_event() {
        Some((h, _)) if h <= t + gap => None,
        Some((h, loc)) if h <= t + gap + horizon => Some(loc),
        _ => Some(NO_DISCHARGE),
    })
}

pub struct StaticLabels {
    pub icd: Vec<bool>,
    pub los: bool,
    pub acu: usize,
}

/// Static labels, or `None` when the stay is too short for the first-day window plus gap.
pub fn label_static(record: &PatientRecord) -> Option<StaticLabels> {
    if record.stay_hours() <= STATIC_ANCHOR + STATIC_GAP {
        return None;
    }
    let o = &record.outcomes;
    Some(StaticLabels {
        icd: (0..ICD_CATEGORIES.len()).map(|k| o.icd_bits >> k & 1 == 1).collect(),
        los: record.stay_hours() >= LOS_THRESHOLD_HOURS,
        acu: o.acuity,
    })
}

pub fn label_readmission(record: &PatientRecord) -> bool {
    record.readmitted_within_30d()
}

/// Which channels are measured at hour `t`, and their values.
pub fn label_wbm(record: &PatientRecord, t: u32) -> Result<(Vec<bool>, Vec<(f32, bool)>)> {
    check_anchor(record, t)?;
    let bits = (0..NUM_CHANNELS).map(|c| record.is_measured(t, c)).collect();
    let mut reg = vec![(0.0, false); NUM_CHANNELS];
    for (c, v) in record.hour_values(t) {
        reg[c] = (v, true);
    }
    Ok((bits, reg))
}

/// Treatment sets from hour `t` to discharge with consecutive repeats removed.
pub fn label_fts(record: &PatientRecord, t: u32) -> Result<Vec<u8>> {
    if t > record.stay_hours() {
        return Err(MtlbError::Usage(format!("anchor {t} is past discharge for patient {}", record.id)));
    }
    let mut out: Vec<u8> = Vec::new();
    for &tok in &record.treatments[t as usize..] {
        if out.last() != Some(&tok) {
            if out.len() == FTS_MAX_TOKENS {
                return Ok(out);
            }
            out.push(tok);
        }
    }
    out.push(FTS_EOS);
    Ok(out)
}

/// All labels of `task` at anchor `t`, or `None` when masked. For static and
/// terminal tasks `t` is ignored.
pub fn label_for(record: &PatientRecord, task: TaskId, t: u32) -> Option<Label> {
    let spec = task.spec();
    let stay = record.stay_hours();
    match spec.temporal {
        Temporal::Rolling => {
            if t >= stay {
                return None;
            }
            let (g, w) = (spec.gap_hours.unwrap_or(0), spec.horizon_hours.unwrap_or(0));
            if let Some(ev) = spec.rolling_event() {
                match label_rolling_event(record, ev, t, g, w).ok()? {
                    EventLabel::Positive => Some(Label::Binary(true)),
                    EventLabel::Negative => Some(Label::Binary(false)),
                    EventLabel::Masked => None,
                }
            } else {
                label_discharge(record, t, g, w).ok()?.map(Label::Class)
            }
        }
        Temporal::Static => {
            let s = label_static(record)?;
            Some(match task {
                TaskId::Icd => Label::Multilabel(s.icd),
                TaskId::Los => Label::Binary(s.los),
                _ => Label::Class(s.acu),
            })
        }
        Temporal::Terminal => Some(Label::Binary(label_readmission(record))),
        Temporal::Autoregressive => match task {
            TaskId::Fts => label_fts(record, t).ok().map(Label::Sequence),
            _ => {
                let (bits, reg) = label_wbm(record, t).ok()?;
                Some(if task == TaskId::Wbm {
                    Label::Multilabel(bits)
                } else {
                    Label::Regression(reg)
                })
            }
        },
    }
}

fn patient_seed(seed: u64, patient: u32) -> u64 {
    seed ^ (u64::from(patient) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Evaluation anchors for one mode. Dynamic anchors are up to ten seeded
/// draws among `[12, stay)`, sorted; an empty vector means the patient is skipped.
pub fn sample_eval_points(record: &PatientRecord, mode: Mode, seed: u64) -> Vec<u32> {
    let stay = record.stay_hours();
    match mode {
        Mode::Static => vec![STATIC_ANCHOR],
        Mode::Terminal => vec![stay],
        Mode::Dynamic => {
            if stay <= MIN_ROLLING_ANCHOR {
                log::debug!("patient {} has no valid rolling anchor", record.id);
                return Vec::new();
            }
            let span = (stay - MIN_ROLLING_ANCHOR) as usize;
            if span <= EVAL_POINTS_PER_PATIENT {
                return (MIN_ROLLING_ANCHOR..stay).collect();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(seed, record.id));
            let mut pts: Vec<u32> = sample(&mut rng, span, EVAL_POINTS_PER_PATIENT)
                .into_iter()
                .map(|i| MIN_ROLLING_ANCHOR + i as u32)
                .collect();
            pts.sort_unstable();
            pts
        }
    }
}

/// Label spaces as a versioned text manifest, so external data can bind to
/// the same class indices.
pub fn label_space_manifest() -> String {
    let mut out = String::from("mtlb-label-space 1\n");
    for id in TaskId::ALL {
        let spec = id.spec();
        out.push_str(&format!(
            "\n[{}]\ncategory = {}\ntemporal = {:?}\ntype = {:?}\n",
            id.name(),
            spec.category,
            spec.temporal,
            spec.label_type
        ));
        for (i, name) in spec.label_space.iter().enumerate() {
            out.push_str(&format!("{i}\t{name}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{Outcomes, Sex};

    fn record(stay: u32, acuity: usize, death: Option<u32>, treatments: Vec<u8>) -> PatientRecord {
        let hours = vec![[None; NUM_CHANNELS]; stay as usize];
        let loc = crate::tables::ACUITY_TO_DISCHARGE[acuity].unwrap_or(NO_DISCHARGE);
        let tr = if treatments.is_empty() { vec![0; stay as usize] } else { treatments };
        PatientRecord::from_hours(
            7,
            Sex::M,
            &hours,
            tr,
            vec![],
            Outcomes {
                death_hour: death,
                discharge_location: loc,
                acuity,
                cmo_hour: None,
                dnr_hour: None,
                icd_bits: 0,
                readmit_days: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn rolling_interval_rule() {
        assert_eq!(classify_event(Some(30), 10, 2, 24, false), EventLabel::Positive);
        assert_eq!(classify_event(Some(11), 10, 2, 24, false), EventLabel::Masked);
        assert_eq!(classify_event(Some(12), 10, 2, 24, false), EventLabel::Masked);
        assert_eq!(classify_event(Some(36), 10, 2, 24, false), EventLabel::Positive);
        assert_eq!(classify_event(Some(37), 10, 2, 24, false), EventLabel::Negative);
        assert_eq!(classify_event(None, 10, 2, 24, false), EventLabel::Negative);
        assert_eq!(classify_event(Some(5), 10, 2, 24, true), EventLabel::Masked);
        assert_eq!(classify_event(Some(10), 10, 2, 24, true), EventLabel::Masked);
    }

    #[test]
    fn anchor_past_discharge_is_usage_error() {
        let r = record(40, 0, None, vec![]);
        assert!(label_rolling_event(&r, RollingEvent::Death, 40, 2, 24).is_err());
        let r = record(40, crate::tables::IN_ICU_MORTALITY, Some(40), vec![]);
        assert_eq!(label_rolling_event(&r, RollingEvent::Death, 30, 2, 24).unwrap(), EventLabel::Positive);
    }

    #[test]
    fn discharge_classes() {
        let r = record(50, 1, None, vec![]);
        assert_eq!(label_discharge(&r, 10, 2, 24).unwrap(), Some(NO_DISCHARGE));
        assert_eq!(label_discharge(&r, 20, 2, 24).unwrap(), Some(NO_DISCHARGE));
        // Discharge at t+g+1 lands in the window; discharge inside the gap is masked.
        assert_eq!(label_discharge(&r, 47, 2, 24).unwrap(), Some(2));
        assert_eq!(label_discharge(&r, 48, 2, 24).unwrap(), None);
        assert_eq!(TaskSpec::of(TaskId::Dis24).label_space[2], "Home");
    }

    #[test]
    fn los_boundary_and_static_mask() {
        assert!(label_static(&record(72, 0, None, vec![])).unwrap().los);
        assert!(!label_static(&record(71, 0, None, vec![])).unwrap().los);
        assert!(label_static(&record(36, 0, None, vec![])).is_none());
        assert!(label_static(&record(37, 0, None, vec![])).is_some());
    }

    #[test]
    fn readmission_boundary() {
        let mut r = record(40, 0, None, vec![]);
        r.outcomes.readmit_days = Some(30);
        assert!(label_readmission(&r));
        r.outcomes.readmit_days = Some(31);
        assert!(!label_readmission(&r));
    }

    #[test]
    fn fts_collapses_runs() {
        let r = record(6, 0, None, vec![1, 1, 1, 1, 1, 1]);
        assert_eq!(label_fts(&r, 2).unwrap(), vec![1, FTS_EOS]);
        let r = record(6, 0, None, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(label_fts(&r, 0).unwrap(), vec![0, 1, 0, 1, 0, 1, FTS_EOS]);
        assert_eq!(label_fts(&r, 6).unwrap(), vec![FTS_EOS]);
        let long: Vec<u8> = (0..40).map(|h| (h % 2) as u8).collect();
        let r = record(40, 0, None, long);
        let seq = label_fts(&r, 0).unwrap();
        assert_eq!(seq.len(), FTS_MAX_TOKENS);
        assert!(!seq.contains(&FTS_EOS));
    }

    #[test]
    fn eval_points() {
        let r = record(300, 0, None, vec![]);
        let a = sample_eval_points(&r, Mode::Dynamic, 5);
        assert_eq!(a.len(), 10);
        assert_eq!(a, sample_eval_points(&r, Mode::Dynamic, 5));
        assert!(a.iter().all(|&t| (12..300).contains(&t)));
        let r = record(20, 0, None, vec![]);
        let a = sample_eval_points(&r, Mode::Dynamic, 5);
        assert_eq!(a, (12..20).collect::<Vec<_>>());
        assert!(sample_eval_points(&record(12, 0, None, vec![]), Mode::Dynamic, 1).is_empty());
    }

    #[test]
    fn suite_shape() {
        assert_eq!(TaskId::ALL.len(), 15);
        assert_eq!(Category::REPORTED.len(), 10);
        assert_eq!(TaskId::Acu.spec().label_type.head_width(), 18);
        assert_eq!(TaskId::Dis24.spec().label_type.head_width(), 17);
        assert_eq!(tasks_for(&[Category::Wbm]), vec![TaskId::Wbm, TaskId::NextReg]);
        assert_eq!(tasks_for(&[Category::Mor]), vec![TaskId::Mor24, TaskId::Mor48]);
        assert!(label_space_manifest().contains("[ACU]\ncategory = ACU"));
    }
}
