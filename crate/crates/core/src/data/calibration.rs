//! Achieved-versus-target statistics for a generated cohort.

use std::fmt::Write as _;

use super::CohortDataset;
use crate::tables::{ACUITY_CLASSES, CHANNELS, DISCHARGE_LOCATIONS, ICD_CATEGORIES, NO_DISCHARGE, NUM_CHANNELS};
use crate::tasks::{classify_event, label_static, MIN_ROLLING_ANCHOR};

/// Majority-class accuracy targets per task with their tolerance bands.
pub const MCA_TARGETS: [(&str, f64, f64); 13] = [
    ("MOR24", 0.980, 0.010),
    ("MOR48", 0.962, 0.010),
    ("CMO24", 0.992, 0.005),
    ("CMO48", 0.987, 0.005),
    ("DNR24", 0.988, 0.005),
    ("DNR48", 0.981, 0.005),
    ("DIS24", 0.730, 0.030),
    ("DIS48", 0.473, 0.020),
    ("ICD", 0.691, 0.030),
    ("LOS", 0.529, 0.030),
    ("REA", 0.950, 0.010),
    ("ACU", 0.253, 0.020),
    ("WBM", 0.920, 0.020),
];
pub const MEASUREMENT_TOLERANCE: f64 = 0.02;
pub const ICD_TOLERANCE: f64 = 0.03;
pub const ACUITY_TOLERANCE: f64 = 0.02;
/// Discharge histogram bands at the 24h and 48h horizons.
pub const DISCHARGE_TOLERANCE: [f64; 2] = [0.03, 0.02];

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRow {
    pub key: String,
    pub target: f64,
    pub achieved: f64,
    pub tolerance: f64,
}

impl CalibrationRow {
    pub fn within(&self) -> bool {
        (self.achieved - self.target).abs() <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub patients: usize,
    pub split: (usize, usize, usize),
    pub rows: Vec<CalibrationRow>,
}

impl CalibrationReport {
    pub fn get(&self, key: &str) -> Option<&CalibrationRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn failures(&self) -> Vec<&CalibrationRow> {
        self.rows.iter().filter(|r| !r.within()).collect()
    }

    /// Key-value manifest: `key = target achieved tolerance status`.
    pub fn to_manifest(&self) -> String {
        let mut s = String::from("# mtlb calibration manifest 1\n");
        let _ = writeln!(s, "patients = {}", self.patients);
        let _ = writeln!(s, "split.train = {}", self.split.0);
        let _ = writeln!(s, "split.tune = {}", self.split.1);
        let _ = writeln!(s, "split.test = {}", self.split.2);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} = target {:.4} achieved {:.4} tolerance {:.4} {}",
                r.key,
                r.target,
                r.achieved,
                r.tolerance,
                if r.within() { "ok" } else { "OUT" }
            );
        }
        s
    }

    /// Human-readable table for the terminal.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<52} {:>8} {:>9} {:>6}\n", "statistic", "target", "achieved", "");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<52} {:>8.4} {:>9.4} {:>6}",
                r.key,
                r.target,
                r.achieved,
                if r.within() { "ok" } else { "OUT" }
            );
        }
        s
    }
}

fn mca(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return f64::NAN;
    }
    counts.iter().copied().fold(0.0, f64::max) / total
}

/// Computes every calibration statistic. Rolling rates are taken over all
/// patient-hour anchors from hour 12 to the last hour of the stay.
pub fn calibrate(ds: &CohortDataset) -> CalibrationReport {
    let mut rows = Vec::new();
    // [neg, pos] for the six rolling binaries; class counts for both DIS tasks.
    let mut bin = [[0.0f64; 2]; 6];
    let mut dis = [vec![0.0f64; DISCHARGE_LOCATIONS.len()], vec![0.0f64; DISCHARGE_LOCATIONS.len()]];
    let mut measured = vec![0.0f64; NUM_CHANNELS];
    let mut hours = 0.0f64;
    let mut next_measured = vec![0.0f64; NUM_CHANNELS];
    let mut next_total = 0.0f64;
    let mut icd = vec![0.0f64; ICD_CATEGORIES.len()];
    let mut acu = vec![0.0f64; ACUITY_CLASSES.len()];
    let mut los = [0.0f64; 2];
    let mut static_n = 0.0f64;
    let mut rea = [0.0f64; 2];
    for r in &ds.records {
        let o = &r.outcomes;
        let stay = r.stay_hours();
        for (h, m) in r.measured.iter().enumerate() {
            hours += 1.0;
            for (c, slot) in measured.iter_mut().enumerate() {
                *slot += (m >> c & 1) as f64;
            }
            if h as u32 >= MIN_ROLLING_ANCHOR {
                next_total += 1.0;
                for (c, slot) in next_measured.iter_mut().enumerate() {
                    *slot += (m >> c & 1) as f64;
                }
            }
        }
        let events = [
            (o.death_hour, false),
            (o.cmo_hour, true),
            (o.dnr_hour, true),
        ];
        for t in MIN_ROLLING_ANCHOR..stay {
            for (k, &(ev, mask_present)) in events.iter().enumerate() {
                for (j, (g, w)) in [(2, 24), (6, 48)].into_iter().enumerate() {
                    match classify_event(ev, t, g, w, mask_present) {
                        crate::tasks::EventLabel::Positive => bin[2 * k + j][1] += 1.0,
                        crate::tasks::EventLabel::Negative => bin[2 * k + j][0] += 1.0,
                        crate::tasks::EventLabel::Masked => {}
                    }
                }
            }
            for (j, (g, w)) in [(2u32, 24u32), (6, 48)].into_iter().enumerate() {
                match r.discharge_event() {
                    Some((h, _)) if h <= t + g => {}
                    Some((h, loc)) if h <= t + g + w => dis[j][loc] += 1.0,
                    _ => dis[j][NO_DISCHARGE] += 1.0,
                }
            }
        }
        if let Some(s) = label_static(r) {
            static_n += 1.0;
            for (k, &b) in s.icd.iter().enumerate() {
                icd[k] += b as u8 as f64;
            }
            acu[s.acu] += 1.0;
            los[s.los as usize] += 1.0;
        }
        rea[r.readmitted_within_30d() as usize] += 1.0;
    }

    let icd_rates: Vec<f64> = icd.iter().map(|c| c / static_n.max(1.0)).collect();
    let wbm_rates: Vec<f64> = next_measured.iter().map(|c| c / next_total.max(1.0)).collect();
    let macro_mca = |rates: &[f64]| rates.iter().map(|&p| p.max(1.0 - p)).sum::<f64>() / rates.len() as f64;
    let achieved_mca = [
        mca(&bin[0]),
        mca(&bin[1]),
        mca(&bin[2]),
        mca(&bin[3]),
        mca(&bin[4]),
        mca(&bin[5]),
        mca(&dis[0]),
        mca(&dis[1]),
        macro_mca(&icd_rates),
        mca(&los),
        mca(&rea),
        mca(&acu),
        macro_mca(&wbm_rates),
    ];
    for ((name, target, tol), achieved) in MCA_TARGETS.iter().zip(achieved_mca) {
        rows.push(CalibrationRow {
            key: format!("mca.{name}"),
            target: *target,
            achieved,
            tolerance: *tol,
        });
    }
    for (c, (name, rate)) in CHANNELS.iter().enumerate() {
        rows.push(CalibrationRow {
            key: format!("measured.{name}"),
            target: *rate,
            achieved: measured[c] / hours.max(1.0),
            tolerance: MEASUREMENT_TOLERANCE,
        });
    }
    for (k, (name, rate)) in ICD_CATEGORIES.iter().enumerate() {
        rows.push(CalibrationRow {
            key: format!("icd.{name}"),
            target: *rate,
            achieved: icd_rates[k],
            tolerance: ICD_TOLERANCE,
        });
    }
    let acu_total: f64 = acu.iter().sum::<f64>().max(1.0);
    for (k, (name, rate)) in ACUITY_CLASSES.iter().enumerate() {
        rows.push(CalibrationRow {
            key: format!("acuity.{name}"),
            target: *rate,
            achieved: acu[k] / acu_total,
            tolerance: ACUITY_TOLERANCE,
        });
    }
    for (j, horizon) in ["24h", "48h"].iter().enumerate() {
        let total: f64 = dis[j].iter().sum::<f64>().max(1.0);
        for (k, (name, p24, p48)) in DISCHARGE_LOCATIONS.iter().enumerate() {
            rows.push(CalibrationRow {
                key: format!("discharge{horizon}.{name}"),
                target: if j == 0 { *p24 } else { *p48 },
                achieved: dis[j][k] / total,
                tolerance: DISCHARGE_TOLERANCE[j],
            });
        }
    }
    CalibrationReport {
        patients: ds.len(),
        split: ds.split_sizes(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cohort, GeneratorParams};

    #[test]
    fn manifest_lists_every_row() {
        let ds = generate_cohort(3, 300, &GeneratorParams::default()).unwrap();
        let rep = calibrate(&ds);
        assert_eq!(rep.rows.len(), 13 + 56 + 18 + 18 + 2 * 17);
        let text = rep.to_manifest();
        assert!(text.contains("mca.MOR24 = target 0.9800"));
        assert_eq!(text.lines().count(), 5 + rep.rows.len());
        let hr = rep.get("measured.Heart Rate").unwrap();
        assert!(hr.achieved > 0.8 && hr.achieved < 1.0);
    }

    #[test]
    fn mca_of_counts() {
        assert_eq!(mca(&[3.0, 1.0]), 0.75);
        assert!(mca(&[0.0, 0.0]).is_nan());
    }
}
