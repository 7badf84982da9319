use serde::{Deserialize, Serialize};

use crate::error::{MtlbError, Result};
use crate::tables::{
    ACUITY_CLASSES, ACUITY_TO_DISCHARGE, ICD_CATEGORIES, IN_HOSPITAL_MORTALITY, IN_ICU_MORTALITY, NO_DISCHARGE,
    NUM_CHANNELS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

/// Static outcomes of one ICU stay. Hours are counted from ICU admission.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes {
    /// Hour of death, in ICU (equal to the stay length) or later in hospital.
    pub death_hour: Option<u32>,
    /// Index into the discharge-location table; `NO_DISCHARGE` for patients who die.
    pub discharge_location: usize,
    /// Index into the final-acuity table.
    pub acuity: usize,
    pub cmo_hour: Option<u32>,
    /// `Some(0)` means the order was already present at admission.
    pub dnr_hour: Option<u32>,
    /// One bit per ICD category.
    pub icd_bits: u32,
    /// Days from ICU discharge to the next ICU admission, if any.
    pub readmit_days: Option<u32>,
}

/// One patient's hourly record. Channel values are sparse: each hour carries a
/// 56-bit measured mask and the values of the set bits in channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: u32,
    pub sex: Sex,
    pub measured: Vec<u64>,
    /// Start of each hour's values inside `values`; length `stay_hours() + 1`.
    pub offsets: Vec<u32>,
    pub values: Vec<f32>,
    /// Bit k set when treatment k was given during the hour.
    pub treatments: Vec<u8>,
    /// Latent severity path used by the generator; empty for ingested data.
    pub severity: Vec<f32>,
    pub outcomes: Outcomes,
}

impl PatientRecord {
    pub fn stay_hours(&self) -> u32 {
        self.measured.len() as u32
    }

    pub fn is_measured(&self, hour: u32, channel: usize) -> bool {
        self.measured[hour as usize] >> channel & 1 == 1
    }

    pub fn value(&self, hour: u32, channel: usize) -> Option<f32> {
        let mask = self.measured[hour as usize];
        if mask >> channel & 1 == 0 {
            return None;
        }
        let below = (mask & ((1u64 << channel) - 1)).count_ones() as usize;
        Some(self.values[self.offsets[hour as usize] as usize + below])
    }

    /// `(channel, value)` pairs measured during `hour`.
    pub fn hour_values(&self, hour: u32) -> impl Iterator<Item = (usize, f32)> + '_ {
        let h = hour as usize;
        let mask = self.measured[h];
        let vals = &self.values[self.offsets[h] as usize..self.offsets[h + 1] as usize];
        (0..NUM_CHANNELS).filter(move |c| mask >> c & 1 == 1).zip(vals.iter().copied())
    }

    pub fn died_in_icu(&self) -> bool {
        self.outcomes.acuity == IN_ICU_MORTALITY
    }

    /// Hour at which the patient leaves the ICU alive with a discharge
    /// destination; patients who die have no discharge event.
    pub fn discharge_event(&self) -> Option<(u32, usize)> {
        (self.outcomes.discharge_location != NO_DISCHARGE)
            .then(|| (self.stay_hours(), self.outcomes.discharge_location))
    }

    pub fn readmitted_within_30d(&self) -> bool {
        matches!(self.outcomes.readmit_days, Some(d) if d <= 30)
    }

    /// Builder used by the generator and ingestion: takes dense per-hour rows.
    pub fn from_hours(
        id: u32,
        sex: Sex,
        hours: &[[Option<f32>; NUM_CHANNELS]],
        treatments: Vec<u8>,
        severity: Vec<f32>,
        outcomes: Outcomes,
    ) -> Result<Self> {
        let mut measured = Vec::with_capacity(hours.len());
        let mut offsets = Vec::with_capacity(hours.len() + 1);
        let mut values = Vec::new();
        offsets.push(0);
        for row in hours {
            let mut mask = 0u64;
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    mask |= 1 << c;
                    values.push(*v);
                }
            }
            measured.push(mask);
            offsets.push(values.len() as u32);
        }
        let rec = Self {
            id,
            sex,
            measured,
            offsets,
            values,
            treatments,
            severity,
            outcomes,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MtlbError::Data(format!("patient {}: {m}", self.id)));
        let n = self.measured.len();
        if n == 0 {
            return bad("empty stay".into());
        }
        if self.offsets.len() != n + 1 || self.treatments.len() != n {
            return bad("per-hour arrays disagree on stay length".into());
        }
        if !self.severity.is_empty() && self.severity.len() != n {
            return bad("severity path length differs from stay length".into());
        }
        for h in 0..n {
            let count = self.offsets[h + 1].checked_sub(self.offsets[h]);
            if count != Some(self.measured[h].count_ones()) {
                return bad(format!("hour {h}: value count does not match measured mask"));
            }
            if self.measured[h] >> NUM_CHANNELS != 0 {
                return bad(format!("hour {h}: measured bit beyond channel count"));
            }
            if self.treatments[h] >> 3 != 0 {
                return bad(format!("hour {h}: treatment bits beyond the three treatments"));
            }
        }
        if self.offsets[n] as usize != self.values.len() {
            return bad("trailing values".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite channel value".into());
        }
        let o = &self.outcomes;
        if o.acuity >= ACUITY_CLASSES.len() || o.discharge_location >= crate::tables::DISCHARGE_LOCATIONS.len() {
            return bad("outcome index out of range".into());
        }
        if o.icd_bits >> ICD_CATEGORIES.len() != 0 {
            return bad("ICD bit beyond category count".into());
        }
        let dies = o.acuity == IN_ICU_MORTALITY || o.acuity == IN_HOSPITAL_MORTALITY;
        if dies != o.death_hour.is_some() {
            return bad("death hour inconsistent with final acuity".into());
        }
        match o.death_hour {
            Some(d) if o.acuity == IN_ICU_MORTALITY && d != n as u32 => {
                return bad("in-ICU death must end the stay".into())
            }
            Some(d) if o.acuity == IN_HOSPITAL_MORTALITY && d <= n as u32 => {
                return bad("in-hospital death must follow ICU discharge".into())
            }
            _ => {}
        }
        if ACUITY_TO_DISCHARGE[o.acuity].unwrap_or(NO_DISCHARGE) != o.discharge_location {
            return bad("discharge location inconsistent with final acuity".into());
        }
        Ok(())
    }
}
