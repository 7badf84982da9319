//! Synthetic ICU cohort.
//!
//! Each patient draws a frailty score, a final acuity class tilted by it, and
//! a stay length. An hourly severity path (mean-reverting, drifting up before
//! an in-ICU death and down before discharge) then drives measurement
//! probabilities, channel values, treatments and care orders. Intercepts are
//! solved numerically so the marginal rates match the reference tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{Outcomes, PatientRecord, Sex};
use super::{split_patients, CohortDataset, SplitRatios};
use crate::error::{MtlbError, Result};
use crate::tables::{
    ACUITY_CLASSES, ACUITY_TO_DISCHARGE, CHANNELS, ICD_CATEGORIES, IN_HOSPITAL_MORTALITY, IN_ICU_MORTALITY,
    NO_DISCHARGE, NUM_CHANNELS,
};

/// Free parameters of the generator. Defaults are tuned so the calibration
/// report lands inside its tolerance bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub male_fraction: f64,
    pub min_stay: u32,
    pub max_stay: u32,
    pub short_stay_log_mean: f64,
    pub short_stay_log_sd: f64,
    pub long_stay_log_mean: f64,
    pub long_stay_log_sd: f64,
    pub long_stay_rate: f64,
    pub long_stay_loading: f64,
    pub severity_persistence: f64,
    pub severity_frailty_loading: f64,
    pub death_ramp: f64,
    pub discharge_ramp: f64,
    pub ramp_hours: f64,
    pub acuity_frailty_loading: f64,
    pub cmo_rate_given_icu_death: f64,
    pub cmo_rate_given_hospice: f64,
    pub dnr_admission_rate: f64,
    pub dnr_new_rate: f64,
    pub readmit_rate: f64,
    pub icd_frailty_loading: f64,
    pub measurement_severity_loading: f64,
    pub value_severity_loading: f64,
    /// Drive length of stay (and half the channels) by a latent independent
    /// of severity, creating a task that conflicts with the others.
    pub adversarial_los: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            male_fraction: 0.56,
            min_stay: 12,
            max_stay: 240,
            short_stay_log_mean: 3.95,
            short_stay_log_sd: 0.4,
            long_stay_log_mean: 4.8,
            long_stay_log_sd: 0.45,
            long_stay_rate: 0.4,
            long_stay_loading: 1.2,
            severity_persistence: 0.95,
            severity_frailty_loading: 0.6,
            death_ramp: 3.0,
            discharge_ramp: 0.8,
            ramp_hours: 60.0,
            acuity_frailty_loading: 1.0,
            cmo_rate_given_icu_death: 0.4,
            cmo_rate_given_hospice: 0.5,
            dnr_admission_rate: 0.10,
            dnr_new_rate: 0.04,
            readmit_rate: 0.05,
            icd_frailty_loading: 0.5,
            measurement_severity_loading: 0.4,
            value_severity_loading: 0.3,
            adversarial_los: false,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("male_fraction", self.male_fraction),
            ("long_stay_rate", self.long_stay_rate),
            ("cmo_rate_given_icu_death", self.cmo_rate_given_icu_death),
            ("cmo_rate_given_hospice", self.cmo_rate_given_hospice),
            ("dnr_admission_rate", self.dnr_admission_rate),
            ("dnr_new_rate", self.dnr_new_rate),
            ("readmit_rate", self.readmit_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(MtlbError::Calibration(format!("{name} = {p} is not a probability")));
            }
        }
        let survivors = 1.0 - ACUITY_CLASSES[IN_ICU_MORTALITY].1 - ACUITY_CLASSES[IN_HOSPITAL_MORTALITY].1;
        if self.readmit_rate > survivors {
            return Err(MtlbError::Calibration(format!(
                "readmission rate {} exceeds the survivor share {survivors:.3}",
                self.readmit_rate
            )));
        }
        if !(0.0..1.0).contains(&self.severity_persistence) || !(0.0..1.0).contains(&self.severity_frailty_loading) {
            return Err(MtlbError::Calibration("severity persistence and loading must lie in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.value_severity_loading) {
            return Err(MtlbError::Calibration("value loading must lie in [0,1)".into()));
        }
        if self.min_stay < 2 || self.max_stay <= self.min_stay {
            return Err(MtlbError::Calibration("stay bounds must satisfy 2 <= min < max".into()));
        }
        if self.ramp_hours <= 0.0 {
            return Err(MtlbError::Calibration("ramp_hours must be positive".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard-normal grid with normalised weights, for expectations over frailty.
fn normal_grid() -> Vec<(f64, f64)> {
    let n = 241;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let z = -6.0 + 12.0 * i as f64 / (n - 1) as f64;
            (z, (-0.5 * z * z).exp())
        })
        .collect();
    let total: f64 = pts.iter().map(|p| p.1).sum();
    pts.into_iter().map(|(z, w)| (z, w / total)).collect()
}

/// Intercept `b` with `E_z[sigmoid(b + k z)] = p`.
fn solve_logistic_intercept(p: f64, k: f64, grid: &[(f64, f64)]) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let m: f64 = grid.iter().map(|&(z, w)| w * sigmoid(mid + k * z)).sum();
        if m < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// How strongly each acuity class leans toward frail patients.
fn acuity_tilt(class: usize) -> f64 {
    match class {
        IN_ICU_MORTALITY => 1.2,
        IN_HOSPITAL_MORTALITY => 0.9,
        10 | 12 => 0.8,
        2 | 6 => 0.4,
        3 => 0.2,
        0 | 1 => -0.3,
        _ => 0.0,
    }
}

/// Softmax intercepts giving the tabulated acuity shares after tilting.
fn solve_acuity_intercepts(loading: f64, grid: &[(f64, f64)]) -> Vec<f64> {
    let k = ACUITY_CLASSES.len();
    let target: Vec<f64> = ACUITY_CLASSES.iter().map(|c| c.1).collect();
    let mut b: Vec<f64> = target.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect();
    for _ in 0..200 {
        let mut m = vec![0.0; k];
        for &(z, w) in grid {
            let logits: Vec<f64> = (0..k).map(|j| b[j] + loading * acuity_tilt(j) * z).collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..k {
                m[j] += w * e[j] / s;
            }
        }
        for j in 0..k {
            if target[j] > 0.0 {
                b[j] += (target[j] / m[j]).ln();
            }
        }
    }
    b
}

fn channel_loading(c: usize, scale: f64) -> f64 {
    let frac = (c as f64 * 0.618_033_988_75).fract();
    let mag = scale * (0.6 + 0.4 * frac);
    if c % 3 == 1 {
        -mag
    } else {
        mag
    }
}

/// Intercepts solved once per parameter set.
#[derive(Clone, Debug)]
pub struct SolvedIntercepts {
    acuity: Vec<f64>,
    icd: Vec<f64>,
    long_stay: f64,
    readmit: f64,
    dnr_admission: f64,
    dnr_new: f64,
    /// Per-channel offsets on the logit of the tabulated measurement rate.
    measurement: Vec<f64>,
}

struct Latents {
    sex: Sex,
    frailty: f64,
    stay_driver: f64,
    acuity: usize,
    stay: u32,
}

fn draw_stay(rng: &mut ChaCha8Rng, p: &GeneratorParams, long: bool) -> u32 {
    let (m, s) = if long {
        (p.long_stay_log_mean, p.long_stay_log_sd)
    } else {
        (p.short_stay_log_mean, p.short_stay_log_sd)
    };
    loop {
        let e: f64 = StandardNormal.sample(rng);
        let l = (m + s * e).exp().round();
        if l >= f64::from(p.min_stay) && l <= f64::from(p.max_stay) {
            return l as u32;
        }
    }
}

fn draw_latents(rng: &mut ChaCha8Rng, p: &GeneratorParams, ic: &SolvedIntercepts) -> Latents {
    let sex = if rng.random::<f64>() < p.male_fraction { Sex::M } else { Sex::F };
    let frailty: f64 = StandardNormal.sample(rng);
    let independent: f64 = StandardNormal.sample(rng);
    let logits: Vec<f64> = ic
        .acuity
        .iter()
        .enumerate()
        .map(|(j, b)| b + p.acuity_frailty_loading * acuity_tilt(j) * frailty)
        .collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    let mut acuity = weights.len() - 1;
    for (j, w) in weights.iter().enumerate() {
        if r < *w {
            acuity = j;
            break;
        }
        r -= w;
    }
    let stay_driver = if p.adversarial_los { independent } else { frailty };
    let long = rng.random::<f64>() < sigmoid(ic.long_stay + p.long_stay_loading * stay_driver);
    let stay = draw_stay(rng, p, long);
    Latents {
        sex,
        frailty,
        stay_driver,
        acuity,
        stay,
    }
}

fn severity_path(rng: &mut ChaCha8Rng, p: &GeneratorParams, lat: &Latents) -> Vec<f64> {
    let rho = p.severity_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let load = p.severity_frailty_loading;
    let resid = (1.0 - load * load).sqrt();
    let ramp = match lat.acuity {
        IN_ICU_MORTALITY => p.death_ramp,
        IN_HOSPITAL_MORTALITY => 0.3 * p.death_ramp,
        _ => -p.discharge_ramp,
    };
    let l = lat.stay as usize;
    let mut a: f64 = StandardNormal.sample(rng);
    let mut out = Vec::with_capacity(l);
    for h in 0..l {
        if h > 0 {
            let e: f64 = StandardNormal.sample(rng);
            a = rho * a + innov * e;
        }
        let to_end = (l - 1 - h) as f64;
        let frac = (1.0 - to_end / p.ramp_hours).clamp(0.0, 1.0);
        out.push(load * lat.frailty + resid * a + frac * ramp);
    }
    out
}

fn uniform_hour(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> u32 {
    rng.random_range(lo..=hi.max(lo))
}

fn draw_outcomes(rng: &mut ChaCha8Rng, p: &GeneratorParams, ic: &SolvedIntercepts, lat: &Latents) -> Outcomes {
    let stay = lat.stay;
    let z = lat.frailty;
    let acuity = lat.acuity;
    let death_hour = match acuity {
        IN_ICU_MORTALITY => Some(stay),
        IN_HOSPITAL_MORTALITY => Some(stay + uniform_hour(rng, 24, 336)),
        _ => None,
    };
    let hospice = acuity == 10 || acuity == 12;
    let cmo_draw = rng.random::<f64>();
    let cmo_hour = if (acuity == IN_ICU_MORTALITY && cmo_draw < p.cmo_rate_given_icu_death)
        || (hospice && cmo_draw < p.cmo_rate_given_hospice)
    {
        Some(stay.saturating_sub(uniform_hour(rng, 3, 48)).max(1))
    } else {
        None
    };
    let dies = death_hour.is_some();
    let dnr_hour = if rng.random::<f64>() < sigmoid(ic.dnr_admission + 0.8 * z) {
        Some(0)
    } else if rng.random::<f64>() < sigmoid(ic.dnr_new + 0.8 * z + if dies { 2.0 } else { 0.0 }) {
        if dies {
            Some(stay.saturating_sub(uniform_hour(rng, 4, 72)).max(1))
        } else {
            Some(uniform_hour(rng, 1, stay.saturating_sub(1).max(1)))
        }
    } else {
        None
    };
    let mut icd_bits = 0u32;
    for (k, b) in ic.icd.iter().enumerate() {
        if rng.random::<f64>() < sigmoid(b + p.icd_frailty_loading * z) {
            icd_bits |= 1 << k;
        }
    }
    let readmit_days = if dies {
        None
    } else if rng.random::<f64>() < sigmoid(ic.readmit + 0.6 * z) {
        Some(uniform_hour(rng, 1, 30))
    } else if rng.random::<f64>() < 0.05 {
        Some(uniform_hour(rng, 31, 365))
    } else {
        None
    };
    Outcomes {
        death_hour,
        discharge_location: ACUITY_TO_DISCHARGE[acuity].unwrap_or(NO_DISCHARGE),
        acuity,
        cmo_hour,
        dnr_hour,
        icd_bits,
        readmit_days,
    }
}

/// Two-state on/off chain per treatment, with switching odds tied to severity.
fn treatments(rng: &mut ChaCha8Rng, severity: &[f64]) -> Vec<u8> {
    // (start intercept, start slope, stop intercept, stop slope)
    const CHAINS: [(f64, f64, f64, f64); 3] = [(-4.5, 1.0, -3.0, -0.8), (-5.0, 1.2, -2.5, -0.8), (-3.5, 0.8, 0.5, 0.0)];
    let mut state = [false; 3];
    for (k, ch) in CHAINS.iter().enumerate() {
        state[k] = rng.random::<f64>() < sigmoid(ch.0 + 3.0 + ch.1 * severity[0]);
    }
    severity
        .iter()
        .map(|&s| {
            let mut bits = 0u8;
            for (k, &(a, b, c, d)) in CHAINS.iter().enumerate() {
                let flip = if state[k] { sigmoid(c + d * s) } else { sigmoid(a + b * s) };
                if rng.random::<f64>() < flip {
                    state[k] = !state[k];
                }
                if state[k] {
                    bits |= 1 << k;
                }
            }
            bits
        })
        .collect()
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SolvedIntercepts {
    pub fn solve(p: &GeneratorParams, seed: u64) -> Result<Self> {
        p.validate()?;
        let grid = normal_grid();
        let survivors = 1.0 - ACUITY_CLASSES[IN_ICU_MORTALITY].1 - ACUITY_CLASSES[IN_HOSPITAL_MORTALITY].1;
        let mut ic = SolvedIntercepts {
            acuity: solve_acuity_intercepts(p.acuity_frailty_loading, &grid),
            icd: ICD_CATEGORIES
                .iter()
                .map(|c| solve_logistic_intercept(c.1, p.icd_frailty_loading, &grid))
                .collect(),
            long_stay: solve_logistic_intercept(p.long_stay_rate, p.long_stay_loading, &grid),
            // Readmission is only drawn for survivors, who lean less frail;
            // the survivor-conditional rate is a close enough target here.
            readmit: solve_logistic_intercept(p.readmit_rate / survivors, 0.6, &grid),
            dnr_admission: solve_logistic_intercept(p.dnr_admission_rate, 0.8, &grid),
            dnr_new: solve_logistic_intercept(p.dnr_new_rate, 0.8, &grid),
            measurement: vec![0.0; NUM_CHANNELS],
        };
        ic.measurement = solve_measurement_offsets(p, &ic, seed)?;
        Ok(ic)
    }
}

/// Offsets so the average measurement probability over a pilot cohort's
/// severity hours equals each channel's tabulated rate.
fn solve_measurement_offsets(p: &GeneratorParams, ic: &SolvedIntercepts, seed: u64) -> Result<Vec<f64>> {
    const PILOT: u64 = 1500;
    const BINS: usize = 200;
    let (lo, hi) = (-8.0, 8.0);
    let mut hist = vec![0.0f64; BINS];
    for i in 0..PILOT {
        let mut rng = patient_rng(seed ^ 0x5eed_0f_9170, i);
        let lat = draw_latents(&mut rng, p, ic);
        for s in severity_path(&mut rng, p, &lat) {
            let b = (((s - lo) / (hi - lo)) * BINS as f64).clamp(0.0, BINS as f64 - 1.0) as usize;
            hist[b] += 1.0;
        }
    }
    let total: f64 = hist.iter().sum();
    let centers: Vec<(f64, f64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0.0)
        .map(|(b, &n)| (lo + (b as f64 + 0.5) * (hi - lo) / BINS as f64, n / total))
        .collect();
    let k = p.measurement_severity_loading;
    CHANNELS
        .iter()
        .map(|&(name, rate)| {
            if !(0.0..1.0).contains(&rate) || rate == 0.0 {
                return Err(MtlbError::Calibration(format!("{name}: measurement rate {rate} outside (0,1)")));
            }
            let base = logit(rate);
            let (mut a, mut b) = (-30.0, 30.0);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let m: f64 = centers.iter().map(|&(s, w)| w * sigmoid(base + mid + k * s)).sum();
                if m < rate {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            Ok(0.5 * (a + b))
        })
        .collect()
}

/// Generates `n` patients. Channel values are standardised across the whole
/// cohort after generation, over measured entries only.
pub fn generate_cohort(seed: u64, n: usize, params: &GeneratorParams) -> Result<CohortDataset> {
    if n < 10 {
        return Err(MtlbError::Config(format!("cohort of {n} patients is too small to split")));
    }
    let ic = SolvedIntercepts::solve(params, seed)?;
    let mut records = Vec::with_capacity(n);
    let mut sums = [0.0f64; NUM_CHANNELS];
    let mut sq = [0.0f64; NUM_CHANNELS];
    let mut counts = [0u64; NUM_CHANNELS];
    let loadings: Vec<f64> = (0..NUM_CHANNELS)
        .map(|c| channel_loading(c, params.value_severity_loading))
        .collect();
    let k_meas = params.measurement_severity_loading;
    let base: Vec<f64> = CHANNELS.iter().zip(&ic.measurement).map(|(c, d)| logit(c.1) + d).collect();
    for i in 0..n {
        let mut rng = patient_rng(seed, i as u64);
        let lat = draw_latents(&mut rng, params, &ic);
        let sev = severity_path(&mut rng, params, &lat);
        let outcomes = draw_outcomes(&mut rng, params, &ic, &lat);
        let tr = treatments(&mut rng, &sev);
        let mut hours = vec![[None; NUM_CHANNELS]; sev.len()];
        for (h, &s) in sev.iter().enumerate() {
            for c in 0..NUM_CHANNELS {
                if rng.random::<f64>() < sigmoid(base[c] + k_meas * s) {
                    let lam = loadings[c];
                    let driver = if params.adversarial_los && c % 2 == 1 { lat.stay_driver } else { s };
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let v = lam * driver + (1.0 - lam * lam).sqrt() * e;
                    sums[c] += v;
                    sq[c] += v * v;
                    counts[c] += 1;
                    hours[h][c] = Some(v as f32);
                }
            }
        }
        let severity = sev.iter().map(|&v| v as f32).collect();
        records.push(PatientRecord::from_hours(i as u32, lat.sex, &hours, tr, severity, outcomes)?);
    }
    let stats: Vec<(f32, f32)> = (0..NUM_CHANNELS)
        .map(|c| {
            let cnt = counts[c].max(1) as f64;
            let mean = sums[c] / cnt;
            let var = (sq[c] / cnt - mean * mean).max(1e-12);
            (mean as f32, var.sqrt() as f32)
        })
        .collect();
    for r in &mut records {
        for h in 0..r.measured.len() {
            let mask = r.measured[h];
            let start = r.offsets[h] as usize;
            let mut j = start;
            for (c, &(m, sd)) in stats.iter().enumerate() {
                if mask >> c & 1 == 1 {
                    r.values[j] = (r.values[j] - m) / sd;
                    j += 1;
                }
            }
        }
    }
    let split = split_patients(n, SplitRatios::default(), seed)?;
    Ok(CohortDataset::new(records, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_intercept_hits_target() {
        let grid = normal_grid();
        let b = solve_logistic_intercept(0.722, 0.5, &grid);
        let m: f64 = grid.iter().map(|&(z, w)| w * sigmoid(b + 0.5 * z)).sum();
        assert!((m - 0.722).abs() < 1e-9);
        assert_eq!(solve_logistic_intercept(0.0, 0.5, &grid), f64::NEG_INFINITY);
    }

    #[test]
    fn acuity_intercepts_reproduce_shares() {
        let grid = normal_grid();
        let b = solve_acuity_intercepts(1.0, &grid);
        let mut m = vec![0.0; b.len()];
        for &(z, w) in &grid {
            let l: Vec<f64> = (0..b.len()).map(|j| b[j] + acuity_tilt(j) * z).collect();
            let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..b.len() {
                m[j] += w * e[j] / s;
            }
        }
        for (j, c) in ACUITY_CLASSES.iter().enumerate() {
            assert!((m[j] - c.1).abs() < 1e-6, "{}: {} vs {}", c.0, m[j], c.1);
        }
    }

    #[test]
    fn infeasible_params_are_calibration_errors() {
        let p = GeneratorParams {
            readmit_rate: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_cohort(1, 100, &p), Err(MtlbError::Calibration(_))));
    }

    #[test]
    fn same_seed_same_cohort() {
        let p = GeneratorParams::default();
        let a = generate_cohort(3, 120, &p).unwrap();
        let b = generate_cohort(3, 120, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(4, 120, &p).unwrap();
        assert_ne!(a, c);
    }
}
