//! Label spaces and marginal rates the synthetic cohort is calibrated against.

/// Hourly labs and vitals with their measurement rate (fraction of patient-hours).
pub const CHANNELS: [(&str, f64); 56] = [
    ("Heart Rate", 0.916),
    ("Respiratory Rate", 0.902),
    ("Diastolic Blood Pressure", 0.888),
    ("Systolic Blood Pressure", 0.888),
    ("Mean Blood Pressure", 0.883),
    ("Oxygen Saturation", 0.876),
    ("Temperature", 0.298),
    ("Glucose", 0.232),
    ("Central Venous Pressure", 0.203),
    ("Glascow Coma Scale Total", 0.177),
    ("Hematocrit", 0.112),
    ("Potassium", 0.104),
    ("Sodium", 0.099),
    ("Pulmonary Artery Pressure Systolic", 0.094),
    ("Chloride", 0.094),
    ("Ph", 0.092),
    ("Hemoglobin", 0.09),
    ("Creatinine", 0.088),
    ("Blood Urea Nitrogen", 0.087),
    ("Bicarbonate", 0.086),
    ("Magnesium", 0.083),
    ("Anion Gap", 0.083),
    ("Partial Pressure Of Carbon Dioxide", 0.083),
    ("Co2 (Etco2, Pco2, Etc.)", 0.083),
    ("Platelets", 0.082),
    ("Positive End-Expiratory Pressure Set", 0.08),
    ("White Blood Cell Count", 0.079),
    ("Calcium", 0.071),
    ("Fraction Inspired Oxygen Set", 0.07),
    ("Tidal Volume Observed", 0.068),
    ("Mean Corpuscular Hemoglobin Concentration", 0.062),
    ("Mean Corpuscular Volume", 0.062),
    ("Red Blood Cell Count", 0.062),
    ("Mean Corpuscular Hemoglobin", 0.062),
    ("Partial Thromboplastin Time", 0.06),
    ("Prothrombin Time Inr", 0.057),
    ("Prothrombin Time Pt", 0.057),
    ("Peak Inspiratory Pressure", 0.056),
    ("Phosphate", 0.055),
    ("Phosphorous", 0.054),
    ("Respiratory Rate Set", 0.049),
    ("Calcium Ionized", 0.049),
    ("Fraction Inspired Oxygen", 0.047),
    ("Tidal Volume Set", 0.046),
    ("Partial Pressure Of Oxygen", 0.043),
    ("Cardiac Index", 0.036),
    ("Co2", 0.035),
    ("Pulmonary Artery Pressure Mean", 0.035),
    ("Tidal Volume Spontaneous", 0.035),
    ("Plateau Pressure", 0.034),
    ("Systemic Vascular Resistance", 0.034),
    ("Potassium Serum", 0.032),
    ("Cardiac Output Thermodilution", 0.03),
    ("Lactate", 0.027),
    ("Weight", 0.025),
    ("Lactic Acid", 0.024),
];

pub const NUM_CHANNELS: usize = CHANNELS.len();

/// Imminent-discharge classes with the share of patient-hours discharged to
/// each location within 24h and 48h. Index 0 is the no-discharge class.
pub const DISCHARGE_LOCATIONS: [(&str, f64, f64); 17] = [
    ("No Discharge", 0.73, 0.473),
    ("Home Health Care", 0.077, 0.151),
    ("Home", 0.073, 0.14),
    ("Skilled Nursing Facility (SNF)", 0.052, 0.103),
    ("Rehab/Distinct Part Hosp", 0.04, 0.079),
    ("Long Term Care Hospital", 0.011, 0.022),
    ("Discharge-Transfer Cancer/Children Hospital", 0.004, 0.009),
    ("Short Term Hospital", 0.003, 0.006),
    ("Discharge-Transfer To Psych Hospital", 0.003, 0.006),
    ("Hospice-Home", 0.003, 0.005),
    ("Left Against Medical Advice", 0.001, 0.002),
    ("Hospice-Medical Facility", 0.001, 0.002),
    ("Home With Home Iv Provider", 0.0, 0.001),
    ("Integrated Care Facility (ICF)", 0.0, 0.001),
    ("Other Facility", 0.0, 0.001),
    ("Discharge-Transfer To Federal Hc", 0.0, 0.0),
    ("Snf-Medicaid Only Certif", 0.0, 0.0),
];

pub const NO_DISCHARGE: usize = 0;

/// Major ICD categories with the share of patients carrying at least one code.
pub const ICD_CATEGORIES: [(&str, f64); 18] = [
    ("Circulatory", 0.722),
    ("Endocrine", 0.635),
    ("Respiratory", 0.53),
    ("Injury", 0.5),
    ("Digestive", 0.489),
    ("Ill Defined", 0.487),
    ("Genitourinary", 0.48),
    ("Blood", 0.479),
    ("Mental Health", 0.432),
    ("Infection", 0.418),
    ("Nervous", 0.408),
    ("Musculoskeletal", 0.335),
    ("Neoplasm", 0.298),
    ("Skin", 0.227),
    ("Congenital", 0.083),
    ("Pregnancy", 0.012),
    ("Unknown", 0.0002),
    ("Perinatal", 0.0),
];

/// Final acuity classes with the share of patients in each.
pub const ACUITY_CLASSES: [(&str, f64); 18] = [
    ("Discharge to Home Health Care", 0.253),
    ("Discharge to Home", 0.24),
    ("Discharge to SNF", 0.172),
    ("Discharge to Rehab/Distinct Part Hosp", 0.132),
    ("In ICU Mortality", 0.074),
    ("In Hospital Mortality", 0.037),
    ("Discharge to Long Term Care Hospital", 0.036),
    ("Discharge-Transfer Cancer/Children Hospital", 0.015),
    ("Discharge to Short Term Hospital", 0.011),
    ("Discharge-Transfer To Psych Hosp", 0.01),
    ("Discharge to Hospice-Home", 0.009),
    ("Left Against Medical Advice", 0.004),
    ("Discharge to Hospice-Medical Facility", 0.003),
    ("Discharge to Home With Home Iv Provider", 0.002),
    ("Discharge to ICF", 0.001),
    ("Discharge to Other Facility", 0.001),
    ("Discharge-Transfer To Federal Hc", 0.0),
    ("Discharge to SNF-Medicaid Only Certified", 0.0),
];

pub const IN_ICU_MORTALITY: usize = 4;
pub const IN_HOSPITAL_MORTALITY: usize = 5;

/// Discharge class reached by each acuity class; `None` for the two mortality classes.
pub const ACUITY_TO_DISCHARGE: [Option<usize>; 18] = [
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    None,
    None,
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(10),
    Some(11),
    Some(12),
    Some(13),
    Some(14),
    Some(15),
    Some(16),
];

pub const TREATMENTS: [&str; 3] = ["ventilation", "vasopressors", "fluid-bolus"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        assert_eq!(NUM_CHANNELS, 56);
        assert_eq!(DISCHARGE_LOCATIONS.len(), 17);
        assert_eq!(ICD_CATEGORIES.len(), 18);
        assert_eq!(ACUITY_CLASSES.len(), 18);
        let total: f64 = ACUITY_CLASSES.iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(ACUITY_CLASSES[IN_ICU_MORTALITY].0, "In ICU Mortality");
        assert_eq!(ACUITY_CLASSES[IN_HOSPITAL_MORTALITY].0, "In Hospital Mortality");
    }

    #[test]
    fn acuity_discharge_mapping_is_a_bijection_onto_locations() {
        let mut seen: Vec<usize> = ACUITY_TO_DISCHARGE.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..17).collect::<Vec<_>>());
        // Shares among survivors line up with the 24h discharge shares.
        let survivors: f64 = 1.0 - ACUITY_CLASSES[IN_ICU_MORTALITY].1 - ACUITY_CLASSES[IN_HOSPITAL_MORTALITY].1;
        let discharged24: f64 = DISCHARGE_LOCATIONS[1..].iter().map(|d| d.1).sum();
        let hhc_acu = ACUITY_CLASSES[0].1 / survivors;
        let hhc_dis = DISCHARGE_LOCATIONS[1].1 / discharged24;
        assert!((hhc_acu - hhc_dis).abs() < 0.01);
    }
}
