//! Stratification variables derived per patient at the index date.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::CsvTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EthnicityGroup {
    White,
    Black,
    Asian,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    Under21,
    From21To30,
    From31To40,
    From41To50,
    From51To60,
    From61To70,
    From71To80,
    Above80,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SmokingStatus {
    Smoker,
    NonSmoker,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Admission {
    Inpatient,
    Outpatient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagnosisCategory {
    Schizoaffective,
    Schizophrenia,
    Bipolar,
    OtherMental,
    OtherDiagnosis,
    NotAvailable,
}

macro_rules! labels {
    ($ty:ty { $($variant:ident => $label:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $(<$ty>::$variant => $label),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

labels!(Gender { Male => "male", Female => "female", Unknown => "unknown" });
labels!(EthnicityGroup { White => "white", Black => "black", Asian => "asian", Other => "other" });
labels!(AgeGroup {
    Under21 => "under21",
    From21To30 => "21-30",
    From31To40 => "31-40",
    From41To50 => "41-50",
    From51To60 => "51-60",
    From61To70 => "61-70",
    From71To80 => "71-80",
    Above80 => "above80",
});
labels!(SmokingStatus { Smoker => "smoker", NonSmoker => "non-smoker", Unknown => "unknown" });
labels!(Admission { Inpatient => "inpatient", Outpatient => "outpatient" });
labels!(DiagnosisCategory {
    Schizoaffective => "schizoaffective",
    Schizophrenia => "schizophrenia",
    Bipolar => "bipolar",
    OtherMental => "other_mental",
    OtherDiagnosis => "other_diagnosis",
    NotAvailable => "not_available",
});

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Gender::Male,
            "f" | "female" => Gender::Female,
            "" | "u" | "unknown" | "not known" => Gender::Unknown,
            other => return Err(format!("unknown gender `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDemographics {
    pub patient_id: String,
    pub dob: NaiveDate,
    pub gender: Gender,
    pub ethnicity_raw: String,
    pub trust: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub patient_id: String,
    pub admit_date: NaiveDate,
    pub discharge_date: Option<NaiveDate>,
}

/// An ICD-10 code: one letter, two digits, optional `.subcode`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Icd10Code {
    pub letter: char,
    pub number: u8,
    pub subcode: Option<String>,
}

impl FromStr for Icd10Code {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_uppercase();
        let bad = || format!("malformed ICD-10 code `{s}`");
        let mut chars = s.chars();
        let letter = chars
            .next()
            .filter(char::is_ascii_uppercase)
            .ok_or_else(bad)?;
        let digits: String = chars.by_ref().take(2).collect();
        if digits.len() != 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let rest: String = chars.collect();
        let subcode = match rest.as_str() {
            "" => None,
            r if r.len() > 1
                && r.starts_with('.')
                && r[1..].chars().all(|c| c.is_ascii_alphanumeric()) =>
            {
                Some(r[1..].to_string())
            }
            r if r.chars().all(|c| c.is_ascii_alphanumeric()) && r.len() <= 4 => {
                Some(r.to_string())
            }
            _ => return Err(bad()),
        };
        Ok(Icd10Code {
            letter,
            number: digits.parse().map_err(|_| bad())?,
            subcode,
        })
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.letter, self.number)?;
        if let Some(s) = &self.subcode {
            write!(f, ".{s}")?;
        }
        Ok(())
    }
}

impl Icd10Code {
    pub fn category(&self) -> DiagnosisCategory {
        match (self.letter, self.number) {
            ('F', 25) => DiagnosisCategory::Schizoaffective,
            ('F', 20..=29) => DiagnosisCategory::Schizophrenia,
            ('F', 31) => DiagnosisCategory::Bipolar,
            ('F', 1..=99) => DiagnosisCategory::OtherMental,
            _ => DiagnosisCategory::OtherDiagnosis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub code: Icd10Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmokingObservationStatus {
    Smoker,
    NonSmoker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmokingObservation {
    pub patient_id: String,
    pub date: NaiveDate,
    pub status: SmokingObservationStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmokingPrecedence {
    /// Any in-window smoker observation wins.
    SmokerDominates,
    /// The observation closest to the end of the window wins.
    LatestWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisTieBreak {
    PostIndex,
    PreIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrataConfig {
    pub smoking_window_days: u32,
    pub smoking_precedence: SmokingPrecedence,
    pub diagnosis_window_days: u32,
    pub diagnosis_tie_break: DiagnosisTieBreak,
    /// Lowercased raw ethnicity -> group.
    pub ethnicity_map: BTreeMap<String, EthnicityGroup>,
}

impl Default for StrataConfig {
    fn default() -> Self {
        StrataConfig {
            smoking_window_days: 183,
            smoking_precedence: SmokingPrecedence::SmokerDominates,
            diagnosis_window_days: 183,
            diagnosis_tie_break: DiagnosisTieBreak::PostIndex,
            ethnicity_map: default_ethnicity_map(),
        }
    }
}

pub fn default_ethnicity_map() -> BTreeMap<String, EthnicityGroup> {
    use EthnicityGroup::*;
    [
        ("white", White),
        ("white british", White),
        ("white irish", White),
        ("british", White),
        ("irish", White),
        ("any other white background", White),
        ("black", Black),
        ("black british", Black),
        ("black caribbean", Black),
        ("black african", Black),
        ("caribbean", Black),
        ("african", Black),
        ("any other black background", Black),
        ("asian", Asian),
        ("asian british", Asian),
        ("indian", Asian),
        ("pakistani", Asian),
        ("bangladeshi", Asian),
        ("chinese", Asian),
        ("any other asian background", Asian),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strata {
    pub gender: Gender,
    pub age_group: AgeGroup,
    pub ethnicity: EthnicityGroup,
    pub smoking: SmokingStatus,
    pub admission: Admission,
    pub diagnosis: DiagnosisCategory,
}

/// Completed years between `dob` and `at`.
pub fn age_in_years(dob: NaiveDate, at: NaiveDate) -> u32 {
    let mut years = at.year() - dob.year();
    if (at.month(), at.day()) < (dob.month(), dob.day()) {
        years -= 1;
    }
    years.max(0) as u32
}

pub fn age_bucket(age: u32) -> AgeGroup {
    match age {
        0..=20 => AgeGroup::Under21,
        21..=30 => AgeGroup::From21To30,
        31..=40 => AgeGroup::From31To40,
        41..=50 => AgeGroup::From41To50,
        51..=60 => AgeGroup::From51To60,
        61..=70 => AgeGroup::From61To70,
        71..=80 => AgeGroup::From71To80,
        _ => AgeGroup::Above80,
    }
}

/// # Panics
/// When `dob` is after `index`.
pub fn age_group(dob: NaiveDate, index: NaiveDate) -> AgeGroup {
    assert!(
        dob <= index,
        "date of birth {dob} is after index date {index}"
    );
    age_bucket(age_in_years(dob, index))
}

pub fn ethnicity_group(raw: &str, mapping: &BTreeMap<String, EthnicityGroup>) -> EthnicityGroup {
    let key = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    mapping.get(&key).copied().unwrap_or(EthnicityGroup::Other)
}

pub fn smoking_status(
    records: &[SmokingObservation],
    index: NaiveDate,
    window_days: u32,
    precedence: SmokingPrecedence,
) -> SmokingStatus {
    let mut in_window: Vec<&SmokingObservation> = records
        .iter()
        .filter(|r| (r.date - index).num_days().abs() <= i64::from(window_days))
        .collect();
    if in_window.is_empty() {
        return SmokingStatus::Unknown;
    }
    let to_status = |s: SmokingObservationStatus| match s {
        SmokingObservationStatus::Smoker => SmokingStatus::Smoker,
        SmokingObservationStatus::NonSmoker => SmokingStatus::NonSmoker,
    };
    match precedence {
        SmokingPrecedence::SmokerDominates => {
            if in_window
                .iter()
                .any(|r| r.status == SmokingObservationStatus::Smoker)
            {
                SmokingStatus::Smoker
            } else {
                SmokingStatus::NonSmoker
            }
        }
        SmokingPrecedence::LatestWins => {
            // Same-day conflicts resolve to smoker.
            in_window.sort_by_key(|r| (r.date, r.status == SmokingObservationStatus::Smoker));
            to_status(in_window.last().unwrap().status)
        }
    }
}

pub fn admission_status(admissions: &[AdmissionRecord], index: NaiveDate) -> Admission {
    let inside = admissions
        .iter()
        .any(|a| a.admit_date <= index && a.discharge_date.is_none_or(|d| index <= d));
    if inside {
        Admission::Inpatient
    } else {
        Admission::Outpatient
    }
}

/// Searches a window of `initial_window_days` around the index, doubling it
/// until a record falls inside, then classifies the closest record. Ties in
/// distance go to `tie_break`'s side, then to the highest-priority category.
pub fn diagnosis_category(
    diagnoses: &[DiagnosisRecord],
    index: NaiveDate,
    initial_window_days: u32,
    tie_break: DiagnosisTieBreak,
) -> DiagnosisCategory {
    let Some(max_distance) = diagnoses
        .iter()
        .map(|r| (r.date - index).num_days().abs())
        .max()
    else {
        return DiagnosisCategory::NotAvailable;
    };
    let mut window = i64::from(initial_window_days.max(1));
    loop {
        let best = diagnoses
            .iter()
            .filter(|r| (r.date - index).num_days().abs() <= window)
            .min_by_key(|r| {
                let delta = (r.date - index).num_days();
                let wrong_side = match tie_break {
                    DiagnosisTieBreak::PostIndex => delta < 0,
                    DiagnosisTieBreak::PreIndex => delta > 0,
                };
                (delta.abs(), wrong_side, r.code.category())
            });
        if let Some(r) = best {
            return r.code.category();
        }
        if window >= max_distance {
            return DiagnosisCategory::NotAvailable;
        }
        window = window.saturating_mul(2);
    }
}

pub fn derive_strata(
    patient: &PatientDemographics,
    index: NaiveDate,
    smoking: &[SmokingObservation],
    admissions: &[AdmissionRecord],
    diagnoses: &[DiagnosisRecord],
    cfg: &StrataConfig,
) -> Strata {
    Strata {
        gender: patient.gender,
        age_group: age_group(patient.dob, index),
        ethnicity: ethnicity_group(&patient.ethnicity_raw, &cfg.ethnicity_map),
        smoking: smoking_status(
            smoking,
            index,
            cfg.smoking_window_days,
            cfg.smoking_precedence,
        ),
        admission: admission_status(admissions, index),
        diagnosis: diagnosis_category(
            diagnoses,
            index,
            cfg.diagnosis_window_days,
            cfg.diagnosis_tie_break,
        ),
    }
}

pub fn read_patients(path: &Path) -> Result<Vec<PatientDemographics>> {
    let t = CsvTable::from_path(path)?;
    let (id, dob, gender, eth, trust) = (
        t.column("patient_id")?,
        t.column("dob")?,
        t.column("gender")?,
        t.column("ethnicity")?,
        t.column("trust")?,
    );
    let mut seen = std::collections::BTreeSet::new();
    t.rows
        .iter()
        .map(|row| {
            let patient_id = row.get(id).to_string();
            if !seen.insert(patient_id.clone()) {
                return Err(t.error(row, format!("duplicate patient_id `{patient_id}`")));
            }
            Ok(PatientDemographics {
                patient_id,
                dob: t.date(row, dob)?,
                gender: row
                    .get(gender)
                    .parse()
                    .map_err(|e: String| t.error(row, e))?,
                ethnicity_raw: row.get(eth).to_string(),
                trust: row.get(trust).to_string(),
            })
        })
        .collect()
}

pub fn read_admissions(path: &Path) -> Result<Vec<AdmissionRecord>> {
    let t = CsvTable::from_path(path)?;
    let (id, admit, discharge) = (
        t.column("patient_id")?,
        t.column("admit_date")?,
        t.column("discharge_date")?,
    );
    t.rows
        .iter()
        .map(|row| {
            let rec = AdmissionRecord {
                patient_id: row.get(id).to_string(),
                admit_date: t.date(row, admit)?,
                discharge_date: t.opt_date(row, discharge)?,
            };
            if rec.discharge_date.is_some_and(|d| d < rec.admit_date) {
                return Err(t.error(row, "discharge_date precedes admit_date"));
            }
            Ok(rec)
        })
        .collect()
}

pub fn read_diagnoses(path: &Path) -> Result<Vec<DiagnosisRecord>> {
    let t = CsvTable::from_path(path)?;
    let (id, date, code) = (
        t.column("patient_id")?,
        t.column("date")?,
        t.column("icd10")?,
    );
    t.rows
        .iter()
        .map(|row| {
            Ok(DiagnosisRecord {
                patient_id: row.get(id).to_string(),
                date: t.date(row, date)?,
                code: row.get(code).parse().map_err(|e: String| t.error(row, e))?,
            })
        })
        .collect()
}

pub fn read_smoking(path: &Path) -> Result<Vec<SmokingObservation>> {
    let t = CsvTable::from_path(path)?;
    let (id, date, status) = (
        t.column("patient_id")?,
        t.column("date")?,
        t.column("status")?,
    );
    t.rows
        .iter()
        .map(|row| {
            let status = match row.get(status).to_ascii_lowercase().as_str() {
                "smoker" => SmokingObservationStatus::Smoker,
                "non-smoker" => SmokingObservationStatus::NonSmoker,
                other => {
                    return Err(t.error(row, format!("unknown smoking status `{other}`")));
                }
            };
            Ok(SmokingObservation {
                patient_id: row.get(id).to_string(),
                date: t.date(row, date)?,
                status,
            })
        })
        .collect()
}

/// Groups records by patient id, preserving input order within a patient.
pub fn group_by_patient<T: Clone>(
    records: &[T],
    patient_of: impl Fn(&T) -> &str,
) -> BTreeMap<String, Vec<T>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for r in records {
        out.entry(patient_of(r).to_string())
            .or_default()
            .push(r.clone());
    }
    out
}

pub(crate) fn invalid_dob(patient: &str, dob: NaiveDate, index: NaiveDate) -> Error {
    Error::Invariant(format!(
        "patient `{patient}`: date of birth {dob} is after index date {index}"
    ))
}
