//! Seeded synthetic corpus with planted prevalences.
//!
//! Every patient gets a clozapine mention sequence at a fixed cadence from
//! the index date. For each configured (ADE, month bucket) rate, an ADE note
//! is planted on a random day of that bucket; planted notes are rendered
//! negated or hedged with the ADE's negation rate, and unrelated negated or
//! hedged distractor notes are sprinkled in at `distractor_rate`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adr::{BucketConfig, MonthBucket};
use crate::cohort::{DiagnosisCategory, Gender};
use crate::error::{Error, Result};
use crate::extraction::{documents_to_jsonl, ClinicalDocument};
use crate::lexicon::{normalize_term, AdeLexicon};
use crate::table::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustMix {
    pub name: String,
    pub weight: f64,
    pub smoking_data: bool,
    pub admission_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantMode {
    /// Each patient is planted independently with probability `rate`.
    Random,
    /// Exactly `round(rate · qualifying)` qualifying patients are planted.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_patients: usize,
    pub trusts: Vec<TrustMix>,
    pub male_fraction: f64,
    /// Raw ethnicity strings with weights.
    pub ethnicity_mix: Vec<(String, f64)>,
    pub age_range: (u32, u32),
    pub smoker_fraction: f64,
    pub inpatient_fraction: f64,
    pub diagnosis_mix: Vec<(DiagnosisCategory, f64)>,
    /// ADE -> rates for m-3, m-2, m-1, m+1, m+2, m+3.
    pub rates: BTreeMap<String, [f64; 6]>,
    pub plant_mode: PlantMode,
    /// Days between consecutive clozapine mentions.
    pub cadence_days: u32,
    /// Treatment length range for qualifying patients, in days.
    pub treatment_days: (u32, u32),
    pub non_qualifying_fraction: f64,
    pub negation_rate: f64,
    pub negation_rate_per_ade: BTreeMap<String, f64>,
    pub distractor_rate: f64,
    pub duplicate_mention_rate: f64,
    pub first_index_date: NaiveDate,
    pub index_spread_days: u32,
    pub buckets: BucketConfig,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mix = |xs: &[(&str, f64)]| xs.iter().map(|(s, w)| (s.to_string(), *w)).collect();
        let rates = [
            ("sedation", [0.08, 0.09, 0.10, 0.30, 0.22, 0.18]),
            ("agitation", [0.15, 0.17, 0.20, 0.42, 0.29, 0.23]),
            ("fatigue", [0.11, 0.13, 0.14, 0.40, 0.31, 0.27]),
            ("hypersalivation", [0.01, 0.01, 0.02, 0.14, 0.11, 0.09]),
            ("tachycardia", [0.02, 0.02, 0.02, 0.13, 0.11, 0.08]),
            ("constipation", [0.01, 0.02, 0.02, 0.11, 0.09, 0.08]),
            ("tremor", [0.01, 0.02, 0.03, 0.05, 0.03, 0.03]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SynthSpec {
            seed: 20_180_101,
            n_patients: 600,
            trusts: vec![
                TrustMix {
                    name: "SLAM".into(),
                    weight: 0.6,
                    smoking_data: true,
                    admission_data: true,
                },
                TrustMix {
                    name: "C&I".into(),
                    weight: 0.2,
                    smoking_data: true,
                    admission_data: true,
                },
                TrustMix {
                    name: "Oxford".into(),
                    weight: 0.2,
                    smoking_data: false,
                    admission_data: false,
                },
            ],
            male_fraction: 0.65,
            ethnicity_mix: mix(&[
                ("White British", 0.45),
                ("Any other white background", 0.05),
                ("Black Caribbean", 0.12),
                ("Black African", 0.13),
                ("Indian", 0.04),
                ("Pakistani", 0.03),
                ("Chinese", 0.02),
                ("Mixed", 0.06),
                ("", 0.10),
            ]),
            age_range: (18, 85),
            smoker_fraction: 0.6,
            inpatient_fraction: 0.5,
            diagnosis_mix: vec![
                (DiagnosisCategory::Schizophrenia, 0.75),
                (DiagnosisCategory::Schizoaffective, 0.13),
                (DiagnosisCategory::Bipolar, 0.03),
                (DiagnosisCategory::OtherMental, 0.02),
                (DiagnosisCategory::OtherDiagnosis, 0.05),
                (DiagnosisCategory::NotAvailable, 0.02),
            ],
            rates,
            plant_mode: PlantMode::Random,
            cadence_days: 28,
            treatment_days: (120, 540),
            non_qualifying_fraction: 0.05,
            negation_rate: 0.0,
            negation_rate_per_ade: BTreeMap::new(),
            distractor_rate: 0.2,
            duplicate_mention_rate: 0.3,
            first_index_date: date(2012, 1, 1),
            index_spread_days: 1095,
            buckets: BucketConfig::default(),
        }
    }
}

impl SynthSpec {
    /// Single-trust preset whose planted counts reproduce selected Oxford
    /// rows of the published monthly prevalence table at n = 514.
    pub fn oxford_calibration() -> Self {
        let rows: [(&str, [f64; 6]); 10] = [
            ("agitation", [14.59, 15.76, 16.34, 34.24, 25.10, 20.62]),
            ("fatigue", [9.73, 11.87, 12.06, 35.21, 27.43, 26.85]),
            ("sedation", [7.20, 8.37, 9.34, 31.52, 21.40, 18.48]),
            ("dizziness", [3.89, 4.09, 4.47, 17.70, 13.04, 10.12]),
            ("hypersalivation", [0.97, 0.78, 1.56, 12.65, 10.70, 5.84]),
            ("weight gain", [3.50, 3.31, 3.70, 11.28, 9.92, 7.78]),
            ("tachycardia", [0.78, 1.36, 1.56, 10.89, 10.51, 7.59]),
            ("constipation", [0.58, 0.97, 1.36, 10.31, 7.78, 7.78]),
            ("headache", [3.89, 3.89, 4.09, 10.89, 8.37, 7.59]),
            ("insomnia", [5.84, 4.86, 5.84, 8.37, 6.81, 4.09]),
        ];
        SynthSpec {
            n_patients: 514,
            trusts: vec![TrustMix {
                name: "Oxford".into(),
                weight: 1.0,
                smoking_data: false,
                admission_data: false,
            }],
            rates: rows
                .into_iter()
                .map(|(k, pct)| (k.to_string(), pct.map(|p| p / 100.0)))
                .collect(),
            plant_mode: PlantMode::Exact,
            non_qualifying_fraction: 0.0,
            ..SynthSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: String, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidRate { what, value: v })
            }
        };
        check("male_fraction".into(), self.male_fraction)?;
        check("smoker_fraction".into(), self.smoker_fraction)?;
        check("inpatient_fraction".into(), self.inpatient_fraction)?;
        check(
            "non_qualifying_fraction".into(),
            self.non_qualifying_fraction,
        )?;
        check("negation_rate".into(), self.negation_rate)?;
        check("distractor_rate".into(), self.distractor_rate)?;
        check("duplicate_mention_rate".into(), self.duplicate_mention_rate)?;
        for (ade, r) in &self.negation_rate_per_ade {
            check(format!("negation rate of {ade}"), *r)?;
        }
        for (ade, rates) in &self.rates {
            for (b, r) in MonthBucket::ALL.iter().zip(rates) {
                check(format!("{ade} {b}"), *r)?;
            }
        }
        if self.cadence_days < 1 {
            return Err(Error::Config("cadence_days must be at least 1".into()));
        }
        if self.treatment_days.0 > self.treatment_days.1 {
            return Err(Error::Config("treatment_days range is inverted".into()));
        }
        if self.age_range.0 > self.age_range.1 {
            return Err(Error::Config("age_range is inverted".into()));
        }
        if self.trusts.is_empty() || self.trusts.iter().all(|t| t.weight <= 0.0) {
            return Err(Error::Config(
                "at least one trust with positive weight".into(),
            ));
        }
        Ok(())
    }

    fn negation_rate_for(&self, ade: &str) -> f64 {
        self.negation_rate_per_ade
            .get(ade)
            .copied()
            .unwrap_or(self.negation_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPatient {
    pub patient_id: String,
    pub trust: String,
    pub gender: Gender,
    pub dob: NaiveDate,
    pub ethnicity: String,
    pub index_date: NaiveDate,
    pub qualifying: bool,
    pub treatment_days: u32,
}

/// Generated tables (already serialized) plus generator bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub patients: Vec<SyntheticPatient>,
    pub documents: Vec<ClinicalDocument>,
    pub patients_csv: String,
    pub admissions_csv: String,
    pub diagnoses_csv: String,
    pub smoking_csv: String,
    /// Qualifying patients with a planted positive note, per (ade, bucket).
    pub planted_positive: BTreeMap<(String, MonthBucket), usize>,
}

impl SynthCorpus {
    pub fn qualifying_count(&self) -> usize {
        self.patients.iter().filter(|p| p.qualifying).count()
    }

    /// (file name, contents) in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("patients.csv", self.patients_csv.clone()),
            ("documents.jsonl", documents_to_jsonl(&self.documents)),
            ("admissions.csv", self.admissions_csv.clone()),
            ("diagnoses.csv", self.diagnoses_csv.clone()),
            ("smoking.csv", self.smoking_csv.clone()),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, contents) in self.files() {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn pick_weighted<'a, T>(rng: &mut ChaCha8Rng, items: &'a [(T, f64)]) -> &'a T {
    let total: f64 = items.iter().map(|(_, w)| w.max(0.0)).sum();
    let mut x = rng.random::<f64>() * total;
    for (item, w) in items {
        let w = w.max(0.0);
        if x < w {
            return item;
        }
        x -= w;
    }
    &items.last().expect("non-empty weighted list").0
}

const POSITIVE: [&str; 4] = [
    "Patient complains of {}.",
    "Staff report {} since last review.",
    "{} noted on the ward.",
    "Reports {} this week.",
];
const NEGATED: [&str; 3] = [
    "No evidence of {}.",
    "Denies any {} today.",
    "Nursing notes: no {} overnight.",
];
const HEDGED: [&str; 3] = [
    "Warned about risk of {}.",
    "Monitor for {} after titration.",
    "Suspected {}, to review.",
];
const START: [&str; 3] = [
    "Started on Clozaril 25mg at night.",
    "Commenced clozapine titration today.",
    "Denzapine started, baseline bloods taken.",
];
const CONTINUE: [&str; 3] = [
    "Continues on clozapine, bloods satisfactory.",
    "Clozaril dose reviewed in clinic.",
    "Remains on Zaponex with good engagement.",
];

fn render(template: &str, term: &str) -> String {
    let s = template.replacen("{}", term, 1);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

struct DocSink {
    docs: Vec<ClinicalDocument>,
    per_patient: BTreeMap<String, usize>,
}

impl DocSink {
    fn push(&mut self, patient: &str, date: NaiveDate, text: String) {
        let n = self.per_patient.entry(patient.to_string()).or_default();
        *n += 1;
        self.docs.push(ClinicalDocument {
            patient_id: patient.to_string(),
            doc_id: format!("{patient}-D{n:04}"),
            date,
            text,
        });
    }
}

/// Generates a corpus; identical specs yield identical output.
pub fn generate(spec: &SynthSpec, ades: &AdeLexicon) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut surfaces: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ade in spec.rates.keys() {
        let key = normalize_term(ade);
        let entry = ades
            .entries()
            .iter()
            .find(|e| e.canonical == key)
            .ok_or_else(|| Error::Config(format!("synth rate for unknown ADE `{ade}`")))?;
        let mut terms = vec![entry.canonical.clone()];
        terms.extend(entry.synonyms.iter().cloned());
        surfaces.insert(ade.clone(), terms);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let trust_weights: Vec<(&TrustMix, f64)> = spec.trusts.iter().map(|t| (t, t.weight)).collect();

    // Patient attributes.
    let mut patients = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let trust = *pick_weighted(&mut rng, &trust_weights);
        let gender = if rng.random_bool(spec.male_fraction) {
            Gender::Male
        } else {
            Gender::Female
        };
        let ethnicity = pick_weighted(&mut rng, &spec.ethnicity_mix).clone();
        let index_date = spec.first_index_date
            + Duration::days(rng.random_range(0..=i64::from(spec.index_spread_days)));
        let age = rng.random_range(spec.age_range.0..=spec.age_range.1);
        let dob = index_date
            - Duration::days(i64::from(age) * 365 + i64::from(age / 4))
            - Duration::days(rng.random_range(0..365));
        let qualifying = !rng.random_bool(spec.non_qualifying_fraction);
        let treatment_days = if qualifying {
            rng.random_range(spec.treatment_days.0.max(90)..=spec.treatment_days.1.max(90))
        } else {
            rng.random_range(0..60)
        };
        patients.push(SyntheticPatient {
            patient_id: format!("P{:05}", i + 1),
            trust: trust.name.clone(),
            gender,
            dob,
            ethnicity,
            index_date,
            qualifying,
            treatment_days,
        });
    }

    // Who gets a planted ADE note in which bucket.
    let mut planted: BTreeMap<(String, MonthBucket), Vec<bool>> = BTreeMap::new();
    let qualifying_idx: Vec<usize> = (0..patients.len())
        .filter(|&i| patients[i].qualifying)
        .collect();
    for (ade, rates) in &spec.rates {
        for (bucket, &rate) in MonthBucket::ALL.iter().zip(rates) {
            let mut hit = vec![false; patients.len()];
            match spec.plant_mode {
                PlantMode::Random => {
                    for h in hit.iter_mut() {
                        *h = rng.random_bool(rate);
                    }
                }
                PlantMode::Exact => {
                    let k = (rate * qualifying_idx.len() as f64).round() as usize;
                    for i in qualifying_idx.choose_multiple(&mut rng, k.min(qualifying_idx.len())) {
                        hit[*i] = true;
                    }
                }
            }
            planted.insert((ade.clone(), *bucket), hit);
        }
    }

    let mut sink = DocSink {
        docs: Vec::new(),
        per_patient: BTreeMap::new(),
    };
    let mut admissions = Vec::new();
    let mut diagnoses = Vec::new();
    let mut smoking = Vec::new();
    let mut planted_positive: BTreeMap<(String, MonthBucket), usize> = BTreeMap::new();
    let trust_of = |name: &str| {
        spec.trusts
            .iter()
            .find(|t| t.name == name)
            .expect("known trust")
    };

    for (pi, p) in patients.iter().enumerate() {
        let id = p.patient_id.as_str();

        // Clozapine evidence from the index date through the treatment end.
        let end = p.index_date + Duration::days(i64::from(p.treatment_days));
        let mut day = p.index_date;
        sink.push(id, day, START.choose(&mut rng).unwrap().to_string());
        loop {
            let next = day + Duration::days(i64::from(spec.cadence_days));
            if next > end {
                if day < end {
                    sink.push(id, end, CONTINUE.choose(&mut rng).unwrap().to_string());
                }
                break;
            }
            day = next;
            sink.push(id, day, CONTINUE.choose(&mut rng).unwrap().to_string());
        }

        // A prior antipsychotic before clozapine for some patients.
        if rng.random_bool(0.5) {
            let start = p.index_date - Duration::days(rng.random_range(120..200));
            let mut d = start;
            while d < p.index_date - Duration::days(14) {
                sink.push(id, d, "Remains on olanzapine, limited response.".into());
                d += Duration::days(28);
            }
        }

        for (ade, terms) in &surfaces {
            for bucket in MonthBucket::ALL {
                let (lo, hi) = spec.buckets.day_range(bucket);
                if planted[&(ade.clone(), bucket)][pi] {
                    let when = p.index_date + Duration::days(rng.random_range(lo..=hi));
                    let term = terms.choose(&mut rng).unwrap();
                    if rng.random_bool(spec.negation_rate_for(ade)) {
                        let bank = if rng.random_bool(0.5) {
                            &NEGATED
                        } else {
                            &HEDGED
                        };
                        sink.push(id, when, render(bank.choose(&mut rng).unwrap(), term));
                    } else {
                        let mut text = render(POSITIVE.choose(&mut rng).unwrap(), term);
                        if rng.random_bool(spec.duplicate_mention_rate) {
                            let again = terms.choose(&mut rng).unwrap();
                            text.push_str(&format!(" Ongoing {again} discussed with family."));
                        }
                        sink.push(id, when, text);
                        if p.qualifying {
                            *planted_positive.entry((ade.clone(), bucket)).or_default() += 1;
                        }
                    }
                }
                if rng.random_bool(spec.distractor_rate) {
                    let when = p.index_date + Duration::days(rng.random_range(lo..=hi));
                    let term = terms.choose(&mut rng).unwrap();
                    let bank = if rng.random_bool(0.5) {
                        &NEGATED
                    } else {
                        &HEDGED
                    };
                    sink.push(id, when, render(bank.choose(&mut rng).unwrap(), term));
                }
            }
        }

        let trust = trust_of(&p.trust);
        if trust.admission_data {
            if rng.random_bool(spec.inpatient_fraction) {
                let admit = p.index_date - Duration::days(rng.random_range(1..90));
                let discharge = if rng.random_bool(0.1) {
                    String::new()
                } else {
                    (p.index_date + Duration::days(rng.random_range(1..120))).to_string()
                };
                admissions.push([id.to_string(), admit.to_string(), discharge]);
            } else if rng.random_bool(0.3) {
                let admit = p.index_date - Duration::days(rng.random_range(200..800));
                let discharge = admit + Duration::days(rng.random_range(5..60));
                admissions.push([id.to_string(), admit.to_string(), discharge.to_string()]);
            }
        }

        let category = *pick_weighted(&mut rng, &spec.diagnosis_mix);
        if let Some(code) = icd10_for(category, &mut rng) {
            let offset = rng.random_range(-400..=400);
            diagnoses.push([
                id.to_string(),
                (p.index_date + Duration::days(offset)).to_string(),
                code,
            ]);
        }

        if trust.smoking_data && rng.random_bool(0.9) {
            let status = if rng.random_bool(spec.smoker_fraction) {
                "smoker"
            } else {
                "non-smoker"
            };
            let offset = rng.random_range(-150..=150);
            smoking.push([
                id.to_string(),
                (p.index_date + Duration::days(offset)).to_string(),
                status.to_string(),
            ]);
        }
    }

    let mut documents = sink.docs;
    documents.sort_by(|a, b| {
        (&a.patient_id, a.date, &a.doc_id).cmp(&(&b.patient_id, b.date, &b.doc_id))
    });

    let patients_csv = write_csv(
        &["patient_id", "dob", "gender", "ethnicity", "trust"],
        patients.iter().map(|p| {
            [
                p.patient_id.clone(),
                p.dob.to_string(),
                p.gender.label().to_string(),
                p.ethnicity.clone(),
                p.trust.clone(),
            ]
        }),
    );

    Ok(SynthCorpus {
        patients,
        documents,
        patients_csv,
        admissions_csv: write_csv(&["patient_id", "admit_date", "discharge_date"], admissions),
        diagnoses_csv: write_csv(&["patient_id", "date", "icd10"], diagnoses),
        smoking_csv: write_csv(&["patient_id", "date", "status"], smoking),
        planted_positive,
    })
}

fn icd10_for(category: DiagnosisCategory, rng: &mut ChaCha8Rng) -> Option<String> {
    let pool: &[&str] = match category {
        DiagnosisCategory::Schizophrenia => &["F20.0", "F20.5", "F22", "F23.1", "F29"],
        DiagnosisCategory::Schizoaffective => &["F25.0", "F25.1", "F25.9"],
        DiagnosisCategory::Bipolar => &["F31.2", "F31.6"],
        DiagnosisCategory::OtherMental => &["F32.2", "F41.1", "F60.3"],
        DiagnosisCategory::OtherDiagnosis => &["I10", "E11.9", "J45"],
        DiagnosisCategory::NotAvailable => return None,
    };
    pool.choose(rng).map(|s| s.to_string())
}
