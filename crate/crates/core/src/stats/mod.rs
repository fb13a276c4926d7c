//! Stratified prevalence, chi-square analyses and validation metrics.

mod agreement;
mod analysis;
mod chisq;
mod prevalence;
mod sampling;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::adr::{AdrEvent, MonthBucket};
use crate::cohort::{
    Admission, AgeGroup, DiagnosisCategory, EthnicityGroup, Gender, SmokingStatus, Strata,
};

pub use agreement::{
    agreement_counts, cohen_kappa, ppv_fdr, Agreement, ValidationMetrics, Verdict,
};
pub use analysis::{
    analyse_population, chisq_csv, combined_analysis, per_trust_analysis, AnalysisOptions,
    ChiSquareRow, TrustInput,
};
pub use chisq::{
    bonferroni, chi_square, chi_square_pvalue, ln_gamma, regularized_gamma_p, regularized_gamma_q,
    ChiSquareResult, ContingencyTable, ALPHA,
};
pub use prevalence::{
    format_pct, prevalence_csv, prevalence_table, prevalence_table_for, PrevalenceCell,
    PrevalenceTable,
};
pub use sampling::sample_for_validation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    TrustTotal,
    Gender,
    Ethnicity,
    AgeGroup,
    Smoking,
    Admission,
    Diagnosis,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::TrustTotal,
        Dimension::Gender,
        Dimension::Ethnicity,
        Dimension::AgeGroup,
        Dimension::Smoking,
        Dimension::Admission,
        Dimension::Diagnosis,
    ];

    /// Dimensions compared across levels by chi-square.
    pub const TESTED: [Dimension; 6] = [
        Dimension::Gender,
        Dimension::Ethnicity,
        Dimension::AgeGroup,
        Dimension::Smoking,
        Dimension::Admission,
        Dimension::Diagnosis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::TrustTotal => "trust_total",
            Dimension::Gender => "gender",
            Dimension::Ethnicity => "ethnicity",
            Dimension::AgeGroup => "age_group",
            Dimension::Smoking => "smoking",
            Dimension::Admission => "admission",
            Dimension::Diagnosis => "diagnosis",
        }
    }

    pub fn levels(self) -> Vec<&'static str> {
        fn labels<T: Copy + fmt::Display>(
            all: &[T],
            f: fn(T) -> &'static str,
        ) -> Vec<&'static str> {
            all.iter().map(|&x| f(x)).collect()
        }
        match self {
            Dimension::TrustTotal => vec!["all"],
            Dimension::Gender => labels(Gender::ALL, Gender::label),
            Dimension::Ethnicity => labels(EthnicityGroup::ALL, EthnicityGroup::label),
            Dimension::AgeGroup => labels(AgeGroup::ALL, AgeGroup::label),
            Dimension::Smoking => labels(SmokingStatus::ALL, SmokingStatus::label),
            Dimension::Admission => labels(Admission::ALL, Admission::label),
            Dimension::Diagnosis => labels(DiagnosisCategory::ALL, DiagnosisCategory::label),
        }
    }

    pub fn level_of(self, s: &Strata) -> &'static str {
        match self {
            Dimension::TrustTotal => "all",
            Dimension::Gender => s.gender.label(),
            Dimension::Ethnicity => s.ethnicity.label(),
            Dimension::AgeGroup => s.age_group.label(),
            Dimension::Smoking => s.smoking.label(),
            Dimension::Admission => s.admission.label(),
            Dimension::Diagnosis => s.diagnosis.label(),
        }
    }

    /// Levels that enter a chi-square table; unrecorded values are left out.
    pub fn is_tested_level(self, level: &str) -> bool {
        !matches!(
            (self, level),
            (Dimension::Gender, "unknown") | (Dimension::Smoking, "unknown")
        )
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedMember {
    pub patient_id: String,
    pub trust: String,
    pub index_date: NaiveDate,
    pub strata: Strata,
}

/// A cohort together with, for every (ade, bucket), the set of member
/// indices with at least one event there.
#[derive(Debug, Clone, Default)]
pub struct StudyPopulation {
    members: Vec<StratifiedMember>,
    affected: HashMap<(String, MonthBucket), BTreeSet<usize>>,
}

impl StudyPopulation {
    /// `events` should already be bucketed and filtered for attribution;
    /// events of patients outside `members` are ignored.
    pub fn new(members: Vec<StratifiedMember>, events: &[AdrEvent]) -> Self {
        let by_id: HashMap<&str, usize> = members
            .iter()
            .enumerate()
            .map(|(i, m)| (m.patient_id.as_str(), i))
            .collect();
        let mut affected: HashMap<(String, MonthBucket), BTreeSet<usize>> = HashMap::new();
        for ev in events {
            let (Some(bucket), Some(&i)) = (ev.interval, by_id.get(ev.patient_id.as_str())) else {
                continue;
            };
            affected
                .entry((ev.ade.clone(), bucket))
                .or_default()
                .insert(i);
        }
        StudyPopulation { members, affected }
    }

    /// Concatenates populations; patients stay distinct even when ids repeat
    /// across parts.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a StudyPopulation>) -> Self {
        let mut out = StudyPopulation::default();
        for part in parts {
            let offset = out.members.len();
            out.members.extend(part.members.iter().cloned());
            for (key, set) in &part.affected {
                out.affected
                    .entry(key.clone())
                    .or_default()
                    .extend(set.iter().map(|i| i + offset));
            }
        }
        out
    }

    pub fn members(&self) -> &[StratifiedMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub(crate) fn affected(&self, ade: &str, bucket: MonthBucket) -> Option<&BTreeSet<usize>> {
        self.affected.get(&(ade.to_string(), bucket))
    }

    /// (level, members in level, affected members in level) for each level
    /// in the dimension's fixed order.
    pub(crate) fn level_counts(
        &self,
        dimension: Dimension,
        ade: &str,
        bucket: MonthBucket,
    ) -> Vec<(&'static str, u64, u64)> {
        let affected = self.affected(ade, bucket);
        dimension
            .levels()
            .into_iter()
            .map(|level| {
                let mut total = 0;
                let mut hit = 0;
                for (i, m) in self.members.iter().enumerate() {
                    if dimension.level_of(&m.strata) == level {
                        total += 1;
                        if affected.is_some_and(|s| s.contains(&i)) {
                            hit += 1;
                        }
                    }
                }
                (level, total, hit)
            })
            .collect()
    }
}
