//! Chi-square analyses per trust and on the pooled cohort.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::chisq::{ChiSquareResult, ContingencyTable};
use super::{Dimension, StratifiedMember, StudyPopulation};
use crate::adr::{AdrEvent, MonthBucket};
use crate::table::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub buckets: Vec<MonthBucket>,
    /// Bonferroni family size; defaults to the number of ADEs analysed.
    pub bonferroni_m: Option<u32>,
    pub dimensions: Vec<Dimension>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            buckets: MonthBucket::AFTER_INDEX.to_vec(),
            bonferroni_m: None,
            dimensions: Dimension::TESTED.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareRow {
    pub ade: String,
    pub dimension: Dimension,
    pub bucket: MonthBucket,
    pub table: ContingencyTable,
    /// `None` when the table is degenerate.
    pub result: Option<ChiSquareResult>,
    pub warnings: Vec<String>,
}

/// One trust's cohort and bucketed events, plus the dimensions the trust
/// could not record.
#[derive(Debug, Clone)]
pub struct TrustInput {
    pub name: String,
    pub population: StudyPopulation,
    pub missing: BTreeSet<Dimension>,
}

impl TrustInput {
    pub fn new(
        name: impl Into<String>,
        members: Vec<StratifiedMember>,
        events: &[AdrEvent],
        missing: BTreeSet<Dimension>,
    ) -> Self {
        TrustInput {
            name: name.into(),
            population: StudyPopulation::new(members, events),
            missing,
        }
    }
}

fn contingency(
    pop: &StudyPopulation,
    ade: &str,
    dimension: Dimension,
    bucket: MonthBucket,
) -> ContingencyTable {
    let mut labels = Vec::new();
    let mut cells = Vec::new();
    for (level, total, hit) in pop.level_counts(dimension, ade, bucket) {
        if total == 0 || !dimension.is_tested_level(level) {
            continue;
        }
        labels.push(level.to_string());
        cells.push(vec![hit, total - hit]);
    }
    ContingencyTable::with_labels(labels, cells)
}

fn test_row(
    pop: &StudyPopulation,
    ade: &str,
    dimension: Dimension,
    bucket: MonthBucket,
    m: u32,
) -> ChiSquareRow {
    let table = contingency(pop, ade, dimension, bucket);
    let mut warnings = Vec::new();
    let result = match ChiSquareResult::from_table(&table, m) {
        Ok(r) => {
            if table.expected().iter().flatten().any(|&e| e < 1.0) {
                warnings.push("low_expected_count".to_string());
            }
            Some(r)
        }
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    ChiSquareRow {
        ade: ade.to_string(),
        dimension,
        bucket,
        table,
        result,
        warnings,
    }
}

/// Chi-square for every (ade, dimension, bucket) of one population.
pub fn analyse_population(
    pop: &StudyPopulation,
    ades: &[String],
    opts: &AnalysisOptions,
) -> Vec<ChiSquareRow> {
    let m = opts.bonferroni_m.unwrap_or(ades.len() as u32).max(1);
    let mut rows = Vec::new();
    for ade in ades {
        for &dimension in &opts.dimensions {
            for &bucket in &opts.buckets {
                rows.push(test_row(pop, ade, dimension, bucket, m));
            }
        }
    }
    rows
}

/// Per-trust analyses; dimensions a trust lacks are skipped for it.
pub fn per_trust_analysis(
    input: &TrustInput,
    ades: &[String],
    opts: &AnalysisOptions,
) -> Vec<ChiSquareRow> {
    let opts = AnalysisOptions {
        dimensions: opts
            .dimensions
            .iter()
            .copied()
            .filter(|d| !input.missing.contains(d))
            .collect(),
        ..opts.clone()
    };
    analyse_population(&input.population, ades, &opts)
}

/// Pools every trust that records a dimension and tests the pooled cohort.
/// Returns the rows and one warning per (trust, dimension) exclusion.
pub fn combined_analysis(
    inputs: &[TrustInput],
    ades: &[String],
    opts: &AnalysisOptions,
) -> (Vec<ChiSquareRow>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for &dimension in &opts.dimensions {
        let included: Vec<&TrustInput> = inputs
            .iter()
            .filter(|t| {
                let missing = t.missing.contains(&dimension);
                if missing {
                    warnings.push(format!(
                        "trust `{}` has no {dimension} data and is excluded from the combined {dimension} analysis",
                        t.name
                    ));
                }
                !missing
            })
            .collect();
        let pooled = StudyPopulation::pooled(included.iter().map(|t| &t.population));
        let single = AnalysisOptions {
            dimensions: vec![dimension],
            ..opts.clone()
        };
        rows.extend(analyse_population(&pooled, ades, &single));
    }
    // Restore (ade, dimension, bucket) order.
    let ade_pos = |a: &str| ades.iter().position(|x| x == a).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (ade_pos(&r.ade), r.dimension, r.bucket));
    (rows, warnings)
}

fn sci(x: f64) -> String {
    // `%.2e` style: 3.84e+00
    let s = format!("{x:.2e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            format!("{mant}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

/// `[trust,]ade,dimension,bucket,statistic,df,p,p_adjusted,significant,warnings`.
pub fn chisq_csv(rows: &[(Option<&str>, &ChiSquareRow)]) -> String {
    let with_trust = rows.iter().any(|(t, _)| t.is_some());
    let mut header = vec![];
    if with_trust {
        header.push("trust");
    }
    header.extend([
        "ade",
        "dimension",
        "bucket",
        "statistic",
        "df",
        "p",
        "p_adjusted",
        "significant",
        "warnings",
    ]);
    let records = rows.iter().map(|(trust, r)| {
        let mut rec = Vec::new();
        if with_trust {
            rec.push(trust.unwrap_or("").to_string());
        }
        rec.push(r.ade.clone());
        rec.push(r.dimension.to_string());
        rec.push(r.bucket.to_string());
        match &r.result {
            Some(res) => {
                rec.push(sci(res.statistic));
                rec.push(res.df.to_string());
                rec.push(sci(res.p));
                rec.push(sci(res.p_adjusted));
                rec.push(res.significant.to_string());
            }
            None => {
                rec.extend(["", "", "", ""].map(String::from));
                rec.push("false".into());
            }
        }
        rec.push(r.warnings.join("|"));
        rec
    });
    write_csv(&header, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use std::collections::BTreeSet;

    fn member(id: usize, gender: Gender, smoking: SmokingStatus) -> StratifiedMember {
        StratifiedMember {
            patient_id: format!("P{id:04}"),
            trust: "T".into(),
            index_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            strata: Strata {
                gender,
                age_group: AgeGroup::From31To40,
                ethnicity: EthnicityGroup::White,
                smoking,
                admission: Admission::Outpatient,
                diagnosis: DiagnosisCategory::Schizophrenia,
            },
        }
    }

    fn event(id: usize) -> AdrEvent {
        AdrEvent {
            patient_id: format!("P{id:04}"),
            ade: "sedation".into(),
            date: NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(),
            concurrent_drugs: BTreeSet::new(),
            interval: Some(MonthBucket::Plus1),
        }
    }

    /// 50 men (20 affected) and 50 women (30 affected) → [[20,30],[30,20]].
    fn trust(name: &str, missing: &[Dimension]) -> TrustInput {
        let members: Vec<_> = (0..100)
            .map(|i| {
                let g = if i < 50 { Gender::Male } else { Gender::Female };
                member(i, g, SmokingStatus::Smoker)
            })
            .collect();
        let events: Vec<_> = (0..20).chain(50..80).map(event).collect();
        TrustInput::new(name, members, &events, missing.iter().copied().collect())
    }

    fn opts() -> AnalysisOptions {
        AnalysisOptions {
            buckets: vec![MonthBucket::Plus1],
            bonferroni_m: None,
            dimensions: vec![Dimension::Gender, Dimension::Smoking],
        }
    }

    #[test]
    fn gender_table_matches_hand_count() {
        let rows = per_trust_analysis(&trust("A", &[]), &["sedation".into()], &opts());
        let g = rows
            .iter()
            .find(|r| r.dimension == Dimension::Gender)
            .unwrap();
        assert_eq!(g.table.cells, vec![vec![20, 30], vec![30, 20]]);
        assert_relative_eq!(g.result.unwrap().statistic, 4.0, epsilon = 1e-12);
        // Everyone smokes: single tested level → degenerate.
        let s = rows
            .iter()
            .find(|r| r.dimension == Dimension::Smoking)
            .unwrap();
        assert!(s.result.is_none());
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn single_trust_combined_equals_per_trust() {
        let t = trust("A", &[]);
        let ades = vec!["sedation".to_string()];
        let (combined, warnings) = combined_analysis(std::slice::from_ref(&t), &ades, &opts());
        assert!(warnings.is_empty());
        assert_eq!(combined, per_trust_analysis(&t, &ades, &opts()));
    }

    #[test]
    fn identical_trusts_double_the_statistic() {
        let ades = vec!["sedation".to_string()];
        let single = per_trust_analysis(&trust("A", &[]), &ades, &opts());
        let (pooled, _) = combined_analysis(&[trust("A", &[]), trust("B", &[])], &ades, &opts());
        let s1 = single[0].result.unwrap().statistic;
        let s2 = pooled[0].result.unwrap().statistic;
        assert_eq!(pooled[0].table.cells, vec![vec![40, 60], vec![60, 40]]);
        assert_relative_eq!(s2, 2.0 * s1, epsilon = 1e-12);
    }

    #[test]
    fn trust_without_dimension_is_excluded() {
        let ades = vec!["sedation".to_string()];
        let (rows, warnings) = combined_analysis(
            &[trust("A", &[]), trust("Oxford", &[Dimension::Smoking])],
            &ades,
            &opts(),
        );
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("Oxford"));
        let g = rows
            .iter()
            .find(|r| r.dimension == Dimension::Gender)
            .unwrap();
        assert_eq!(g.table.row_sums(), vec![100, 100]);
        let per = per_trust_analysis(&trust("Oxford", &[Dimension::Smoking]), &ades, &opts());
        assert!(per.iter().all(|r| r.dimension != Dimension::Smoking));
    }

    #[test]
    fn scientific_format() {
        assert_eq!(sci(3.841459), "3.84e+00");
        assert_eq!(sci(0.05), "5.00e-02");
        assert_eq!(sci(1.5e-23), "1.50e-23");
        assert_eq!(sci(123.0), "1.23e+02");
        assert_eq!(sci(0.0), "0.00e+00");
    }
}
