use serde::{Deserialize, Serialize};

use super::{Dimension, StratifiedMember, StudyPopulation};
use crate::adr::{AdrEvent, MonthBucket};
use crate::lexicon::SiderReference;
use crate::table::write_csv;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevalenceCell {
    pub ade: String,
    pub dimension: Dimension,
    pub level: String,
    pub bucket: MonthBucket,
    /// Distinct patients with at least one event of `ade` in `bucket`.
    pub numerator: u64,
    pub denominator: u64,
}

impl PrevalenceCell {
    pub fn pct(&self) -> f64 {
        100.0 * self.numerator as f64 / self.denominator as f64
    }

    pub fn pct_string(&self) -> String {
        format_pct(self.numerator, self.denominator)
    }
}

/// `100·num/den` with exactly two decimals, rounded half up in integer
/// arithmetic so the text never depends on float formatting.
pub fn format_pct(numerator: u64, denominator: u64) -> String {
    assert!(denominator > 0, "percentage of an empty stratum");
    let n = u128::from(numerator);
    let d = u128::from(denominator);
    let hundredths = (20_000 * n + d) / (2 * d);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub cells: Vec<PrevalenceCell>,
    /// Levels dropped because no cohort member falls in them.
    pub warnings: Vec<String>,
}

/// Prevalence for every (ade, level, bucket) of one dimension.
pub fn prevalence_table(
    cohort: &[StratifiedMember],
    adr_events: &[AdrEvent],
    ades: &[String],
    dimension: Dimension,
) -> PrevalenceTable {
    let pop = StudyPopulation::new(cohort.to_vec(), adr_events);
    prevalence_table_for(&pop, ades, dimension)
}

pub fn prevalence_table_for(
    pop: &StudyPopulation,
    ades: &[String],
    dimension: Dimension,
) -> PrevalenceTable {
    let mut table = PrevalenceTable::default();
    let level_sizes: Vec<(&str, u64)> = dimension
        .levels()
        .into_iter()
        .map(|level| {
            let n = pop
                .members()
                .iter()
                .filter(|m| dimension.level_of(&m.strata) == level)
                .count() as u64;
            (level, n)
        })
        .collect();
    for (level, n) in &level_sizes {
        if *n == 0 {
            table.warnings.push(format!(
                "{dimension}: level `{level}` is empty and was dropped"
            ));
        }
    }
    for ade in ades {
        for bucket in MonthBucket::ALL {
            for (level, total, hit) in pop.level_counts(dimension, ade, bucket) {
                if total == 0 {
                    continue;
                }
                table.cells.push(PrevalenceCell {
                    ade: ade.clone(),
                    dimension,
                    level: level.to_string(),
                    bucket,
                    numerator: hit,
                    denominator: total,
                });
            }
        }
    }
    table
}

/// Rows of `ade,trust,dimension,level,m-3..m+3,sider_low,sider_high`.
///
/// `tables` holds (trust, dimension table) pairs; output rows are ordered by
/// ADE in `ades` order, then by the order of `tables`, then by level.
pub fn prevalence_csv(
    tables: &[(String, PrevalenceTable)],
    ades: &[String],
    sider: &SiderReference,
) -> String {
    let fmt_ref = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for ade in ades {
        let range = sider.range(ade).unwrap_or_default();
        for (trust, table) in tables {
            let mut levels: Vec<(Dimension, &str)> = Vec::new();
            for c in table.cells.iter().filter(|c| &c.ade == ade) {
                if !levels.contains(&(c.dimension, c.level.as_str())) {
                    levels.push((c.dimension, c.level.as_str()));
                }
            }
            for (dimension, level) in levels {
                let mut row = vec![
                    ade.clone(),
                    trust.clone(),
                    dimension.to_string(),
                    level.to_string(),
                ];
                for bucket in MonthBucket::ALL {
                    let cell = table.cells.iter().find(|c| {
                        &c.ade == ade
                            && c.dimension == dimension
                            && c.level == level
                            && c.bucket == bucket
                    });
                    row.push(cell.map(PrevalenceCell::pct_string).unwrap_or_default());
                }
                row.push(fmt_ref(range.low_pct));
                row.push(fmt_ref(range.high_pct));
                rows.push(row);
            }
        }
    }
    write_csv(
        &[
            "ade",
            "trust",
            "dimension",
            "level",
            "m-3",
            "m-2",
            "m-1",
            "m+1",
            "m+2",
            "m+3",
            "sider_low",
            "sider_high",
        ],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::*;
    use chrono::{Duration, NaiveDate};
    use std::collections::BTreeSet;

    #[test]
    fn pct_formatting() {
        assert_eq!(format_pct(176, 514), "34.24");
        assert_eq!(format_pct(162, 514), "31.52");
        assert_eq!(format_pct(0, 7), "0.00");
        assert_eq!(format_pct(7, 7), "100.00");
        // 1/8 = 12.5 exactly; 1/800 = 0.125 rounds half up
        assert_eq!(format_pct(1, 8), "12.50");
        assert_eq!(format_pct(1, 800), "0.13");
        assert_eq!(format_pct(2, 3), "66.67");
    }

    pub(crate) fn member(id: usize, gender: Gender) -> StratifiedMember {
        StratifiedMember {
            patient_id: format!("P{id:04}"),
            trust: "T".into(),
            index_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            strata: Strata {
                gender,
                age_group: AgeGroup::From31To40,
                ethnicity: EthnicityGroup::White,
                smoking: SmokingStatus::Smoker,
                admission: Admission::Inpatient,
                diagnosis: DiagnosisCategory::Schizophrenia,
            },
        }
    }

    fn event(id: usize, ade: &str, days: i64, bucket: MonthBucket) -> AdrEvent {
        AdrEvent {
            patient_id: format!("P{id:04}"),
            ade: ade.into(),
            date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + Duration::days(days),
            concurrent_drugs: BTreeSet::new(),
            interval: Some(bucket),
        }
    }

    #[test]
    fn planted_fixture() {
        let members: Vec<_> = (0..514).map(|i| member(i, Gender::Male)).collect();
        let mut events: Vec<_> = (0..176)
            .map(|i| event(i, "agitation", 3, MonthBucket::Plus1))
            .collect();
        // Repeat events for the same patients must not double count.
        events.extend((0..50).map(|i| event(i, "agitation", 9, MonthBucket::Plus1)));
        let t = prevalence_table(
            &members,
            &events,
            &["agitation".into()],
            Dimension::TrustTotal,
        );
        let cell = t
            .cells
            .iter()
            .find(|c| c.bucket == MonthBucket::Plus1)
            .unwrap();
        assert_eq!((cell.numerator, cell.denominator), (176, 514));
        assert_eq!(cell.pct_string(), "34.24");
    }

    #[test]
    fn no_events_and_all_affected() {
        let members: Vec<_> = (0..10).map(|i| member(i, Gender::Female)).collect();
        let t = prevalence_table(&members, &[], &["fever".into()], Dimension::TrustTotal);
        assert_eq!(t.cells.len(), 6);
        assert!(t.cells.iter().all(|c| c.pct_string() == "0.00"));
        let all: Vec<_> = (0..10)
            .map(|i| event(i, "fever", -5, MonthBucket::Minus1))
            .collect();
        let t = prevalence_table(&members, &all, &["fever".into()], Dimension::TrustTotal);
        let c = t
            .cells
            .iter()
            .find(|c| c.bucket == MonthBucket::Minus1)
            .unwrap();
        assert_eq!(c.pct_string(), "100.00");
    }

    #[test]
    fn empty_levels_are_dropped_with_warning() {
        let members: Vec<_> = (0..4).map(|i| member(i, Gender::Male)).collect();
        let t = prevalence_table(&members, &[], &["fever".into()], Dimension::Gender);
        assert!(t
            .cells
            .iter()
            .all(|c| c.level == "male" && c.denominator == 4));
        assert_eq!(t.warnings.len(), 2);
    }

    #[test]
    fn csv_layout() {
        let members: Vec<_> = (0..514).map(|i| member(i, Gender::Male)).collect();
        let events: Vec<_> = (0..176)
            .map(|i| event(i, "agitation", 3, MonthBucket::Plus1))
            .collect();
        let ades = vec!["agitation".to_string()];
        let t = prevalence_table(&members, &events, &ades, Dimension::TrustTotal);
        let sider =
            SiderReference::from_reader("s", "ade,low_pct,high_pct\nagitation,4,\n".as_bytes())
                .unwrap();
        let csv = prevalence_csv(&[("Oxford".into(), t)], &ades, &sider);
        assert_eq!(
            csv,
            "ade,trust,dimension,level,m-3,m-2,m-1,m+1,m+2,m+3,sider_low,sider_high\n\
             agitation,Oxford,trust_total,all,0.00,0.00,0.00,34.24,0.00,0.00,4.00,\n"
        );
    }
}
