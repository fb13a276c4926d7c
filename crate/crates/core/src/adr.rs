//! ADR timeline: adverse-event days joined to the drugs active on them,
//! bucketed into monthly intervals around each patient's index date.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::episodes::{MedicationEpisode, Timeline};
use crate::error::{Error, Result};
use crate::extraction::{DailyEvent, MentionKind};
use crate::table::write_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MonthBucket {
    #[serde(rename = "m-3")]
    Minus3,
    #[serde(rename = "m-2")]
    Minus2,
    #[serde(rename = "m-1")]
    Minus1,
    #[serde(rename = "m+1")]
    Plus1,
    #[serde(rename = "m+2")]
    Plus2,
    #[serde(rename = "m+3")]
    Plus3,
}

impl MonthBucket {
    pub const ALL: [MonthBucket; 6] = [
        MonthBucket::Minus3,
        MonthBucket::Minus2,
        MonthBucket::Minus1,
        MonthBucket::Plus1,
        MonthBucket::Plus2,
        MonthBucket::Plus3,
    ];

    pub const AFTER_INDEX: [MonthBucket; 3] =
        [MonthBucket::Plus1, MonthBucket::Plus2, MonthBucket::Plus3];

    pub fn as_str(self) -> &'static str {
        match self {
            MonthBucket::Minus3 => "m-3",
            MonthBucket::Minus2 => "m-2",
            MonthBucket::Minus1 => "m-1",
            MonthBucket::Plus1 => "m+1",
            MonthBucket::Plus2 => "m+2",
            MonthBucket::Plus3 => "m+3",
        }
    }

    pub fn is_after_index(self) -> bool {
        matches!(
            self,
            MonthBucket::Plus1 | MonthBucket::Plus2 | MonthBucket::Plus3
        )
    }

    /// Signed month number: -3..=-1 or 1..=3.
    pub fn offset(self) -> i64 {
        match self {
            MonthBucket::Minus3 => -3,
            MonthBucket::Minus2 => -2,
            MonthBucket::Minus1 => -1,
            MonthBucket::Plus1 => 1,
            MonthBucket::Plus2 => 2,
            MonthBucket::Plus3 => 3,
        }
    }

    fn from_offset(k: i64) -> Option<Self> {
        Some(match k {
            -3 => MonthBucket::Minus3,
            -2 => MonthBucket::Minus2,
            -1 => MonthBucket::Minus1,
            1 => MonthBucket::Plus1,
            2 => MonthBucket::Plus2,
            3 => MonthBucket::Plus3,
            _ => return None,
        })
    }

    pub fn parse(s: &str) -> Option<Self> {
        MonthBucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for MonthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketConfig {
    pub month_length_days: u32,
    /// When false the index day closes the last pre-index month instead.
    pub index_day_in_first_month: bool,
}

impl Default for BucketConfig {
    fn default() -> Self {
        BucketConfig {
            month_length_days: 30,
            index_day_in_first_month: true,
        }
    }
}

impl BucketConfig {
    pub fn bucket(&self, index: NaiveDate, event: NaiveDate) -> Option<MonthBucket> {
        let len = i64::from(self.month_length_days.max(1));
        let mut delta = (event - index).num_days();
        if !self.index_day_in_first_month {
            // Shift so that (-len, 0] maps like [-len, 0) does by default.
            delta -= 1;
        }
        let k = delta.div_euclid(len);
        MonthBucket::from_offset(if k >= 0 { k + 1 } else { k })
    }

    /// The inclusive day-offset range covered by `bucket`.
    pub fn day_range(&self, bucket: MonthBucket) -> (i64, i64) {
        let len = i64::from(self.month_length_days.max(1));
        let k = bucket.offset();
        let lo = if k > 0 { (k - 1) * len } else { k * len };
        let shift = i64::from(!self.index_day_in_first_month);
        (lo + shift, lo + len - 1 + shift)
    }
}

/// Default 30-day buckets with the index day in the first month after it.
pub fn month_bucket(index: NaiveDate, event: NaiveDate) -> Option<MonthBucket> {
    BucketConfig::default().bucket(index, event)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdrEvent {
    pub patient_id: String,
    pub ade: String,
    pub date: NaiveDate,
    pub concurrent_drugs: BTreeSet<String>,
    pub interval: Option<MonthBucket>,
}

/// One event per ADE day, with the drugs active that day. Events with no
/// active drug are kept with an empty set.
pub fn build_adr_timeline(
    ade_events: &[DailyEvent],
    episodes: &[MedicationEpisode],
) -> Vec<AdrEvent> {
    let timeline = Timeline::new(episodes.to_vec());
    ade_events
        .iter()
        .filter(|e| e.kind == MentionKind::Ade)
        .map(|e| AdrEvent {
            patient_id: e.patient_id.clone(),
            ade: e.canonical.clone(),
            date: e.date,
            concurrent_drugs: timeline.active_at(e.date),
            interval: None,
        })
        .collect()
}

/// Sets `interval` on every event relative to its patient's index date.
pub fn assign_buckets(
    events: &mut [AdrEvent],
    index_dates: &BTreeMap<String, NaiveDate>,
    buckets: &BucketConfig,
) {
    for ev in events {
        ev.interval = index_dates
            .get(&ev.patient_id)
            .and_then(|&idx| buckets.bucket(idx, ev.date));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CohortMember {
    pub patient_id: String,
    pub index_date: NaiveDate,
    pub qualifying: bool,
}

/// Members are patients with at least one episode of `drug`. A member
/// qualifies when episodes chained with gaps of at most `max_gap_days`
/// cover `min_days` from the index date.
pub fn select_cohort(
    episodes: &BTreeMap<String, Vec<MedicationEpisode>>,
    drug: &str,
    min_days: u32,
    max_gap_days: u32,
) -> Vec<CohortMember> {
    let mut out = Vec::new();
    for (patient, eps) in episodes {
        let mut mine: Vec<&MedicationEpisode> = eps.iter().filter(|e| e.generic == drug).collect();
        if mine.is_empty() {
            continue;
        }
        mine.sort_by_key(|e| (e.start, e.stop));
        let index_date = mine[0].start;
        let target = index_date + Duration::days(i64::from(min_days));
        let mut covered = mine[0].stop;
        for e in &mine[1..] {
            if covered >= target {
                break;
            }
            if (e.start - covered).num_days() > i64::from(max_gap_days) {
                break;
            }
            covered = covered.max(e.stop);
        }
        out.push(CohortMember {
            patient_id: patient.clone(),
            index_date,
            qualifying: covered >= target,
        });
    }
    out
}

/// Whether an event counts toward prevalence. Pre-index events always
/// count; in strict mode post-index events need `drug` among the active
/// drugs.
pub fn counts_for_prevalence(ev: &AdrEvent, drug: &str, strict: bool) -> bool {
    match ev.interval {
        None => false,
        Some(b) if b.is_after_index() && strict => ev.concurrent_drugs.contains(drug),
        Some(_) => true,
    }
}

pub fn adr_events_csv(events: &[AdrEvent]) -> String {
    write_csv(
        &["patient_id", "ade", "date", "bucket", "concurrent_drugs"],
        events.iter().map(|e| {
            [
                e.patient_id.clone(),
                e.ade.clone(),
                e.date.to_string(),
                e.interval
                    .map(|b| b.as_str().to_string())
                    .unwrap_or_default(),
                e.concurrent_drugs
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join("|"),
            ]
        }),
    )
}

pub fn cohort_csv(members: &[CohortMember]) -> String {
    write_csv(
        &["patient_id", "index_date", "qualifying"],
        members.iter().map(|m| {
            [
                m.patient_id.clone(),
                m.index_date.to_string(),
                m.qualifying.to_string(),
            ]
        }),
    )
}

pub fn validate_bucket_config(cfg: &BucketConfig) -> Result<()> {
    if cfg.month_length_days < 1 {
        return Err(Error::Config("month_length_days must be at least 1".into()));
    }
    Ok(())
}
