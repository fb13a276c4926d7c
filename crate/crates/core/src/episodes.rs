//! Medication episodes from dated drug evidence.
//!
//! Per (patient, generic) the distinct evidence dates are sorted; a gap of
//! at most `max_gap_days` between consecutive dates continues the current
//! episode, a larger gap closes it at the last included date.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{DailyEvent, MentionKind};
use crate::table::write_csv;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MedicationEpisode {
    pub patient_id: String,
    pub generic: String,
    pub start: NaiveDate,
    pub stop: NaiveDate,
    /// Distinct dates of evidence inside the episode.
    pub evidence_count: u32,
}

impl MedicationEpisode {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.stop
    }

    pub fn length_days(&self) -> i64 {
        (self.stop - self.start).num_days()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeThreshold {
    pub max_gap_days: u32,
    pub per_drug_gap_days: BTreeMap<String, u32>,
}

impl Default for EpisodeThreshold {
    fn default() -> Self {
        EpisodeThreshold {
            max_gap_days: 42,
            per_drug_gap_days: BTreeMap::new(),
        }
    }
}

impl EpisodeThreshold {
    pub fn new(max_gap_days: u32) -> Result<Self> {
        let t = EpisodeThreshold {
            max_gap_days,
            ..Default::default()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_gap_days < 1 {
            return Err(Error::Config("max_gap_days must be at least 1".into()));
        }
        if let Some((drug, _)) = self.per_drug_gap_days.iter().find(|(_, &g)| g < 1) {
            return Err(Error::Config(format!(
                "per_drug_gap_days for `{drug}` must be at least 1"
            )));
        }
        Ok(())
    }

    pub fn gap_for(&self, generic: &str) -> u32 {
        self.per_drug_gap_days
            .get(generic)
            .copied()
            .unwrap_or(self.max_gap_days)
    }
}

/// Splits a sorted, deduplicated date sequence into `(start, stop, count)`.
pub fn segment_dates(dates: &[NaiveDate], max_gap_days: u32) -> Vec<(NaiveDate, NaiveDate, u32)> {
    let mut out = Vec::new();
    let Some(&first) = dates.first() else {
        return out;
    };
    let (mut start, mut stop, mut count) = (first, first, 1u32);
    for &d in &dates[1..] {
        if (d - stop).num_days() <= i64::from(max_gap_days) {
            stop = d;
            count += 1;
        } else {
            out.push((start, stop, count));
            (start, stop, count) = (d, d, 1);
        }
    }
    out.push((start, stop, count));
    out
}

/// Builds episodes for one patient. Non-drug events are ignored.
pub fn build_episodes(
    events: &[DailyEvent],
    threshold: &EpisodeThreshold,
) -> Vec<MedicationEpisode> {
    let mut by_drug: BTreeMap<(&str, &str), BTreeSet<NaiveDate>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == MentionKind::Drug) {
        by_drug
            .entry((e.canonical.as_str(), e.patient_id.as_str()))
            .or_default()
            .insert(e.date);
    }
    let mut out = Vec::new();
    for ((generic, patient), dates) in by_drug {
        let dates: Vec<_> = dates.into_iter().collect();
        for (start, stop, evidence_count) in segment_dates(&dates, threshold.gap_for(generic)) {
            out.push(MedicationEpisode {
                patient_id: patient.to_string(),
                generic: generic.to_string(),
                start,
                stop,
                evidence_count,
            });
        }
    }
    out
}

/// Groups drug events by patient and builds each patient's episodes.
pub fn build_all_episodes(
    events: &[DailyEvent],
    threshold: &EpisodeThreshold,
) -> BTreeMap<String, Vec<MedicationEpisode>> {
    let mut by_patient: BTreeMap<&str, Vec<DailyEvent>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == MentionKind::Drug) {
        by_patient.entry(&e.patient_id).or_default().push(e.clone());
    }
    let groups: Vec<(&str, Vec<DailyEvent>)> = by_patient.into_iter().collect();
    #[cfg(feature = "parallel")]
    let built: Vec<(String, Vec<MedicationEpisode>)> = {
        use rayon::prelude::*;
        groups
            .par_iter()
            .map(|(p, ev)| (p.to_string(), build_episodes(ev, threshold)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let built: Vec<(String, Vec<MedicationEpisode>)> = groups
        .iter()
        .map(|(p, ev)| (p.to_string(), build_episodes(ev, threshold)))
        .collect();
    built.into_iter().collect()
}

/// Generics whose episode covers `d` (closed intervals).
pub fn active_drugs(episodes: &[MedicationEpisode], d: NaiveDate) -> BTreeSet<String> {
    episodes
        .iter()
        .filter(|e| e.contains(d))
        .map(|e| e.generic.clone())
        .collect()
}

pub fn first_episode_start(episodes: &[MedicationEpisode], generic: &str) -> Option<NaiveDate> {
    episodes
        .iter()
        .filter(|e| e.generic == generic)
        .map(|e| e.start)
        .min()
}

/// Episodes sorted by start with a running maximum of stop dates, so a
/// point query only walks back over episodes that can still cover it.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    episodes: Vec<MedicationEpisode>,
    max_stop: Vec<NaiveDate>,
}

impl Timeline {
    pub fn new(mut episodes: Vec<MedicationEpisode>) -> Self {
        episodes.sort_by(|a, b| a.start.cmp(&b.start).then(a.stop.cmp(&b.stop)));
        let mut max_stop = Vec::with_capacity(episodes.len());
        let mut running = NaiveDate::MIN;
        for e in &episodes {
            running = running.max(e.stop);
            max_stop.push(running);
        }
        Timeline { episodes, max_stop }
    }

    pub fn episodes(&self) -> &[MedicationEpisode] {
        &self.episodes
    }

    pub fn active_at(&self, d: NaiveDate) -> BTreeSet<String> {
        let end = self.episodes.partition_point(|e| e.start <= d);
        let mut out = BTreeSet::new();
        for i in (0..end).rev() {
            if self.max_stop[i] < d {
                break;
            }
            if self.episodes[i].stop >= d {
                out.insert(self.episodes[i].generic.clone());
            }
        }
        out
    }
}

pub fn episodes_csv<'a, I>(episodes: I) -> String
where
    I: IntoIterator<Item = &'a MedicationEpisode>,
{
    write_csv(
        &["patient_id", "generic", "start", "stop", "evidence_count"],
        episodes.into_iter().map(|e| {
            [
                e.patient_id.clone(),
                e.generic.clone(),
                e.start.to_string(),
                e.stop.to_string(),
                e.evidence_count.to_string(),
            ]
        }),
    )
}
