//! Drug and adverse-event dictionaries plus SIDER-style reference ranges.
//!
//! Terms are matched after [`normalize_term`]: lowercased, split on
//! non-alphanumeric characters and re-joined with single spaces. Every
//! alias resolves to exactly one canonical name, and canonical names
//! resolve to themselves.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{write_csv, CsvTable};

/// Lowercases `s` and collapses it to its alphanumeric tokens separated by
/// single spaces, so `"  Light-Headed "` becomes `"light headed"`.
pub fn normalize_term(s: &str) -> String {
    term_tokens(s).join(" ")
}

pub(crate) fn term_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DrugCategory {
    Antidepressants,
    Antidiabetics,
    Antiepileptics,
    Antihypertensives,
    Antipsychotics,
    AntiDementia,
    HypnoticsAnxiolytics,
    LipidRegulatory,
    MoodStabilizers,
    Nsaids,
    AntiParkinson,
}

impl DrugCategory {
    pub const ALL: [DrugCategory; 11] = [
        DrugCategory::Antidepressants,
        DrugCategory::Antidiabetics,
        DrugCategory::Antiepileptics,
        DrugCategory::Antihypertensives,
        DrugCategory::Antipsychotics,
        DrugCategory::AntiDementia,
        DrugCategory::HypnoticsAnxiolytics,
        DrugCategory::LipidRegulatory,
        DrugCategory::MoodStabilizers,
        DrugCategory::Nsaids,
        DrugCategory::AntiParkinson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DrugCategory::Antidepressants => "antidepressants",
            DrugCategory::Antidiabetics => "antidiabetics",
            DrugCategory::Antiepileptics => "antiepileptics",
            DrugCategory::Antihypertensives => "antihypertensives",
            DrugCategory::Antipsychotics => "antipsychotics",
            DrugCategory::AntiDementia => "anti-dementia",
            DrugCategory::HypnoticsAnxiolytics => "hypnotics-anxiolytics",
            DrugCategory::LipidRegulatory => "lipid-regulatory",
            DrugCategory::MoodStabilizers => "mood-stabilizers",
            DrugCategory::Nsaids => "nsaids",
            DrugCategory::AntiParkinson => "anti-parkinson",
        }
    }
}

impl fmt::Display for DrugCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DrugCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = normalize_term(s);
        DrugCategory::ALL
            .into_iter()
            .find(|c| normalize_term(c.as_str()) == key)
            .ok_or_else(|| format!("unknown drug category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugEntry {
    pub generic: String,
    pub brands: Vec<String>,
    pub category: DrugCategory,
}

/// Alias index shared by both dictionaries: normalized alias -> canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct AliasIndex {
    map: HashMap<String, String>,
}

impl AliasIndex {
    fn insert(&mut self, alias: &str, canonical: &str) -> Result<()> {
        let key = normalize_term(alias);
        if key.is_empty() {
            return Ok(());
        }
        match self.map.get(&key) {
            Some(existing) if existing != canonical => Err(Error::AmbiguousAlias {
                alias: key,
                first: existing.clone(),
                second: canonical.to_string(),
            }),
            _ => {
                self.map.insert(key, canonical.to_string());
                Ok(())
            }
        }
    }

    fn lookup(&self, surface: &str) -> Option<&str> {
        self.map.get(&normalize_term(surface)).map(String::as_str)
    }

    fn sorted(&self) -> BTreeMap<&str, &str> {
        self.map
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrugLexicon {
    entries: Vec<DrugEntry>,
    index: AliasIndex,
}

impl DrugLexicon {
    pub fn from_entries(entries: Vec<DrugEntry>) -> Result<Self> {
        let mut index = AliasIndex::default();
        let mut generics: HashMap<String, ()> = HashMap::new();
        let mut normalized = Vec::with_capacity(entries.len());
        for mut entry in entries {
            entry.generic = normalize_term(&entry.generic);
            if generics.insert(entry.generic.clone(), ()).is_some() {
                return Err(Error::AmbiguousAlias {
                    alias: entry.generic.clone(),
                    first: entry.generic.clone(),
                    second: entry.generic,
                });
            }
            index.insert(&entry.generic, &entry.generic)?;
            for brand in &entry.brands {
                index.insert(brand, &entry.generic)?;
            }
            normalized.push(entry);
        }
        Ok(DrugLexicon {
            entries: normalized,
            index,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(CsvTable::from_path(path)?)
    }

    pub fn from_reader<R: Read>(name: &str, reader: R) -> Result<Self> {
        Self::from_table(CsvTable::from_reader(name, reader)?)
    }

    fn from_table(table: CsvTable) -> Result<Self> {
        let generic = table.column("generic")?;
        let brands = table.column("brands")?;
        let category = table.column("category")?;
        let mut entries = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let name = row.get(generic);
            if name.is_empty() {
                return Err(table.error(row, "empty generic name"));
            }
            let category = row
                .get(category)
                .parse()
                .map_err(|e: String| table.error(row, e))?;
            entries.push(DrugEntry {
                generic: name.to_string(),
                brands: split_list(row.get(brands)),
                category,
            });
        }
        Self::from_entries(entries)
    }

    pub fn map_to_generic(&self, surface: &str) -> Option<&str> {
        self.index.lookup(surface)
    }

    pub fn entries(&self) -> &[DrugEntry] {
        &self.entries
    }

    pub fn category(&self, generic: &str) -> Option<DrugCategory> {
        let key = normalize_term(generic);
        self.entries
            .iter()
            .find(|e| e.generic == key)
            .map(|e| e.category)
    }

    /// Every (normalized alias, generic) pair, sorted by alias.
    pub fn aliases(&self) -> BTreeMap<&str, &str> {
        self.index.sorted()
    }

    pub fn to_csv(&self) -> String {
        write_csv(
            &["generic", "brands", "category"],
            self.entries.iter().map(|e| {
                [
                    e.generic.clone(),
                    e.brands.join("|"),
                    e.category.to_string(),
                ]
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdeEntry {
    pub canonical: String,
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdeLexicon {
    entries: Vec<AdeEntry>,
    index: AliasIndex,
}

impl AdeLexicon {
    pub fn from_entries(entries: Vec<AdeEntry>) -> Result<Self> {
        let mut index = AliasIndex::default();
        let mut seen: HashMap<String, ()> = HashMap::new();
        let mut normalized = Vec::with_capacity(entries.len());
        for mut entry in entries {
            entry.canonical = normalize_term(&entry.canonical);
            if seen.insert(entry.canonical.clone(), ()).is_some() {
                return Err(Error::AmbiguousAlias {
                    alias: entry.canonical.clone(),
                    first: entry.canonical.clone(),
                    second: entry.canonical,
                });
            }
            index.insert(&entry.canonical, &entry.canonical)?;
            for syn in &entry.synonyms {
                index.insert(syn, &entry.canonical)?;
            }
            normalized.push(entry);
        }
        Ok(AdeLexicon {
            entries: normalized,
            index,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(CsvTable::from_path(path)?)
    }

    pub fn from_reader<R: Read>(name: &str, reader: R) -> Result<Self> {
        Self::from_table(CsvTable::from_reader(name, reader)?)
    }

    fn from_table(table: CsvTable) -> Result<Self> {
        let canonical = table.column("canonical")?;
        let synonyms = table.column("synonyms")?;
        let mut entries = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let name = row.get(canonical);
            if name.is_empty() {
                return Err(table.error(row, "empty canonical ADE name"));
            }
            entries.push(AdeEntry {
                canonical: name.to_string(),
                synonyms: split_list(row.get(synonyms)),
            });
        }
        Self::from_entries(entries)
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.index.lookup(surface)
    }

    pub fn entries(&self) -> &[AdeEntry] {
        &self.entries
    }

    /// Canonical names in dictionary order.
    pub fn canonical_names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.canonical.as_str()).collect()
    }

    pub fn aliases(&self) -> BTreeMap<&str, &str> {
        self.index.sorted()
    }

    pub fn to_csv(&self) -> String {
        write_csv(
            &["canonical", "synonyms"],
            self.entries
                .iter()
                .map(|e| [e.canonical.clone(), e.synonyms.join("|")]),
        )
    }
}

/// Reported frequency range for one adverse event, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SiderRange {
    pub low_pct: Option<f64>,
    pub high_pct: Option<f64>,
}

impl SiderRange {
    pub fn is_absent(&self) -> bool {
        self.low_pct.is_none() && self.high_pct.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiderReference {
    rows: BTreeMap<String, SiderRange>,
}

impl SiderReference {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(CsvTable::from_path(path)?)
    }

    pub fn from_reader<R: Read>(name: &str, reader: R) -> Result<Self> {
        Self::from_table(CsvTable::from_reader(name, reader)?)
    }

    fn from_table(table: CsvTable) -> Result<Self> {
        let ade = table.column("ade")?;
        let low = table.column("low_pct")?;
        let high = table.column("high_pct")?;
        let mut rows = BTreeMap::new();
        for row in &table.rows {
            let pct = |col: usize| -> Result<Option<f64>> {
                let raw = row.get(col);
                if raw.is_empty() {
                    return Ok(None);
                }
                let v: f64 = raw
                    .parse()
                    .map_err(|_| table.error(row, format!("non-numeric percentage `{raw}`")))?;
                if !(0.0..=100.0).contains(&v) {
                    return Err(table.error(row, format!("percentage {v} outside [0, 100]")));
                }
                Ok(Some(v))
            };
            let range = SiderRange {
                low_pct: pct(low)?,
                high_pct: pct(high)?,
            };
            if let (Some(l), Some(h)) = (range.low_pct, range.high_pct) {
                if l > h {
                    return Err(table.error(row, format!("low {l} exceeds high {h}")));
                }
            }
            let name = normalize_term(row.get(ade));
            if name.is_empty() {
                return Err(table.error(row, "empty ADE name"));
            }
            rows.insert(name, range);
        }
        Ok(SiderReference { rows })
    }

    /// The range for `ade`, or `None` when the reference has no values for it.
    pub fn range(&self, ade: &str) -> Option<SiderRange> {
        self.rows
            .get(&normalize_term(ade))
            .copied()
            .filter(|r| !r.is_absent())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn split_list(cell: &str) -> Vec<String> {
    cell.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// The small illustrative dictionaries shipped with the crate.
pub mod bundled {
    pub const DRUGS_CSV: &str = include_str!("../data/drugs.csv");
    pub const ADES_CSV: &str = include_str!("../data/ades.csv");
    pub const SIDER_CSV: &str = include_str!("../data/sider.csv");

    use super::{AdeLexicon, DrugLexicon, SiderReference};

    pub fn drugs() -> DrugLexicon {
        DrugLexicon::from_reader("drugs.csv", DRUGS_CSV.as_bytes()).expect("bundled drugs.csv")
    }

    pub fn ades() -> AdeLexicon {
        AdeLexicon::from_reader("ades.csv", ADES_CSV.as_bytes()).expect("bundled ades.csv")
    }

    pub fn sider() -> SiderReference {
        SiderReference::from_reader("sider.csv", SIDER_CSV.as_bytes()).expect("bundled sider.csv")
    }
}
