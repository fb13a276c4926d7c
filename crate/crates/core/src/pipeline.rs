//! Run configuration and the staged pipeline:
//! extract → episodes → cohort → adr → stats → compare.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adr::{
    adr_events_csv, assign_buckets, build_adr_timeline, cohort_csv, counts_for_prevalence,
    select_cohort, validate_bucket_config, AdrEvent, BucketConfig, CohortMember, MonthBucket,
};
use crate::cohort::{
    derive_strata, group_by_patient, read_admissions, read_diagnoses, read_patients, read_smoking,
    AdmissionRecord, DiagnosisRecord, SmokingObservation, StrataConfig,
};
use crate::episodes::{build_all_episodes, episodes_csv, EpisodeThreshold, MedicationEpisode};
use crate::error::{Error, Result};
use crate::extraction::{
    collapse_daily_with, daily_events_csv, extract_corpus, mentions_csv, read_documents,
    read_prescriptions, CueConfig, DailyEvent, Mention, MentionKind,
};
use crate::lexicon::{bundled, normalize_term, AdeLexicon, DrugLexicon, SiderReference};
use crate::stats::{
    agreement_counts, chisq_csv, cohen_kappa, combined_analysis, per_trust_analysis, ppv_fdr,
    prevalence_csv, prevalence_table_for, sample_for_validation, AnalysisOptions, Dimension,
    PrevalenceCell, PrevalenceTable, StratifiedMember, TrustInput, ValidationMetrics, Verdict,
};
use crate::synth::SynthSpec;
use crate::table::{read_to_string, write_csv, CsvTable};

/// Input file locations. Relative paths resolve against the config file's
/// directory. Lexicon paths fall back to the bundled dictionaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub drugs: Option<PathBuf>,
    pub ades: Option<PathBuf>,
    pub sider: Option<PathBuf>,
    pub documents: PathBuf,
    pub prescriptions: Option<PathBuf>,
    pub patients: PathBuf,
    pub admissions: Option<PathBuf>,
    pub diagnoses: Option<PathBuf>,
    pub smoking: Option<PathBuf>,
}

impl InputPaths {
    /// Layout written by the synthetic generator.
    pub fn synthetic() -> Self {
        InputPaths {
            documents: "documents.jsonl".into(),
            patients: "patients.csv".into(),
            admissions: Some("admissions.csv".into()),
            diagnoses: Some("diagnoses.csv".into()),
            smoking: Some("smoking.csv".into()),
            ..InputPaths::default()
        }
    }

    fn named(&self) -> Vec<(&'static str, &Path)> {
        [
            ("drugs", self.drugs.as_deref()),
            ("ades", self.ades.as_deref()),
            ("sider", self.sider.as_deref()),
            ("documents", Some(self.documents.as_path())),
            ("prescriptions", self.prescriptions.as_deref()),
            ("patients", Some(self.patients.as_path())),
            ("admissions", self.admissions.as_deref()),
            ("diagnoses", self.diagnoses.as_deref()),
            ("smoking", self.smoking.as_deref()),
        ]
        .into_iter()
        .filter_map(|(name, p)| p.map(|p| (name, p)))
        .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustSettings {
    /// Dimensions this trust cannot report, on top of those inferred from
    /// the data.
    pub missing_dimensions: BTreeSet<Dimension>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub drug: String,
    pub max_gap_days: u32,
    pub per_drug_gap_days: BTreeMap<String, u32>,
    pub month_length_days: u32,
    pub index_day_in_first_month: bool,
    pub min_treatment_days: u32,
    /// Bonferroni family size; defaults to the number of ADEs analysed.
    pub bonferroni_m: Option<u32>,
    pub strict_attribution: bool,
    /// ADEs to report; defaults to every ADE in the lexicon.
    pub report_ades: Option<Vec<String>>,
    pub validation_sample_size: usize,
    pub inputs: InputPaths,
    pub cues: CueConfig,
    pub strata: StrataConfig,
    pub trusts: BTreeMap<String, TrustSettings>,
    pub synth: SynthSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: "out".into(),
            drug: "clozapine".into(),
            max_gap_days: 42,
            per_drug_gap_days: BTreeMap::new(),
            month_length_days: 30,
            index_day_in_first_month: true,
            min_treatment_days: 90,
            bonferroni_m: None,
            strict_attribution: false,
            report_ades: None,
            validation_sample_size: 300,
            inputs: InputPaths::synthetic(),
            cues: CueConfig::default(),
            strata: StrataConfig::default(),
            trusts: BTreeMap::new(),
            synth: SynthSpec::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold()?;
        validate_bucket_config(&self.buckets())?;
        if self.min_treatment_days == 0 {
            return Err(Error::Config("min_treatment_days must be positive".into()));
        }
        if self.bonferroni_m == Some(0) {
            return Err(Error::Config("bonferroni_m must be positive".into()));
        }
        if self.cues.window_tokens == 0 {
            return Err(Error::Config("cues.window_tokens must be positive".into()));
        }
        if normalize_term(&self.drug).is_empty() {
            return Err(Error::Config("drug of interest is empty".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn threshold(&self) -> Result<EpisodeThreshold> {
        let t = EpisodeThreshold {
            max_gap_days: self.max_gap_days,
            per_drug_gap_days: self
                .per_drug_gap_days
                .iter()
                .map(|(k, v)| (normalize_term(k), *v))
                .collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn buckets(&self) -> BucketConfig {
        BucketConfig {
            month_length_days: self.month_length_days,
            index_day_in_first_month: self.index_day_in_first_month,
        }
    }

    /// SHA-256 of the config with the output directory blanked, so the same
    /// run written to two places hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Lexicons {
    pub drugs: DrugLexicon,
    pub ades: AdeLexicon,
    pub sider: SiderReference,
}

pub fn load_lexicons(cfg: &RunConfig) -> Result<Lexicons> {
    let i = &cfg.inputs;
    Ok(Lexicons {
        drugs: match &i.drugs {
            Some(p) => DrugLexicon::load(&cfg.resolve(p))?,
            None => bundled::drugs(),
        },
        ades: match &i.ades {
            Some(p) => AdeLexicon::load(&cfg.resolve(p))?,
            None => bundled::ades(),
        },
        sider: match &i.sider {
            Some(p) => SiderReference::load(&cfg.resolve(p))?,
            None => bundled::sider(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiderVerdict {
    Below,
    Within,
    Above,
    NoReference,
}

impl SiderVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            SiderVerdict::Below => "below",
            SiderVerdict::Within => "within",
            SiderVerdict::Above => "above",
            SiderVerdict::NoReference => "no_reference",
        }
    }
}

impl fmt::Display for SiderVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiderComparison {
    pub ade: String,
    pub bucket: MonthBucket,
    pub pct: String,
    pub low_pct: Option<f64>,
    pub high_pct: Option<f64>,
    pub verdict: SiderVerdict,
}

/// Places an observed percentage against a reference range. An entry with
/// only one end is a single reported frequency and compares as the point
/// interval at that value.
pub fn sider_verdict(pct: f64, low: Option<f64>, high: Option<f64>) -> SiderVerdict {
    let (Some(lo), Some(hi)) = (low.or(high), high.or(low)) else {
        return SiderVerdict::NoReference;
    };
    if pct < lo {
        SiderVerdict::Below
    } else if pct > hi {
        SiderVerdict::Above
    } else {
        SiderVerdict::Within
    }
}

/// Compares trust-total cells in M+1..M+3 with the reference ranges.
/// Cells of other dimensions or buckets are ignored.
pub fn compare_with_sider(
    cells: &[PrevalenceCell],
    reference: &SiderReference,
) -> Vec<SiderComparison> {
    cells
        .iter()
        .filter(|c| c.dimension == Dimension::TrustTotal && c.bucket.is_after_index())
        .map(|c| {
            let range = reference.range(&c.ade).unwrap_or_default();
            SiderComparison {
                ade: c.ade.clone(),
                bucket: c.bucket,
                pct: c.pct_string(),
                low_pct: range.low_pct,
                high_pct: range.high_pct,
                verdict: sider_verdict(c.pct(), range.low_pct, range.high_pct),
            }
        })
        .collect()
}

pub fn sider_csv(rows: &[(String, SiderComparison)]) -> String {
    let num = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
    write_csv(
        &[
            "ade",
            "trust",
            "bucket",
            "pct",
            "sider_low",
            "sider_high",
            "verdict",
        ],
        rows.iter().map(|(trust, r)| {
            [
                r.ade.clone(),
                trust.clone(),
                r.bucket.to_string(),
                r.pct.clone(),
                num(r.low_pct),
                num(r.high_pct),
                r.verdict.to_string(),
            ]
        }),
    )
}

/// Pipeline stages in execution order; each subcommand runs up to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Extract,
    Episodes,
    Adr,
    Prevalence,
    Stats,
    CompareSider,
    ValidateSample,
}

impl Stage {
    /// Files a stage contributes to the bundle.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Extract => &["mentions.csv", "daily_events.csv"],
            Stage::Episodes => &["episodes.csv"],
            Stage::Adr => &["cohort.csv", "adr_events.csv"],
            Stage::Prevalence => &["prevalence.csv"],
            Stage::Stats => &["chisq_per_trust.csv", "chisq_combined.csv"],
            Stage::CompareSider => &["sider_compare.csv"],
            Stage::ValidateSample => &["validation_sample.csv"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub drug: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, String>,
    pub invariants: Vec<InvariantCheck>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    /// (file name, contents) in a fixed order.
    pub files: Vec<(String, String)>,
    pub manifest: RunManifest,
    pub cohort: Vec<StratifiedMember>,
    pub prevalence: Vec<(String, PrevalenceTable)>,
    pub sider: Vec<(String, SiderComparison)>,
    pub adr_events: Vec<AdrEvent>,
}

impl ReportBundle {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    /// Writes the files (and the manifest when `with_manifest`) into `dir`.
    pub fn write_to(&self, dir: &Path, with_manifest: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        }
        if with_manifest {
            let path = dir.join("run_manifest.json");
            fs::write(&path, self.manifest.to_json()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    files: Vec<(String, String)>,
    counts: BTreeMap<String, u64>,
    warnings: Vec<String>,
    invariants: Vec<InvariantCheck>,
}

impl Run<'_> {
    fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }

    fn emit(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.invariants.push(InvariantCheck {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    /// A filter stage never produces more rows than it received.
    fn check_not_more(&mut self, downstream: &str, upstream: &str) {
        let (d, u) = (self.counts[downstream], self.counts[upstream]);
        self.check(
            &format!("{downstream} <= {upstream}"),
            d <= u,
            format!("{d} vs {u}"),
        );
    }
}

fn input_digests(cfg: &RunConfig) -> Result<Vec<InputDigest>> {
    cfg.inputs
        .named()
        .into_iter()
        .map(|(name, p)| {
            let full = cfg.resolve(p);
            if !full.exists() {
                return Err(Error::MissingFile(full));
            }
            let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
            Ok(InputDigest {
                name: name.to_string(),
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

fn load_optional<T>(
    cfg: &RunConfig,
    p: &Option<PathBuf>,
    read: fn(&Path) -> Result<Vec<T>>,
) -> Result<Option<Vec<T>>> {
    p.as_ref().map(|p| read(&cfg.resolve(p))).transpose()
}

/// Runs the pipeline through `last` and returns the in-memory bundle.
/// Invariant failures are recorded in the manifest, not raised.
pub fn run_stages(cfg: &RunConfig, last: Stage) -> Result<ReportBundle> {
    cfg.validate()?;
    let inputs = input_digests(cfg)?;
    let lex = load_lexicons(cfg)?;
    let drug = lex
        .drugs
        .map_to_generic(&cfg.drug)
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("drug `{}` is not in the drug lexicon", cfg.drug)))?;
    let mut run = Run {
        cfg,
        files: Vec::new(),
        counts: BTreeMap::new(),
        warnings: Vec::new(),
        invariants: Vec::new(),
    };

    // extract
    let docs = read_documents(&cfg.resolve(&cfg.inputs.documents))?;
    run.count("documents", docs.len());
    let mut mentions = extract_corpus(&docs, &lex.drugs, &lex.ades, &cfg.cues);
    if let Some(p) = &cfg.inputs.prescriptions {
        let (rx, unknown) = read_prescriptions(&cfg.resolve(p), &lex.drugs)?;
        let unknown: BTreeSet<String> = unknown.into_iter().collect();
        for u in unknown {
            run.warnings
                .push(format!("prescription drug `{u}` is not in the lexicon"));
        }
        run.count("prescription_mentions", rx.len());
        mentions.extend(rx);
    }
    let mentions = sorted_mentions(mentions);
    let daily = collapse_daily_with(&mentions, cfg.cues.count_hedged);
    run.count("mentions", mentions.len());
    run.count("daily_events", daily.len());
    run.check_not_more("daily_events", "mentions");
    run.emit("mentions.csv", mentions_csv(&mentions));
    run.emit("daily_events.csv", daily_events_csv(&daily));
    let finish = |run: Run, cohort, prevalence, sider, adr_events| {
        finish_bundle(
            run,
            inputs.clone(),
            &drug_name(cfg),
            cohort,
            prevalence,
            sider,
            adr_events,
        )
    };
    if last == Stage::Extract {
        return Ok(finish(run, vec![], vec![], vec![], vec![]));
    }

    // episodes
    let drug_events: Vec<DailyEvent> = daily
        .iter()
        .filter(|e| e.kind == MentionKind::Drug)
        .cloned()
        .collect();
    let episodes = build_all_episodes(&drug_events, &cfg.threshold()?);
    let n_episodes: usize = episodes.values().map(Vec::len).sum();
    run.count("drug_daily_events", drug_events.len());
    run.count("episodes", n_episodes);
    run.check_not_more("episodes", "drug_daily_events");
    run.emit("episodes.csv", episodes_csv(episodes.values().flatten()));
    if last == Stage::Episodes {
        return Ok(finish(run, vec![], vec![], vec![], vec![]));
    }

    // cohort + adr
    let candidates = select_cohort(
        &episodes,
        &drug,
        cfg.min_treatment_days,
        cfg.threshold()?.gap_for(&drug),
    );
    let qualifying: Vec<CohortMember> = candidates
        .iter()
        .filter(|m| m.qualifying)
        .cloned()
        .collect();
    run.count("cohort_candidates", candidates.len());
    run.count("cohort", qualifying.len());
    run.check_not_more("cohort", "cohort_candidates");
    if qualifying.is_empty() {
        return Err(Error::EmptyCohort(drug));
    }
    let index_dates: BTreeMap<String, NaiveDate> = qualifying
        .iter()
        .map(|m| (m.patient_id.clone(), m.index_date))
        .collect();
    let adr_events = adr_timeline(&daily, &episodes, &index_dates, &cfg.buckets());
    let bucketed: Vec<&AdrEvent> = adr_events.iter().filter(|e| e.interval.is_some()).collect();
    let counted: Vec<AdrEvent> = adr_events
        .iter()
        .filter(|e| counts_for_prevalence(e, &drug, cfg.strict_attribution))
        .cloned()
        .collect();
    run.count("ade_daily_events", daily.len() - drug_events.len());
    run.count("adr_events", adr_events.len());
    run.count("adr_events_bucketed", bucketed.len());
    run.count("adr_events_counted", counted.len());
    run.check_not_more("adr_events", "ade_daily_events");
    run.check_not_more("adr_events_bucketed", "adr_events");
    run.check_not_more("adr_events_counted", "adr_events_bucketed");
    run.emit("cohort.csv", cohort_csv(&candidates));
    run.emit("adr_events.csv", adr_events_csv(&adr_events));

    let cohort = stratify(cfg, &qualifying)?;
    if last == Stage::Adr {
        return Ok(finish(run, cohort, vec![], vec![], adr_events));
    }

    // prevalence
    let ades = report_ades(cfg, &lex.ades)?;
    let trusts = trust_inputs(cfg, &cohort, &counted)?;
    let mut prevalence = Vec::new();
    for t in &trusts {
        let mut table = PrevalenceTable::default();
        for dim in Dimension::ALL {
            if t.missing.contains(&dim) {
                continue;
            }
            let part = prevalence_table_for(&t.population, &ades, dim);
            table.cells.extend(part.cells);
            table.warnings.extend(
                part.warnings
                    .into_iter()
                    .map(|w| format!("{}: {w}", t.name)),
            );
        }
        run.warnings.extend(table.warnings.iter().cloned());
        prevalence.push((t.name.clone(), table));
    }
    let n_cells: usize = prevalence.iter().map(|(_, t)| t.cells.len()).sum();
    run.count("prevalence_cells", n_cells);
    check_prevalence(&mut run, &prevalence);
    run.emit(
        "prevalence.csv",
        prevalence_csv(&prevalence, &ades, &lex.sider),
    );
    if last == Stage::Prevalence {
        return Ok(finish(run, cohort, prevalence, vec![], adr_events));
    }

    // stats
    let opts = AnalysisOptions {
        bonferroni_m: cfg.bonferroni_m,
        ..AnalysisOptions::default()
    };
    let per_trust: Vec<(String, Vec<_>)> = trusts
        .iter()
        .map(|t| (t.name.clone(), per_trust_analysis(t, &ades, &opts)))
        .collect();
    let (combined, pooled_warnings) = combined_analysis(&trusts, &ades, &opts);
    run.warnings.extend(pooled_warnings);
    let per_rows: Vec<_> = per_trust
        .iter()
        .flat_map(|(name, rows)| rows.iter().map(move |r| (Some(name.as_str()), r)))
        .collect();
    let comb_rows: Vec<_> = combined.iter().map(|r| (None, r)).collect();
    run.count("chisq_per_trust_rows", per_rows.len());
    run.count("chisq_combined_rows", comb_rows.len());
    let bad_p = per_rows
        .iter()
        .chain(&comb_rows)
        .filter_map(|(_, r)| r.result)
        .filter(|r| !(0.0..=1.0).contains(&r.p) || r.p_adjusted < r.p || r.p_adjusted > 1.0)
        .count();
    run.check(
        "chi-square p-values in range",
        bad_p == 0,
        format!("{bad_p} bad rows"),
    );
    run.emit("chisq_per_trust.csv", chisq_csv(&per_rows));
    run.emit("chisq_combined.csv", chisq_csv(&comb_rows));
    if last == Stage::Stats {
        return Ok(finish(run, cohort, prevalence, vec![], adr_events));
    }

    // compare
    let sider: Vec<(String, SiderComparison)> = prevalence
        .iter()
        .flat_map(|(trust, table)| {
            compare_with_sider(&table.cells, &lex.sider)
                .into_iter()
                .map(move |c| (trust.clone(), c))
        })
        .collect();
    run.count("sider_rows", sider.len());
    run.emit("sider_compare.csv", sider_csv(&sider));
    if last == Stage::CompareSider {
        return Ok(finish(run, cohort, prevalence, sider, adr_events));
    }

    // validation worksheet over counted post-index events
    let post: Vec<AdrEvent> = counted
        .iter()
        .filter(|e| e.interval.is_some_and(MonthBucket::is_after_index))
        .cloned()
        .collect();
    let n = cfg.validation_sample_size.min(post.len());
    if n < cfg.validation_sample_size {
        run.warnings.push(format!(
            "validation sample reduced to {n}: only {} post-index events",
            post.len()
        ));
    }
    let sample = sample_for_validation(&post, n, cfg.seed)?;
    run.count("validation_sample", sample.len());
    run.emit("validation_sample.csv", worksheet_csv(&sample));
    Ok(finish(run, cohort, prevalence, sider, adr_events))
}

fn drug_name(cfg: &RunConfig) -> String {
    normalize_term(&cfg.drug)
}

fn finish_bundle(
    run: Run,
    inputs: Vec<InputDigest>,
    drug: &str,
    cohort: Vec<StratifiedMember>,
    prevalence: Vec<(String, PrevalenceTable)>,
    sider: Vec<(String, SiderComparison)>,
    adr_events: Vec<AdrEvent>,
) -> ReportBundle {
    let outputs = run
        .files
        .iter()
        .map(|(n, c)| (n.clone(), sha256_hex(c.as_bytes())))
        .collect();
    let manifest = RunManifest {
        drug: drug.to_string(),
        seed: run.cfg.seed,
        config_sha256: run.cfg.hash(),
        inputs,
        counts: run.counts,
        outputs,
        invariants: run.invariants,
        warnings: run.warnings,
    };
    ReportBundle {
        files: run.files,
        manifest,
        cohort,
        prevalence,
        sider,
        adr_events,
    }
}

/// ADR events per patient against that patient's own episodes, bucketed
/// against cohort index dates.
fn adr_timeline(
    daily: &[DailyEvent],
    episodes: &BTreeMap<String, Vec<MedicationEpisode>>,
    index_dates: &BTreeMap<String, NaiveDate>,
    buckets: &BucketConfig,
) -> Vec<AdrEvent> {
    let ade_daily: Vec<DailyEvent> = daily
        .iter()
        .filter(|e| e.kind == MentionKind::Ade)
        .cloned()
        .collect();
    let mut out = Vec::new();
    for (patient, evs) in group_by_patient(&ade_daily, |e| &e.patient_id) {
        let eps = episodes.get(&patient).map(Vec::as_slice).unwrap_or(&[]);
        out.extend(build_adr_timeline(&evs, eps));
    }
    assign_buckets(&mut out, index_dates, buckets);
    out
}

fn report_ades(cfg: &RunConfig, lex: &AdeLexicon) -> Result<Vec<String>> {
    match &cfg.report_ades {
        None => Ok(lex
            .canonical_names()
            .into_iter()
            .map(str::to_string)
            .collect()),
        Some(list) => list
            .iter()
            .map(|a| {
                lex.lookup(a).map(str::to_string).ok_or_else(|| {
                    Error::Config(format!("report ADE `{a}` is not in the ADE lexicon"))
                })
            })
            .collect(),
    }
}

fn stratify(cfg: &RunConfig, cohort: &[CohortMember]) -> Result<Vec<StratifiedMember>> {
    let patients = read_patients(&cfg.resolve(&cfg.inputs.patients))?;
    let admissions =
        load_optional(cfg, &cfg.inputs.admissions, read_admissions)?.unwrap_or_default();
    let diagnoses = load_optional(cfg, &cfg.inputs.diagnoses, read_diagnoses)?.unwrap_or_default();
    let smoking = load_optional(cfg, &cfg.inputs.smoking, read_smoking)?.unwrap_or_default();
    let by_id: BTreeMap<&str, _> = patients
        .iter()
        .map(|p| (p.patient_id.as_str(), p))
        .collect();
    let adm = group_by_patient(&admissions, |r: &AdmissionRecord| &r.patient_id);
    let dx = group_by_patient(&diagnoses, |r: &DiagnosisRecord| &r.patient_id);
    let smk = group_by_patient(&smoking, |r: &SmokingObservation| &r.patient_id);
    let strata_cfg: &StrataConfig = &cfg.strata;
    cohort
        .iter()
        .map(|m| {
            let p = by_id.get(m.patient_id.as_str()).ok_or_else(|| {
                Error::Invariant(format!(
                    "cohort patient `{}` is missing from {}",
                    m.patient_id,
                    cfg.inputs.patients.display()
                ))
            })?;
            if p.dob > m.index_date {
                return Err(crate::cohort::invalid_dob(
                    &p.patient_id,
                    p.dob,
                    m.index_date,
                ));
            }
            Ok(StratifiedMember {
                patient_id: m.patient_id.clone(),
                trust: p.trust.clone(),
                index_date: m.index_date,
                strata: derive_strata(
                    p,
                    m.index_date,
                    for_patient(&smk, &m.patient_id),
                    for_patient(&adm, &m.patient_id),
                    for_patient(&dx, &m.patient_id),
                    strata_cfg,
                ),
            })
        })
        .collect()
}

fn for_patient<'a, T>(m: &'a BTreeMap<String, Vec<T>>, id: &str) -> &'a [T] {
    m.get(id).map(Vec::as_slice).unwrap_or(&[])
}

/// One input per trust, in name order. A trust misses smoking (admission)
/// when none of its patients has a smoking (admission) record, or when the
/// config says so.
fn trust_inputs(
    cfg: &RunConfig,
    cohort: &[StratifiedMember],
    counted: &[AdrEvent],
) -> Result<Vec<TrustInput>> {
    let patients = read_patients(&cfg.resolve(&cfg.inputs.patients))?;
    let trust_of: BTreeMap<&str, &str> = patients
        .iter()
        .map(|p| (p.patient_id.as_str(), p.trust.as_str()))
        .collect();
    let ids_with = |p: &Option<PathBuf>| -> Result<BTreeSet<String>> {
        let Some(p) = p else {
            return Ok(BTreeSet::new());
        };
        let t = CsvTable::from_path(&cfg.resolve(p))?;
        let col = t.column("patient_id")?;
        Ok(t.rows.iter().map(|r| r.get(col).to_string()).collect())
    };
    let smokers = ids_with(&cfg.inputs.smoking)?;
    let admitted = ids_with(&cfg.inputs.admissions)?;
    let mut by_trust: BTreeMap<String, Vec<StratifiedMember>> = BTreeMap::new();
    for m in cohort {
        by_trust.entry(m.trust.clone()).or_default().push(m.clone());
    }
    for name in cfg.trusts.keys() {
        if !by_trust.contains_key(name) {
            log::warn!("configured trust `{name}` has no cohort members");
        }
    }
    Ok(by_trust
        .into_iter()
        .map(|(name, members)| {
            let has = |ids: &BTreeSet<String>| {
                trust_of
                    .iter()
                    .any(|(id, t)| *t == name && ids.contains(*id))
            };
            let mut missing = cfg
                .trusts
                .get(&name)
                .map(|t| t.missing_dimensions.clone())
                .unwrap_or_default();
            if !has(&smokers) {
                missing.insert(Dimension::Smoking);
            }
            if !has(&admitted) {
                missing.insert(Dimension::Admission);
            }
            let ids: BTreeSet<&str> = members.iter().map(|m| m.patient_id.as_str()).collect();
            let events: Vec<AdrEvent> = counted
                .iter()
                .filter(|e| ids.contains(e.patient_id.as_str()))
                .cloned()
                .collect();
            TrustInput::new(name, members, &events, missing)
        })
        .collect())
}

/// Every dimension is a complete partition of the trust, so its level
/// numerators must add up to the trust-total numerator.
fn check_prevalence(run: &mut Run, tables: &[(String, PrevalenceTable)]) {
    let mut violations = Vec::new();
    for (trust, table) in tables {
        let mut total: BTreeMap<(&str, MonthBucket), u64> = BTreeMap::new();
        let mut sums: BTreeMap<(Dimension, &str, MonthBucket), u64> = BTreeMap::new();
        for c in &table.cells {
            if c.numerator > c.denominator || c.denominator == 0 {
                violations.push(format!(
                    "{trust}: bad cell {} {} {}",
                    c.ade, c.level, c.bucket
                ));
            }
            if c.dimension == Dimension::TrustTotal {
                total.insert((&c.ade, c.bucket), c.numerator);
            } else {
                *sums.entry((c.dimension, &c.ade, c.bucket)).or_default() += c.numerator;
            }
        }
        for ((dim, ade, bucket), sum) in sums {
            if total.get(&(ade, bucket)) != Some(&sum) {
                violations.push(format!(
                    "{trust}: {dim} numerators for {ade} {bucket} sum to {sum}"
                ));
            }
        }
    }
    let detail = violations.first().cloned().unwrap_or_default();
    run.check("partition consistency", violations.is_empty(), detail);
}

pub const WORKSHEET_COLUMNS: [&str; 8] = [
    "case_id",
    "patient_id",
    "ade",
    "date",
    "bucket",
    "concurrent_drugs",
    "ade_present",
    "drug_episode_correct",
];

/// A blank review sheet: reviewers fill the last two columns with y/n.
pub fn worksheet_csv(sample: &[AdrEvent]) -> String {
    write_csv(
        &WORKSHEET_COLUMNS,
        sample.iter().enumerate().map(|(i, e)| {
            [
                format!("{}", i + 1),
                e.patient_id.clone(),
                e.ade.clone(),
                e.date.to_string(),
                e.interval.map(|b| b.to_string()).unwrap_or_default(),
                e.concurrent_drugs
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join("|"),
                String::new(),
                String::new(),
            ]
        }),
    )
}

fn yes_no(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "y" | "yes" | "true" | "1" => Some(true),
        "n" | "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Scores a filled worksheet. With second-annotator columns
/// `ade_present_b` and `drug_episode_correct_b`, agreement and kappa are
/// computed on the joint (ade, drug) judgement.
pub fn score_worksheet(path: &Path) -> Result<ValidationMetrics> {
    let t = CsvTable::from_path(path)?;
    let ade = t.column("ade_present")?;
    let drug = t.column("drug_episode_correct")?;
    let second = match (
        t.column("ade_present_b"),
        t.column("drug_episode_correct_b"),
    ) {
        (Ok(a), Ok(d)) => Some((a, d)),
        _ => None,
    };
    let flag = |row, col| {
        yes_no(crate::table::Row::get(row, col))
            .ok_or_else(|| t.error(row, "expected y/n in review column"))
    };
    let mut first = Vec::new();
    let mut other = Vec::new();
    for row in &t.rows {
        first.push(Verdict {
            ade_present: flag(row, ade)?,
            drug_episode_correct: flag(row, drug)?,
        });
        if let Some((a, d)) = second {
            other.push(Verdict {
                ade_present: flag(row, a)?,
                drug_episode_correct: flag(row, d)?,
            });
        }
    }
    let mut metrics = ppv_fdr(&first)?;
    if second.is_some() {
        let a: Vec<bool> = first.iter().map(|v| v.is_true_positive()).collect();
        let b: Vec<bool> = other.iter().map(|v| v.is_true_positive()).collect();
        let k = cohen_kappa(agreement_counts(&a, &b))?;
        metrics.percent_agreement = Some(k.percent_agreement);
        metrics.kappa = Some(k.kappa);
    }
    Ok(metrics)
}

/// Full run: writes the bundle and manifest to the output directory.
/// Returns `Error::Invariant` after writing if any check failed.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ReportBundle> {
    let bundle = run_stages(cfg, Stage::ValidateSample)?;
    bundle.write_to(&cfg.output_path(), true)?;
    if let Some(bad) = bundle.manifest.invariants.iter().find(|c| !c.passed) {
        return Err(Error::Invariant(format!("{}: {}", bad.name, bad.detail)));
    }
    Ok(bundle)
}

/// Mentions sorted for output.
pub fn sorted_mentions(mut mentions: Vec<Mention>) -> Vec<Mention> {
    mentions.sort_by(|a, b| {
        (&a.patient_id, a.date, a.kind, &a.canonical, a.span).cmp(&(
            &b.patient_id,
            b.date,
            b.kind,
            &b.canonical,
            b.span,
        ))
    });
    mentions
}
