//! Dictionary-driven mention extraction with cue-window polarity.
//!
//! Text is tokenized into alphanumeric word runs plus the sentence-level
//! punctuation marks `.`, `;`, `?` and `!`. Lexicon terms match as token
//! sequences, longest match first. A mention is `Negated` (or `Hedged`) when
//! a configured cue occurs within `window_tokens` tokens before it with no
//! scope breaker in between.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{term_tokens, AdeLexicon, DrugLexicon};
use crate::table::{self, CsvTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalDocument {
    pub patient_id: String,
    pub doc_id: String,
    pub date: NaiveDate,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionKind {
    Drug,
    Ade,
}

impl MentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MentionKind::Drug => "drug",
            MentionKind::Ade => "ade",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negated,
    Hedged,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negated => "negated",
            Polarity::Hedged => "hedged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionSource {
    Text,
    StructuredPrescription,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub patient_id: String,
    pub date: NaiveDate,
    pub kind: MentionKind,
    pub canonical: String,
    pub surface: String,
    pub polarity: Polarity,
    pub source: MentionSource,
    /// Byte offsets into the document text; `None` for prescription rows.
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DailyEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub kind: MentionKind,
    pub canonical: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CueConfig {
    pub negation_cues: Vec<String>,
    pub hedge_cues: Vec<String>,
    pub scope_breakers: Vec<String>,
    pub window_tokens: usize,
    /// Count hedged mentions as positive evidence.
    pub count_hedged: bool,
}

impl Default for CueConfig {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        CueConfig {
            negation_cues: strings(&["no", "not", "denies", "no evidence of", "without"]),
            hedge_cues: strings(&[
                "risk of",
                "warned",
                "potential",
                "suspected",
                "monitor for",
                "?",
            ]),
            scope_breakers: strings(&["but", ".", ";"]),
            window_tokens: 5,
            count_hedged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    text: String,
    span: Range<usize>,
    word: bool,
}

const PUNCT_TOKENS: [char; 4] = ['.', ';', '?', '!'];

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            tokens.push(Token {
                text: text[s..i].to_lowercase(),
                span: s..i,
                word: true,
            });
        }
        if PUNCT_TOKENS.contains(&c) {
            tokens.push(Token {
                text: c.to_string(),
                span: i..i + c.len_utf8(),
                word: false,
            });
        }
    }
    if let Some(s) = word_start {
        tokens.push(Token {
            text: text[s..].to_lowercase(),
            span: s..text.len(),
            word: true,
        });
    }
    tokens
}

fn cue_tokens(cue: &str) -> Vec<String> {
    let words = term_tokens(cue);
    if words.is_empty() {
        // Pure punctuation cues such as "?".
        cue.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect()
    } else {
        words
    }
}

fn contains_sequence(window: &[&str], cue: &[String]) -> bool {
    !cue.is_empty()
        && window.len() >= cue.len()
        && window
            .windows(cue.len())
            .any(|w| w.iter().zip(cue).all(|(a, b)| *a == b))
}

/// Pre-tokenized cue lists.
#[derive(Debug, Clone)]
struct CueMatcher {
    negation: Vec<Vec<String>>,
    hedge: Vec<Vec<String>>,
    breakers: BTreeSet<String>,
    window: usize,
}

impl CueMatcher {
    fn new(cues: &CueConfig) -> Self {
        CueMatcher {
            negation: cues.negation_cues.iter().map(|c| cue_tokens(c)).collect(),
            hedge: cues.hedge_cues.iter().map(|c| cue_tokens(c)).collect(),
            breakers: cues
                .scope_breakers
                .iter()
                .flat_map(|c| cue_tokens(c))
                .collect(),
            window: cues.window_tokens,
        }
    }

    /// Polarity of a mention whose first token is `tokens[first]`.
    fn polarity(&self, tokens: &[Token], first: usize) -> Polarity {
        let mut window: Vec<&str> = Vec::with_capacity(self.window);
        for tok in tokens[..first].iter().rev().take(self.window) {
            if self.breakers.contains(&tok.text) {
                break;
            }
            window.push(&tok.text);
        }
        window.reverse();
        if self.negation.iter().any(|c| contains_sequence(&window, c)) {
            Polarity::Negated
        } else if self.hedge.iter().any(|c| contains_sequence(&window, c)) {
            Polarity::Hedged
        } else {
            Polarity::Positive
        }
    }
}

/// Classifies the mention occupying `span` (byte offsets) in `text`.
///
/// Negation cues take precedence over hedge cues when both are in the window.
pub fn classify_polarity(text: &str, span: Range<usize>, cues: &CueConfig) -> Result<Polarity> {
    let invalid = || Error::InvalidSpan {
        start: span.start,
        end: span.end,
        len: text.len(),
    };
    if span.start > span.end
        || span.end > text.len()
        || !text.is_char_boundary(span.start)
        || !text.is_char_boundary(span.end)
    {
        return Err(invalid());
    }
    let tokens = tokenize(text);
    let first = tokens
        .iter()
        .position(|t| t.span.end > span.start)
        .unwrap_or(tokens.len());
    Ok(CueMatcher::new(cues).polarity(&tokens, first))
}

#[derive(Debug, Clone)]
struct Term {
    tokens: Vec<String>,
    kind: MentionKind,
    canonical: String,
}

/// Token-sequence gazetteer over both dictionaries, keyed by first token.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    by_first: HashMap<String, Vec<Term>>,
}

impl Gazetteer {
    pub fn new(drugs: &DrugLexicon, ades: &AdeLexicon) -> Self {
        let mut by_first: HashMap<String, Vec<Term>> = HashMap::new();
        let sources = [
            (MentionKind::Drug, drugs.aliases()),
            (MentionKind::Ade, ades.aliases()),
        ];
        for (kind, aliases) in sources {
            for (alias, canonical) in aliases {
                let tokens = term_tokens(alias);
                if let Some(head) = tokens.first() {
                    by_first.entry(head.clone()).or_default().push(Term {
                        tokens,
                        kind,
                        canonical: canonical.to_string(),
                    });
                }
            }
        }
        // Longest first; drugs before ADEs at equal length.
        for terms in by_first.values_mut() {
            terms.sort_by(|a, b| {
                b.tokens
                    .len()
                    .cmp(&a.tokens.len())
                    .then(a.kind.cmp(&b.kind))
                    .then(a.canonical.cmp(&b.canonical))
            });
        }
        Gazetteer { by_first }
    }

    fn longest_at<'a>(&'a self, tokens: &[Token], i: usize) -> Option<&'a Term> {
        let candidates = self.by_first.get(&tokens[i].text)?;
        candidates.iter().find(|term| {
            i + term.tokens.len() <= tokens.len()
                && term
                    .tokens
                    .iter()
                    .zip(&tokens[i..])
                    .all(|(want, tok)| tok.word && tok.text == *want)
        })
    }
}

/// Extracts every dictionary mention from one document, in span order.
pub fn extract_mentions(
    doc: &ClinicalDocument,
    drugs: &DrugLexicon,
    ades: &AdeLexicon,
    cues: &CueConfig,
) -> Vec<Mention> {
    extract_with(doc, &Gazetteer::new(drugs, ades), &CueMatcher::new(cues))
}

fn extract_with(doc: &ClinicalDocument, gaz: &Gazetteer, cues: &CueMatcher) -> Vec<Mention> {
    let tokens = tokenize(&doc.text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !tokens[i].word {
            i += 1;
            continue;
        }
        match gaz.longest_at(&tokens, i) {
            Some(term) => {
                let last = i + term.tokens.len() - 1;
                let span = tokens[i].span.start..tokens[last].span.end;
                out.push(Mention {
                    patient_id: doc.patient_id.clone(),
                    date: doc.date,
                    kind: term.kind,
                    canonical: term.canonical.clone(),
                    surface: doc.text[span.clone()].to_string(),
                    polarity: cues.polarity(&tokens, i),
                    source: MentionSource::Text,
                    span: Some((span.start, span.end)),
                });
                i = last + 1;
            }
            None => i += 1,
        }
    }
    out
}

/// Extracts mentions from a corpus, one document per task when the
/// `parallel` feature is on. Output follows document order.
pub fn extract_corpus(
    docs: &[ClinicalDocument],
    drugs: &DrugLexicon,
    ades: &AdeLexicon,
    cues: &CueConfig,
) -> Vec<Mention> {
    let gaz = Gazetteer::new(drugs, ades);
    let matcher = CueMatcher::new(cues);
    #[cfg(feature = "parallel")]
    let per_doc: Vec<Vec<Mention>> = {
        use rayon::prelude::*;
        docs.par_iter()
            .map(|d| extract_with(d, &gaz, &matcher))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_doc: Vec<Vec<Mention>> = docs
        .iter()
        .map(|d| extract_with(d, &gaz, &matcher))
        .collect();
    per_doc.into_iter().flatten().collect()
}

/// Keeps positive mentions and collapses them to one event per
/// (patient, date, kind, canonical).
pub fn collapse_daily(mentions: &[Mention]) -> Vec<DailyEvent> {
    collapse_daily_with(mentions, false)
}

pub fn collapse_daily_with(mentions: &[Mention], count_hedged: bool) -> Vec<DailyEvent> {
    let set: BTreeSet<(String, NaiveDate, String, MentionKind)> = mentions
        .iter()
        .filter(|m| {
            m.polarity == Polarity::Positive || (count_hedged && m.polarity == Polarity::Hedged)
        })
        .map(|m| (m.patient_id.clone(), m.date, m.canonical.clone(), m.kind))
        .collect();
    set.into_iter()
        .map(|(patient_id, date, canonical, kind)| DailyEvent {
            patient_id,
            date,
            kind,
            canonical,
        })
        .collect()
}

/// Re-collapsing already collapsed events is the identity.
pub fn daily_events_as_mentions(events: &[DailyEvent]) -> Vec<Mention> {
    events
        .iter()
        .map(|e| Mention {
            patient_id: e.patient_id.clone(),
            date: e.date,
            kind: e.kind,
            canonical: e.canonical.clone(),
            surface: e.canonical.clone(),
            polarity: Polarity::Positive,
            source: MentionSource::Text,
            span: None,
        })
        .collect()
}

/// Reads `documents.jsonl`: one `{patient_id, doc_id, date, text}` per line.
pub fn read_documents(path: &Path) -> Result<Vec<ClinicalDocument>> {
    let name = path.display().to_string();
    let file = table::open(path)?;
    let mut docs = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: ClinicalDocument =
            serde_json::from_str(&line).map_err(|e| Error::parse(&name, line_no, e.to_string()))?;
        if !seen.insert((doc.patient_id.clone(), doc.doc_id.clone())) {
            return Err(Error::parse(
                &name,
                line_no,
                format!(
                    "duplicate doc_id `{}` for patient `{}`",
                    doc.doc_id, doc.patient_id
                ),
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn documents_to_jsonl(docs: &[ClinicalDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    out
}

/// Prescription rows as positive drug mentions. Drugs missing from the
/// lexicon are skipped and returned separately.
pub fn read_prescriptions(path: &Path, drugs: &DrugLexicon) -> Result<(Vec<Mention>, Vec<String>)> {
    let table = CsvTable::from_path(path)?;
    let patient = table.column("patient_id")?;
    let date = table.column("date")?;
    let drug = table.column("drug")?;
    let mut mentions = Vec::new();
    let mut unknown = Vec::new();
    for row in &table.rows {
        let surface = row.get(drug);
        let Some(generic) = drugs.map_to_generic(surface) else {
            unknown.push(surface.to_string());
            continue;
        };
        mentions.push(Mention {
            patient_id: row.get(patient).to_string(),
            date: table.date(row, date)?,
            kind: MentionKind::Drug,
            canonical: generic.to_string(),
            surface: surface.to_string(),
            polarity: Polarity::Positive,
            source: MentionSource::StructuredPrescription,
            span: None,
        });
    }
    Ok((mentions, unknown))
}

pub fn mentions_csv(mentions: &[Mention]) -> String {
    table::write_csv(
        &[
            "patient_id",
            "date",
            "kind",
            "canonical",
            "surface",
            "polarity",
            "source",
        ],
        mentions.iter().map(|m| {
            [
                m.patient_id.clone(),
                m.date.to_string(),
                m.kind.as_str().to_string(),
                m.canonical.clone(),
                m.surface.clone(),
                m.polarity.as_str().to_string(),
                match m.source {
                    MentionSource::Text => "text".to_string(),
                    MentionSource::StructuredPrescription => "prescription".to_string(),
                },
            ]
        }),
    )
}

pub fn daily_events_csv(events: &[DailyEvent]) -> String {
    table::write_csv(
        &["patient_id", "date", "kind", "canonical"],
        events.iter().map(|e| {
            [
                e.patient_id.clone(),
                e.date.to_string(),
                e.kind.as_str().to_string(),
                e.canonical.clone(),
            ]
        }),
    )
}
