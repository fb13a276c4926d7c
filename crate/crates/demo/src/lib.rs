//! Browser demo: three pipeline operations behind `wasm-bindgen`, each
//! taking plain text and returning JSON.

use pharmatimeline::episodes::segment_dates;
use pharmatimeline::extraction::{extract_mentions, ClinicalDocument, CueConfig};
use pharmatimeline::lexicon::bundled;
use pharmatimeline::parse_date;
use pharmatimeline::stats::{ChiSquareResult, ContingencyTable};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct EpisodeView {
    pub start: String,
    pub stop: String,
    pub evidence_count: u32,
    pub length_days: i64,
}

/// Dates separated by whitespace, commas or newlines.
pub fn segment(dates: &str, max_gap_days: u32) -> Result<Vec<EpisodeView>, String> {
    let mut parsed = Vec::new();
    for tok in dates
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
    {
        parsed.push(parse_date(tok).ok_or_else(|| format!("not a YYYY-MM-DD date: `{tok}`"))?);
    }
    parsed.sort();
    parsed.dedup();
    Ok(segment_dates(&parsed, max_gap_days)
        .into_iter()
        .map(|(start, stop, n)| EpisodeView {
            start: start.to_string(),
            stop: stop.to_string(),
            evidence_count: n,
            length_days: (stop - start).num_days(),
        })
        .collect())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct MentionView {
    pub kind: &'static str,
    pub canonical: String,
    pub surface: String,
    pub polarity: &'static str,
    pub start: usize,
    pub end: usize,
}

/// Dictionary mentions with polarity, using the bundled lexicons.
pub fn annotate(text: &str, window_tokens: usize) -> Vec<MentionView> {
    let doc = ClinicalDocument {
        patient_id: "demo".into(),
        doc_id: "demo".into(),
        date: parse_date("2000-01-01").expect("literal date"),
        text: text.to_string(),
    };
    let cues = CueConfig {
        window_tokens: window_tokens.max(1),
        ..CueConfig::default()
    };
    extract_mentions(&doc, &bundled::drugs(), &bundled::ades(), &cues)
        .into_iter()
        .map(|m| {
            let (start, end) = m.span.unwrap_or_default();
            MentionView {
                kind: m.kind.as_str(),
                canonical: m.canonical,
                surface: m.surface,
                polarity: m.polarity.as_str(),
                start,
                end,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ChiSquareView {
    pub statistic: f64,
    pub df: u32,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub expected: Vec<Vec<f64>>,
}

/// One table row per line, cells separated by commas or whitespace.
pub fn chi_square_text(cells: &str, m: u32) -> Result<ChiSquareView, String> {
    let mut rows = Vec::new();
    for line in cells.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<u64>().map_err(|_| format!("not a count: `{t}`")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err("rows have different lengths".into());
    }
    let table = ContingencyTable::new(rows);
    let r = ChiSquareResult::from_table(&table, m.max(1)).map_err(|e| e.to_string())?;
    Ok(ChiSquareView {
        statistic: r.statistic,
        df: r.df,
        p: r.p,
        p_adjusted: r.p_adjusted,
        significant: r.significant,
        expected: table.expected(),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::json!({ "ok": v }).to_string(),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[wasm_bindgen]
pub fn segment_episodes(dates: &str, max_gap_days: u32) -> String {
    to_json(segment(dates, max_gap_days))
}

#[wasm_bindgen]
pub fn annotate_text(text: &str, window_tokens: usize) -> String {
    to_json(Ok(annotate(text, window_tokens)))
}

#[wasm_bindgen]
pub fn chi_square_table(cells: &str, bonferroni_m: u32) -> String {
    to_json(chi_square_text(cells, bonferroni_m))
}
