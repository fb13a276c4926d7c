//! Medication timelines and adverse drug reaction prevalence from clinical
//! free text.
//!
//! The pipeline runs lexicon lookup, mention extraction with negation and
//! hedging, medication episode segmentation, ADR attribution to month
//! buckets around a drug's index date, cohort stratification, and
//! prevalence / chi-square reporting.

pub mod adr;
pub mod cohort;
pub mod episodes;
mod error;
pub mod extraction;
pub mod lexicon;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub(crate) mod table;

pub use error::{Error, Result};
pub use table::parse_date;
