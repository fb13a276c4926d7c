//! Validation metrics: PPV/FDR against human review and inter-annotator
//! agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Observed agreement in percent.
    pub percent_agreement: f64,
    pub kappa: f64,
}

/// Cohen's kappa for a 2×2 table `[[both yes, a yes / b no], [a no / b yes, both no]]`.
pub fn cohen_kappa(confusion: [[u64; 2]; 2]) -> Result<Agreement> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::EmptySample);
    }
    let n = total as f64;
    let observed = (confusion[0][0] + confusion[1][1]) as f64 / n;
    let row0 = (confusion[0][0] + confusion[0][1]) as f64 / n;
    let col0 = (confusion[0][0] + confusion[1][0]) as f64 / n;
    let chance = row0 * col0 + (1.0 - row0) * (1.0 - col0);
    if (1.0 - chance).abs() < f64::EPSILON {
        return Err(Error::UndefinedKappa);
    }
    Ok(Agreement {
        percent_agreement: 100.0 * observed,
        kappa: (observed - chance) / (1.0 - chance),
    })
}

/// A reviewer's verdict on one sampled ADR event. The event is a true
/// positive only when both the adverse event and the linked medication
/// episode are confirmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub ade_present: bool,
    pub drug_episode_correct: bool,
}

impl Verdict {
    pub fn is_true_positive(self) -> bool {
        self.ade_present && self.drug_episode_correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub ppv: f64,
    pub fdr: f64,
    pub percent_agreement: Option<f64>,
    pub kappa: Option<f64>,
}

pub fn ppv_fdr(verdicts: &[Verdict]) -> Result<ValidationMetrics> {
    if verdicts.is_empty() {
        return Err(Error::EmptySample);
    }
    let tp = verdicts.iter().filter(|v| v.is_true_positive()).count();
    let ppv = tp as f64 / verdicts.len() as f64;
    Ok(ValidationMetrics {
        ppv,
        fdr: 1.0 - ppv,
        percent_agreement: None,
        kappa: None,
    })
}

/// 2×2 agreement counts from two annotators' yes/no labels on the same items.
pub fn agreement_counts(a: &[bool], b: &[bool]) -> [[u64; 2]; 2] {
    let mut c = [[0u64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        c[usize::from(!x)][usize::from(!y)] += 1;
    }
    c
}
