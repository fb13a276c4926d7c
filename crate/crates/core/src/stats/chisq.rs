//! Pearson chi-square test of independence on an r×c table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub cells: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(cells: Vec<Vec<u64>>) -> Self {
        let row_labels = (0..cells.len()).map(|i| i.to_string()).collect();
        ContingencyTable { row_labels, cells }
    }

    pub fn with_labels(row_labels: Vec<String>, cells: Vec<Vec<u64>>) -> Self {
        ContingencyTable { row_labels, cells }
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols())
            .map(|j| self.cells.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Expected counts under independence.
    pub fn expected(&self) -> Vec<Vec<f64>> {
        let rows = self.row_sums();
        let cols = self.col_sums();
        let total: u64 = rows.iter().sum();
        rows.iter()
            .map(|&r| {
                cols.iter()
                    .map(|&c| r as f64 * c as f64 / total as f64)
                    .collect()
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.rows() < 2 || self.cols() < 2 {
            return Err(Error::DegenerateTable(format!(
                "need at least 2×2, got {}×{}",
                self.rows(),
                self.cols()
            )));
        }
        if self.cells.iter().any(|r| r.len() != self.cols()) {
            return Err(Error::DegenerateTable("ragged rows".into()));
        }
        if let Some(i) = self.row_sums().iter().position(|&s| s == 0) {
            return Err(Error::DegenerateTable(format!(
                "row `{}` has a zero margin",
                self.row_labels.get(i).map_or("?", String::as_str)
            )));
        }
        if let Some(j) = self.col_sums().iter().position(|&s| s == 0) {
            return Err(Error::DegenerateTable(format!(
                "column {j} has a zero margin"
            )));
        }
        Ok(())
    }
}

/// Pearson statistic and degrees of freedom, no continuity correction.
pub fn chi_square(table: &ContingencyTable) -> Result<(f64, u32)> {
    table.check()?;
    let expected = table.expected();
    let mut stat = 0.0;
    for (obs_row, exp_row) in table.cells.iter().zip(&expected) {
        for (&o, &e) in obs_row.iter().zip(exp_row) {
            let diff = o as f64 - e;
            stat += diff * diff / e;
        }
    }
    let df = ((table.rows() - 1) * (table.cols() - 1)) as u32;
    Ok((stat, df))
}

/// Upper-tail probability of the chi-square distribution.
pub fn chi_square_pvalue(statistic: f64, df: u32) -> f64 {
    assert!(df >= 1, "chi-square needs df >= 1");
    if statistic <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(f64::from(df) / 2.0, statistic / 2.0)
}

pub fn bonferroni(p: f64, m: u32) -> f64 {
    (p * f64::from(m.max(1))).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

impl ChiSquareResult {
    pub fn from_table(table: &ContingencyTable, m: u32) -> Result<Self> {
        let (statistic, df) = chi_square(table)?;
        let p = chi_square_pvalue(statistic, df);
        let p_adjusted = bonferroni(p, m);
        Ok(ChiSquareResult {
            statistic,
            df,
            p,
            p_adjusted,
            significant: p_adjusted < ALPHA,
        })
    }
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
#[allow(clippy::excessive_precision)]
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Q(a, x) = Γ(a, x) / Γ(a): series below `a + 1`, continued fraction above.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    1.0 - regularized_gamma_q(a, x)
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn homogeneous_tables() {
        let (s, df) = chi_square(&ContingencyTable::new(vec![vec![10, 10], vec![10, 10]])).unwrap();
        assert_abs_diff_eq!(s, 0.0);
        assert_eq!(df, 1);
        let (s, df) =
            chi_square(&ContingencyTable::new(vec![vec![5, 7, 9], vec![5, 7, 9]])).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        assert_eq!(df, 2);
    }

    #[test]
    fn hand_expanded_table() {
        // expected 25 everywhere: 4 × 25/25 = 4
        let (s, df) = chi_square(&ContingencyTable::new(vec![vec![20, 30], vec![30, 20]])).unwrap();
        assert_abs_diff_eq!(s, 4.0, epsilon = 1e-12);
        assert_eq!(df, 1);
    }

    #[test]
    fn zero_margins_are_degenerate() {
        let zero_col = ContingencyTable::new(vec![vec![0, 10], vec![0, 5]]);
        assert!(matches!(
            chi_square(&zero_col),
            Err(Error::DegenerateTable(_))
        ));
        let zero_row = ContingencyTable::new(vec![vec![0, 0], vec![3, 5]]);
        assert!(matches!(
            chi_square(&zero_row),
            Err(Error::DegenerateTable(_))
        ));
        let one_row = ContingencyTable::new(vec![vec![3, 5]]);
        assert!(chi_square(&one_row).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(ln_gamma(10.0), 362_880f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn pvalue_edges() {
        assert_eq!(chi_square_pvalue(0.0, 1), 1.0);
        assert_eq!(chi_square_pvalue(0.0, 7), 1.0);
        // Q(1, x/2) = exp(-x/2) for df = 2
        for x in [0.1, 1.0, 2.5, 10.0, 40.0] {
            assert_abs_diff_eq!(
                chi_square_pvalue(x, 2),
                (-x / 2.0f64).exp(),
                epsilon = 1e-13
            );
        }
        assert!(chi_square_pvalue(100.0, 1) < 1e-20);
        assert!(chi_square_pvalue(100.0, 1) > 0.0);
    }

    #[test]
    fn bonferroni_examples() {
        assert_abs_diff_eq!(bonferroni(0.01, 33), 0.33, epsilon = 1e-15);
        assert_eq!(bonferroni(0.2, 10), 1.0);
        assert_eq!(bonferroni(0.037, 1), 0.037);
    }

    #[test]
    fn result_flags_significance() {
        let t = ContingencyTable::new(vec![vec![20, 30], vec![30, 20]]);
        let r = ChiSquareResult::from_table(&t, 1).unwrap();
        assert!(r.p < 0.05 && r.significant);
        let r = ChiSquareResult::from_table(&t, 33).unwrap();
        assert!(r.p_adjusted >= r.p && !r.significant);
    }
}
