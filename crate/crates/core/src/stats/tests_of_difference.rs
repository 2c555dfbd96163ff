use serde::Serialize;

use super::special::{chi_square_sf, student_t_two_sided};
use super::StatsError;

/// Minimum expected count per cell for the chi-square approximation.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, `rows × cols`.
    pub counts: Vec<Vec<f64>>,
}

impl ContingencyTable {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, counts: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != col_labels.len()) {
            return Err(StatsError::InvalidTable("row or column count does not match the labels".into()));
        }
        if counts.len() < 2 || col_labels.len() < 2 {
            return Err(StatsError::InvalidTable("need at least 2 rows and 2 columns".into()));
        }
        if counts.iter().flatten().any(|&c| !(c.is_finite() && c >= 0.0)) {
            return Err(StatsError::InvalidTable("cells must be finite and non-negative".into()));
        }
        Ok(Self {
            row_labels,
            col_labels,
            counts,
        })
    }

    /// Unlabeled table, rows `r0, r1, ...` and columns `c0, c1, ...`.
    pub fn from_counts(counts: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let rows = (0..counts.len()).map(|i| format!("r{i}")).collect();
        let cols = (0..counts.first().map_or(0, Vec::len)).map(|i| format!("c{i}")).collect();
        Self::new(rows, cols, counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub min_expected: f64,
    /// Cells whose expected count is below 5.
    pub low_expected_cells: usize,
}

/// Pearson chi-square test of independence with expected counts from the margins.
pub fn chi_square(table: &ContingencyTable) -> Result<ChiSquareResult, StatsError> {
    let rows: Vec<f64> = table.counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table.col_labels.len())
        .map(|j| table.counts.iter().map(|r| r[j]).sum())
        .collect();
    if let Some(i) = rows.iter().position(|&s| s == 0.0) {
        return Err(StatsError::DegenerateMargin(format!("row '{}'", table.row_labels[i])));
    }
    if let Some(j) = cols.iter().position(|&s| s == 0.0) {
        return Err(StatsError::DegenerateMargin(format!("column '{}'", table.col_labels[j])));
    }
    let total: f64 = rows.iter().sum();
    let mut statistic = 0.0;
    let mut min_expected = f64::INFINITY;
    let mut low = 0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = rows[i] * cols[j] / total;
            min_expected = min_expected.min(expected);
            if expected < MIN_EXPECTED {
                low += 1;
            }
            statistic += (observed - expected).powi(2) / expected;
        }
    }
    if low > 0 {
        log::warn!("chi-square: {low} cell(s) have expected count below {MIN_EXPECTED}");
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as u32;
    Ok(ChiSquareResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df as f64),
        min_expected,
        low_expected_cells: low,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelchResult {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::InsufficientSample(a.len().min(b.len())));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    if var_a == 0.0 && var_b == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (var_a / na, var_b / nb);
    let se2 = qa + qb;
    let diff = mean_a - mean_b;
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult {
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        var_a,
        var_b,
        diff,
        t,
        df,
        p_value: student_t_two_sided(t, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_reference() {
        let t = ContingencyTable::from_counts(vec![vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
        let r = chi_square(&t).unwrap();
        // Every expected count is 15 and every |O - E| is 5: 4 · 25/15.
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.df, 1);
        assert!((r.p_value - 0.009823).abs() < 5e-6);
    }

    #[test]
    fn proportional_table_is_independent() {
        let t = ContingencyTable::from_counts(vec![vec![10.0, 20.0, 30.0], vec![20.0, 40.0, 60.0]]).unwrap();
        let r = chi_square(&t).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.df, 2);
    }

    #[test]
    fn degenerate_and_invalid() {
        let t = ContingencyTable::from_counts(vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert!(matches!(chi_square(&t), Err(StatsError::DegenerateMargin(_))));
        assert!(ContingencyTable::from_counts(vec![vec![1.0, 2.0]]).is_err());
        assert!(ContingencyTable::from_counts(vec![vec![1.0, -2.0], vec![1.0, 1.0]]).is_err());
        let small = ContingencyTable::from_counts(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(chi_square(&small).unwrap().low_expected_cells, 4);
    }

    #[test]
    fn welch_long_hand() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let r = welch_t(&a, &b).unwrap();
        // Both variances are 5/3, so se² = 2 · (5/3)/4 = 5/6 and df = 6.
        assert_eq!(r.diff, -1.0);
        assert!((r.t - (-1.0 / (5.0f64 / 6.0).sqrt())).abs() < 1e-12);
        assert!((r.df - 6.0).abs() < 1e-12);
        let same = welch_t(&a, &a).unwrap();
        assert_eq!((same.t, same.p_value), (0.0, 1.0));
        assert!(matches!(welch_t(&[1.0], &b), Err(StatsError::InsufficientSample(1))));
        assert!(matches!(welch_t(&[2.0, 2.0], &[3.0, 3.0]), Err(StatsError::ZeroVariance)));
    }

    proptest! {
        #[test]
        fn chi_square_permutation_and_scaling(
            cells in proptest::collection::vec(1.0f64..100.0, 6),
            k in 0.1f64..10.0,
        ) {
            let m = vec![cells[0..3].to_vec(), cells[3..6].to_vec()];
            let base = chi_square(&ContingencyTable::from_counts(m.clone()).unwrap()).unwrap();
            let permuted = vec![
                vec![m[1][2], m[1][0], m[1][1]],
                vec![m[0][2], m[0][0], m[0][1]],
            ];
            let p = chi_square(&ContingencyTable::from_counts(permuted).unwrap()).unwrap();
            prop_assert!((p.statistic - base.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
            let scaled: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|c| c * k).collect()).collect();
            let s = chi_square(&ContingencyTable::from_counts(scaled).unwrap()).unwrap();
            prop_assert!((s.statistic - k * base.statistic).abs() <= 1e-9 * (k * base.statistic).max(1.0));
        }

        #[test]
        fn welch_antisymmetric(
            a in proptest::collection::vec(-50.0f64..50.0, 2..30),
            b in proptest::collection::vec(-50.0f64..50.0, 2..30),
        ) {
            prop_assume!(welch_t(&a, &b).is_ok());
            let ab = welch_t(&a, &b).unwrap();
            let ba = welch_t(&b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert_eq!(ab.df, ba.df);
        }
    }
}
