//! CSV readers and writers for pipeline results that have none in their own module.

use std::path::Path;

use crate::stats::StatsError;

use crate::cohort::StabilityReport;
use crate::csvutil::{csv_error, file_label, open_reader, write_table};
use crate::ingest::IngestError;
use crate::netgeo::BufferRow;
use crate::stats::{ChiSquareResult, ContingencyTable, MixedModelFit, WelchResult};

/// Shortest round-trip form, switching to scientific notation for extreme magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-6..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_buffer_sensitivity(rows: &[BufferRow], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let thresholds: Vec<f64> = rows.first().map(|r| r.within.iter().map(|w| w.0).collect()).unwrap_or_default();
    let mut header = vec!["class".to_string(), "entries".to_string()];
    header.extend(thresholds.iter().map(|t| format!("within_{t}m")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let out = rows.iter().map(|r| {
        let mut row = vec![r.class.to_string(), r.stops.to_string()];
        row.extend(r.within.iter().map(|w| format!("{:.6}", w.1)));
        row
    });
    write_table(path.as_ref(), &header, out)
}

pub fn write_stability(report: &StabilityReport, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["bin", "runs", "mean", "spread"];
    let out = report
        .bins
        .iter()
        .map(|b| [b.bin.to_string(), b.runs.to_string(), opt(b.mean), opt(b.spread)]);
    write_table(path.as_ref(), &header, out)
}

pub fn write_chi_square(
    table: &ContingencyTable,
    result: &ChiSquareResult,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let header = ["statistic", "df", "p_value", "min_expected", "low_expected_cells", "n", "table"];
    let n: f64 = table.counts.iter().flatten().sum();
    let cells: Vec<String> = table
        .row_labels
        .iter()
        .zip(&table.counts)
        .flat_map(|(r, row)| {
            table
                .col_labels
                .iter()
                .zip(row)
                .map(move |(c, v)| format!("{r}/{c}={v}"))
        })
        .collect();
    let row = [
        num(result.statistic),
        result.df.to_string(),
        num(result.p_value),
        num(result.min_expected),
        result.low_expected_cells.to_string(),
        num(n),
        cells.join(";"),
    ];
    write_table(path.as_ref(), &header, [row])
}

pub fn write_welch(rows: &[(String, WelchResult)], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["metric", "n_a", "n_b", "mean_a", "mean_b", "diff", "t", "df", "p_value"];
    let out = rows.iter().map(|(name, r)| {
        [
            name.clone(),
            r.n_a.to_string(),
            r.n_b.to_string(),
            num(r.mean_a),
            num(r.mean_b),
            num(r.diff),
            num(r.t),
            num(r.df),
            num(r.p_value),
        ]
    });
    write_table(path.as_ref(), &header, out)
}

pub fn write_mixed_fit(fit: &MixedModelFit, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["parameter", "estimate", "std_error"];
    let rows = [
        ["beta0".to_string(), num(fit.beta0), num(fit.std_errors[0])],
        ["beta1".to_string(), num(fit.beta1), num(fit.std_errors[1])],
        ["sigma_u2".to_string(), num(fit.sigma_u2), String::new()],
        ["sigma_e2".to_string(), num(fit.sigma_e2), String::new()],
        ["log_likelihood".to_string(), num(fit.log_likelihood), String::new()],
        ["converged".to_string(), fit.converged.to_string(), String::new()],
        ["iterations".to_string(), fit.iterations.to_string(), String::new()],
        ["groups".to_string(), fit.groups.to_string(), String::new()],
        ["observations".to_string(), fit.observations.to_string(), String::new()],
        ["residual_skewness".to_string(), num(fit.residual_skewness), String::new()],
        ["residual_excess_kurtosis".to_string(), num(fit.residual_excess_kurtosis), String::new()],
    ];
    write_table(path.as_ref(), &header, rows)
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        file: file_label(path),
        line,
        reason: reason.into(),
    }
}

/// Reads a table whose header names the columns after a leading label column and whose
/// rows hold a label followed by counts.
pub fn read_contingency(path: impl AsRef<Path>) -> Result<ContingencyTable, IngestError> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let (mut rows, mut counts) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = i as u64 + 2;
        rows.push(record.get(0).unwrap_or_default().to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|e| malformed(path, line, format!("count {v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        counts.push(row);
    }
    ContingencyTable::new(rows, cols, counts).map_err(|e: StatsError| malformed(path, 1, e.to_string()))
}

/// Reads `group,value` rows holding exactly two groups, returned in order of first
/// appearance.
pub fn read_two_samples(path: impl AsRef<Path>) -> Result<[(String, Vec<f64>); 2], IngestError> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = i as u64 + 2;
        let (Some(group), Some(value)) = (record.get(0), record.get(1)) else {
            return Err(malformed(path, line, "expected group,value"));
        };
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| malformed(path, line, format!("value {value:?}: {e}")))?;
        match groups.iter_mut().find(|g| g.0 == group) {
            Some(g) => g.1.push(value),
            None => groups.push((group.to_string(), vec![value])),
        }
    }
    let n = groups.len();
    <[(String, Vec<f64>); 2]>::try_from(groups).map_err(|_| malformed(path, 1, format!("expected 2 groups, found {n}")))
}
