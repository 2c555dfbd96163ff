use std::collections::BTreeMap;

use serde::Serialize;

use super::GenderLabel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCell {
    pub self_reported: GenderLabel,
    pub group: String,
    pub misclassified: u64,
    pub total: u64,
    /// `misclassified / total`.
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cells: Vec<ValidationCell>,
    /// Pairs dropped because either label was Unknown.
    pub excluded_unknown: u64,
    pub scored: u64,
    pub misclassified: u64,
    pub accuracy: f64,
    pub error_rate: f64,
}

/// Scores inferred labels against self-reported ones per `(self-reported, group)` cell.
pub fn validate_inference<'a, I>(pairs: I) -> ValidationReport
where
    I: IntoIterator<Item = (GenderLabel, GenderLabel, &'a str)>,
{
    let mut cells: BTreeMap<(GenderLabel, String), (u64, u64)> = BTreeMap::new();
    let mut excluded_unknown = 0;
    for (inferred, reported, group) in pairs {
        if !inferred.is_binary() || !reported.is_binary() {
            excluded_unknown += 1;
            continue;
        }
        let cell = cells.entry((reported, group.to_string())).or_default();
        cell.1 += 1;
        if inferred != reported {
            cell.0 += 1;
        }
    }
    let (misclassified, scored) = cells.values().fold((0, 0), |(m, t), c| (m + c.0, t + c.1));
    let error_rate = if scored > 0 { misclassified as f64 / scored as f64 } else { 0.0 };
    ValidationReport {
        cells: cells
            .into_iter()
            .map(|((self_reported, group), (m, t))| ValidationCell {
                self_reported,
                group,
                misclassified: m,
                total: t,
                error_rate: m as f64 / t as f64,
            })
            .collect(),
        excluded_unknown,
        scored,
        misclassified,
        accuracy: if scored > 0 { 1.0 - error_rate } else { 0.0 },
        error_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GenderLabel::*;

    #[test]
    fn agreement_means_zero_error() {
        let r = validate_inference([(Woman, Woman, "a"), (Man, Man, "a"), (Man, Man, "b")]);
        assert!(r.cells.iter().all(|c| c.error_rate == 0.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn reference_cell_rate() {
        // 95 of 1,289 self-reported women misclassified.
        let mut pairs = vec![(Man, Woman, "White (non-Latinx)"); 95];
        pairs.extend(vec![(Woman, Woman, "White (non-Latinx)"); 1289 - 95]);
        pairs.push((Unknown, Woman, "White (non-Latinx)"));
        let r = validate_inference(pairs);
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].total, 1289);
        assert_eq!(format!("{:.2}", r.cells[0].error_rate * 100.0), "7.37");
        assert_eq!(r.excluded_unknown, 1);
    }
}
