use std::collections::HashMap;

use chrono::NaiveDate;
use serde::Serialize;

use super::{time_bin, N_BINS};
use crate::gender::GenderLabel;

/// z for a two-sided 95% interval.
const Z95: f64 = 1.96;

pub const PERCENTILES: [f64; 4] = [0.25, 0.50, 0.75, 0.90];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityCell {
    pub bin: usize,
    pub n_trips: u64,
    pub n_women: u64,
    pub n_men: u64,
    /// Stop × date observations contributing to the bin.
    pub n_obs: u64,
    /// `n_women / n_trips - 0.5`; absent for an empty bin.
    pub deviation: Option<f64>,
    /// `1.96 · σ / √n_obs`; absent when fewer than two observations exist.
    pub ci_half_width: Option<f64>,
}

impl ParityCell {
    pub fn contains(&self, value: f64) -> bool {
        match (self.deviation, self.ci_half_width) {
            (Some(d), Some(h)) => (value - d).abs() <= h,
            _ => false,
        }
    }
}

/// Signed distance from parity, written so that swapping the counts negates it exactly.
pub fn stop_deviation(women: u64, men: u64) -> Option<f64> {
    let n = women + men;
    (n > 0).then(|| (women as f64 - men as f64) / (2.0 * n as f64))
}

/// Counts trips per (stop, service date, bin) and reduces them to 64 parity cells.
#[derive(Debug, Clone, Default)]
pub struct ParityAccumulator {
    obs: HashMap<(String, NaiveDate, usize), (u64, u64)>,
    out_of_window: u64,
}

impl ParityAccumulator {
    /// Adds one trip. Unknown labels are ignored; times outside the window are counted
    /// but not binned.
    pub fn add(&mut self, stop_id: &str, date: NaiveDate, time: u32, label: GenderLabel) {
        if !label.is_binary() {
            return;
        }
        let Some(bin) = time_bin(time) else {
            self.out_of_window += 1;
            return;
        };
        let key = (stop_id.to_string(), date, bin);
        let cell = self.obs.entry(key).or_default();
        match label {
            GenderLabel::Woman => cell.0 += 1,
            _ => cell.1 += 1,
        }
    }

    pub fn out_of_window(&self) -> u64 {
        self.out_of_window
    }

    pub fn merge(&mut self, other: ParityAccumulator) {
        self.out_of_window += other.out_of_window;
        for (k, (w, m)) in other.obs {
            let c = self.obs.entry(k).or_default();
            c.0 += w;
            c.1 += m;
        }
    }

    /// Per-stop `(women, men)` totals over all in-window trips.
    pub fn stop_totals(&self) -> HashMap<&str, (u64, u64)> {
        let mut out: HashMap<&str, (u64, u64)> = HashMap::new();
        for ((stop, _, _), (w, m)) in &self.obs {
            let c = out.entry(stop.as_str()).or_default();
            c.0 += w;
            c.1 += m;
        }
        out
    }

    pub fn series(&self) -> Vec<ParityCell> {
        let mut per_bin: Vec<Vec<(u64, u64)>> = vec![Vec::new(); N_BINS];
        for ((_, _, bin), &counts) in &self.obs {
            per_bin[*bin].push(counts);
        }
        per_bin
            .into_iter()
            .enumerate()
            .map(|(bin, mut obs)| {
                // Summation order must not depend on hash iteration order.
                obs.sort_unstable();
                cell(bin, &obs)
            })
            .collect()
    }
}

fn cell(bin: usize, obs: &[(u64, u64)]) -> ParityCell {
    let n_women: u64 = obs.iter().map(|o| o.0).sum();
    let n_men: u64 = obs.iter().map(|o| o.1).sum();
    let mut devs: Vec<f64> = obs.iter().filter_map(|&(w, m)| stop_deviation(w, m)).collect();
    let n = devs.len();
    let ci_half_width = (n >= 2).then(|| {
        Z95 * sample_sd_sign_symmetric(&mut devs) / (n as f64).sqrt()
    });
    ParityCell {
        bin,
        n_trips: n_women + n_men,
        n_women,
        n_men,
        n_obs: n as u64,
        deviation: stop_deviation(n_women, n_men),
        ci_half_width,
    }
}

/// Sample standard deviation whose rounding does not change when every value is negated,
/// so that relabeling genders leaves confidence intervals bit-identical.
fn sample_sd_sign_symmetric(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    values.sort_unstable_by(|a, b| a.abs().total_cmp(&b.abs()));
    let pos: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let neg: f64 = values.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let mean = (pos - neg) / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    sq.sort_unstable_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation percentile (`h = (n-1)·p`) of an unsorted sample.
pub fn percentile(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let h = (values.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let (_, &mut lo_v, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let frac = h - lo as f64;
    if frac == 0.0 || upper.is_empty() {
        return Some(lo_v);
    }
    let hi_v = upper.iter().copied().fold(f64::INFINITY, f64::min);
    Some(lo_v + frac * (hi_v - lo_v))
}

/// The fixed percentile set of a sample of per-stop deviations.
pub fn percentile_table(mut values: Vec<f64>) -> Option<[f64; 4]> {
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(PERCENTILES) {
        *slot = percentile(&mut values, p)?;
    }
    Some(out)
}
