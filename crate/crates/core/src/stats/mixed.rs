//! One-way random-intercept model `y_ij = β0 + β1·x_ij + u_i + ε_ij`, fitted by maximum
//! likelihood with the EM algorithm.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::StatsError;
use crate::csvutil::{csv_error, file_label, open_reader, write_table, Columns};
use crate::ingest::IngestError;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedObservation {
    pub group: String,
    /// 0 or 1.
    pub flag: u8,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedModelFit {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
    /// Standard errors of `beta0` and `beta1`.
    pub std_errors: [f64; 2],
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Marginal log-likelihood after each EM iteration, starting with the initial values.
    pub loglik_trace: Vec<f64>,
    pub groups: usize,
    pub observations: usize,
    /// Skewness and excess kurtosis of the conditional residuals.
    pub residual_skewness: f64,
    pub residual_excess_kurtosis: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

struct Data {
    /// Observation ranges per group, into `x` and `y`.
    groups: Vec<(usize, usize)>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Data {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn group_n(&self, g: usize) -> f64 {
        let (a, b) = self.groups[g];
        (b - a) as f64
    }

    fn residual_sums(&self, beta: [f64; 2], g: usize) -> (f64, f64) {
        let (a, b) = self.groups[g];
        let mut s = 0.0;
        let mut ss = 0.0;
        for k in a..b {
            let r = self.y[k] - beta[0] - beta[1] * self.x[k];
            s += r;
            ss += r * r;
        }
        (s, ss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    beta: [f64; 2],
    su2: f64,
    se2: f64,
}

impl Params {
    fn max_abs_diff(&self, o: &Params) -> f64 {
        [
            self.beta[0] - o.beta[0],
            self.beta[1] - o.beta[1],
            self.su2 - o.su2,
            self.se2 - o.se2,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Solves the 2×2 system `m · z = v`.
fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs()).max(1.0);
    if det.abs() <= 1e-12 * scale * scale {
        return None;
    }
    Some([
        (v[0] * m[1][1] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}

fn log_likelihood(d: &Data, p: &Params) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    (0..d.groups.len())
        .map(|g| {
            let n = d.group_n(g);
            let (s, ss) = d.residual_sums(p.beta, g);
            let denom = p.se2 + n * p.su2;
            let logdet = (n - 1.0) * p.se2.ln() + denom.ln();
            let quad = (ss - p.su2 / denom * s * s) / p.se2;
            -0.5 * (n * ln2pi + logdet + quad)
        })
        .sum()
}

/// Ordinary least squares over all observations, ignoring groups.
fn ols(d: &Data, xtx: [[f64; 2]; 2]) -> Option<[f64; 2]> {
    let xty = [d.y.iter().sum(), d.x.iter().zip(&d.y).map(|(x, y)| x * y).sum()];
    solve2(xtx, xty)
}

fn em_step(d: &Data, p: &Params, xtx: [[f64; 2]; 2]) -> Params {
    let groups = d.groups.len();
    let mut m = vec![0.0; groups];
    let mut v = vec![0.0; groups];
    for g in 0..groups {
        let n = d.group_n(g);
        let (s, _) = d.residual_sums(p.beta, g);
        v[g] = p.su2 * p.se2 / (p.se2 + n * p.su2);
        m[g] = v[g] * s / p.se2;
    }
    let mut xty = [0.0; 2];
    for (g, &(a, b)) in d.groups.iter().enumerate() {
        for k in a..b {
            let adj = d.y[k] - m[g];
            xty[0] += adj;
            xty[1] += d.x[k] * adj;
        }
    }
    let beta = solve2(xtx, xty).unwrap_or(p.beta);
    let su2 = (0..groups).map(|g| m[g] * m[g] + v[g]).sum::<f64>() / groups as f64;
    let mut sse = 0.0;
    for (g, &(a, b)) in d.groups.iter().enumerate() {
        for k in a..b {
            let r = d.y[k] - beta[0] - beta[1] * d.x[k] - m[g];
            sse += r * r;
        }
        sse += d.group_n(g) * v[g];
    }
    Params {
        beta,
        su2,
        se2: sse / d.n() as f64,
    }
}

fn prepare(obs: &[MixedObservation]) -> Result<Data, StatsError> {
    if obs.iter().any(|o| o.flag > 1 || !o.y.is_finite()) {
        return Err(StatsError::InvalidInput("flags must be 0/1 and responses finite".into()));
    }
    let mut by_group: BTreeMap<&str, Vec<&MixedObservation>> = BTreeMap::new();
    for o in obs {
        by_group.entry(&o.group).or_default().push(o);
    }
    let mut data = Data {
        groups: Vec::with_capacity(by_group.len()),
        x: Vec::with_capacity(obs.len()),
        y: Vec::with_capacity(obs.len()),
    };
    for rows in by_group.values() {
        let start = data.y.len();
        for o in rows {
            data.x.push(f64::from(o.flag));
            data.y.push(o.y);
        }
        data.groups.push((start, data.y.len()));
    }
    Ok(data)
}

pub fn fit_random_intercept(obs: &[MixedObservation]) -> Result<MixedModelFit, StatsError> {
    fit_random_intercept_with(obs, EmOptions::default())
}

pub fn fit_random_intercept_with(obs: &[MixedObservation], opts: EmOptions) -> Result<MixedModelFit, StatsError> {
    let d = prepare(obs)?;
    let n = d.n() as f64;
    let sx: f64 = d.x.iter().sum();
    if d.n() < 3 || sx == 0.0 || sx == n {
        return Err(StatsError::SingularDesign);
    }
    let xtx = [[n, sx], [sx, sx]];
    let beta = ols(&d, xtx).ok_or(StatsError::SingularDesign)?;
    let groups = d.groups.len();

    let sums: Vec<(f64, f64)> = (0..groups).map(|g| d.residual_sums(beta, g)).collect();
    let rss: f64 = sums.iter().map(|s| s.1).sum();
    if rss <= 0.0 {
        return Err(StatsError::InvalidInput("residual variance is zero".into()));
    }
    let se2_ols = rss / n;
    // Score of σu² at zero: positive means the likelihood increases into the interior.
    let score0: f64 = (0..groups)
        .map(|g| sums[g].0 * sums[g].0 / (se2_ols * se2_ols) - d.group_n(g) / se2_ols)
        .sum::<f64>()
        * 0.5;

    let mut p = if score0 <= 0.0 {
        Params {
            beta,
            su2: 0.0,
            se2: se2_ols,
        }
    } else {
        // Moment start: pooled within-group variance and the excess of between-group spread.
        let within: f64 = (0..groups)
            .map(|g| {
                let ng = d.group_n(g);
                sums[g].1 - sums[g].0 * sums[g].0 / ng
            })
            .sum::<f64>();
        let se2 = (within / (n - groups as f64).max(1.0)).max(se2_ols * 1e-3);
        let between = sums.iter().zip(0..groups).map(|(s, g)| (s.0 / d.group_n(g)).powi(2)).sum::<f64>() / groups as f64;
        let mean_n = n / groups as f64;
        let su2 = (between - se2 / mean_n).max(se2_ols * 1e-2);
        Params { beta, su2, se2 }
    };

    let mut trace = vec![log_likelihood(&d, &p)];
    let mut converged = p.su2 == 0.0;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        let next = em_step(&d, &p, xtx);
        iterations += 1;
        let ll = log_likelihood(&d, &next);
        let prev = *trace.last().unwrap_or(&ll);
        if ll < prev - 1e-9 * prev.abs().max(1.0) {
            log::warn!("EM log-likelihood decreased at iteration {iterations}: {prev} -> {ll}");
        }
        trace.push(ll);
        converged = next.max_abs_diff(&p) < opts.tolerance;
        p = next;
    }
    if !converged {
        log::warn!("EM did not converge in {} iterations", opts.max_iter);
    }

    // Fixed-effect covariance (Σ X_i' V_i^-1 X_i)^-1.
    let mut info = [[0.0; 2]; 2];
    let mut resid = Vec::with_capacity(d.n());
    for (g, &(a, b)) in d.groups.iter().enumerate() {
        let ng = d.group_n(g);
        let c = p.su2 / (p.se2 + ng * p.su2);
        let sxg: f64 = d.x[a..b].iter().sum();
        let col = [ng, sxg];
        let xtx_g = [[ng, sxg], [sxg, sxg]];
        for i in 0..2 {
            for j in 0..2 {
                info[i][j] += (xtx_g[i][j] - c * col[i] * col[j]) / p.se2;
            }
        }
        let (s, _) = d.residual_sums(p.beta, g);
        let m = p.su2 * s / (p.se2 + ng * p.su2);
        for k in a..b {
            resid.push(d.y[k] - p.beta[0] - p.beta[1] * d.x[k] - m);
        }
    }
    let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
    let std_errors = [(info[1][1] / det).sqrt(), (info[0][0] / det).sqrt()];
    let (skew, kurt) = shape(&resid);

    Ok(MixedModelFit {
        beta0: p.beta[0],
        beta1: p.beta[1],
        sigma_u2: p.su2,
        sigma_e2: p.se2,
        std_errors,
        converged,
        iterations,
        log_likelihood: *trace.last().unwrap_or(&f64::NAN),
        loglik_trace: trace,
        groups,
        observations: d.n(),
        residual_skewness: skew,
        residual_excess_kurtosis: kurt,
    })
}

fn shape(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    if m2 <= 0.0 {
        return (0.0, 0.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

pub const MIXED_HEADER: [&str; 3] = ["od_pair_id", "moc_flag", "in_vehicle_minutes"];

pub fn write_mixed_observations(obs: &[MixedObservation], path: impl AsRef<Path>) -> Result<(), StatsError> {
    let rows = obs
        .iter()
        .map(|o| [o.group.clone(), o.flag.to_string(), o.y.to_string()]);
    Ok(write_table(path.as_ref(), &MIXED_HEADER, rows)?)
}

pub fn load_mixed_observations(path: impl AsRef<Path>) -> Result<Vec<MixedObservation>, StatsError> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &MIXED_HEADER, &[])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| IngestError::MalformedRow {
            file: file_label(path),
            line,
            reason,
        };
        let flag = match cols.get(&rec, 1) {
            "0" => 0,
            "1" => 1,
            f => return Err(bad(format!("moc_flag must be 0 or 1, got '{f}'")).into()),
        };
        let y = cols.get(&rec, 2);
        out.push(MixedObservation {
            group: cols.get(&rec, 0).to_string(),
            flag,
            y: y.parse().map_err(|_| bad(format!("bad in_vehicle_minutes '{y}'")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn obs(group: &str, flag: u8, y: f64) -> MixedObservation {
        MixedObservation {
            group: group.into(),
            flag,
            y,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let data = vec![obs("a-b", 1, 12.25), obs("a-c", 0, 0.1 + 0.2)];
        write_mixed_observations(&data, &path).unwrap();
        assert_eq!(load_mixed_observations(&path).unwrap(), data);
    }

    #[test]
    fn single_group_is_ols() {
        let data = vec![obs("g", 0, 1.0), obs("g", 0, 2.0), obs("g", 1, 4.0), obs("g", 1, 7.0), obs("g", 0, 3.0)];
        let fit = fit_random_intercept(&data).unwrap();
        assert_eq!(fit.sigma_u2, 0.0);
        assert!(fit.converged);
        assert!((fit.beta0 - 2.0).abs() < 1e-12);
        assert!((fit.beta1 - 3.5).abs() < 1e-12);
        // RSS = 2 + 4.5 over n = 5.
        assert!((fit.sigma_e2 - 6.5 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn constant_flag_is_singular() {
        let data = vec![obs("a", 1, 1.0), obs("b", 1, 2.0), obs("c", 1, 4.0)];
        assert!(matches!(fit_random_intercept(&data), Err(StatsError::SingularDesign)));
        assert!(matches!(fit_random_intercept(&[]), Err(StatsError::SingularDesign)));
    }

    fn simulate(seed: u64, groups: usize, per: usize) -> Vec<MixedObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Normal::new(0.0, 514.5f64.sqrt()).unwrap();
        let e = Normal::new(0.0, 185.3f64.sqrt()).unwrap();
        let mut out = Vec::new();
        for g in 0..groups {
            let ug = u.sample(&mut rng);
            for _ in 0..per {
                let flag = u8::from(rng.random_bool(0.3));
                let y = 27.94 + 10.11 * f64::from(flag) + ug + e.sample(&mut rng);
                out.push(obs(&format!("g{g:04}"), flag, y));
            }
        }
        out
    }

    #[test]
    fn em_is_monotone_and_converges() {
        let fit = fit_random_intercept(&simulate(3, 200, 10)).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations > 0);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert!(fit.std_errors.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn matches_closed_form_for_balanced_design() {
        // With the flag constant within each group and equal group sizes, ML has the closed
        // form σe² = SSW / N and σu² = SSB / G - σe² / n.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let (groups, per) = (40, 6);
        let mut data = Vec::new();
        for g in 0..groups {
            let flag = (g % 2) as u8;
            let ug = noise.sample(&mut rng) * 2.0;
            for _ in 0..per {
                data.push(obs(&format!("g{g:02}"), flag, 5.0 + 3.0 * f64::from(flag) + ug + noise.sample(&mut rng)));
            }
        }
        let fit = fit_random_intercept(&data).unwrap();
        let mut ssw = 0.0;
        let mut means = Vec::new();
        for g in 0..groups {
            let ys: Vec<f64> = data[g * per..(g + 1) * per].iter().map(|o| o.y).collect();
            let m = ys.iter().sum::<f64>() / per as f64;
            ssw += ys.iter().map(|y| (y - m).powi(2)).sum::<f64>();
            means.push(m);
        }
        let n = (groups * per) as f64;
        let se2 = ssw / (n - groups as f64);
        let arm = |flag: usize| {
            let v: Vec<f64> = means.iter().skip(flag).step_by(2).copied().collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        };
        let (m0, ss0) = arm(0);
        let (m1, ss1) = arm(1);
        assert!((fit.beta0 - m0).abs() < 1e-6);
        assert!((fit.beta1 - (m1 - m0)).abs() < 1e-6);
        // ML: σe² = SSW/(N-G), τ = σu² + σe²/n = SSB/G.
        let tau = (ss0 + ss1) / groups as f64;
        assert!((fit.sigma_e2 - se2).abs() < 1e-6 * se2, "{} vs {se2}", fit.sigma_e2);
        assert!((fit.sigma_u2 - (tau - se2 / per as f64)).abs() < 1e-6 * tau);
    }
}
