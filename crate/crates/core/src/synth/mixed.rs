//! Grouped observations from a random-intercept model.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SynthConfig;
use crate::stats::MixedObservation;

fn group_id(g: usize) -> String {
    format!("OD{g:04}")
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Removes the component of `v` along `dir`.
fn orthogonalize(v: &mut [f64], dir: &[f64]) {
    let dd: f64 = dir.iter().map(|d| d * d).sum();
    if dd == 0.0 {
        return;
    }
    let k = v.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / dd;
    v.iter_mut().zip(dir).for_each(|(a, b)| *a -= k * b);
}

/// Rescales `v` so that its sum of squares equals `target`.
fn scale_to(v: &mut [f64], target: f64) {
    let ss: f64 = v.iter().map(|x| x * x).sum();
    if ss > 0.0 {
        let k = (target / ss).sqrt();
        v.iter_mut().for_each(|x| *x *= k);
    }
}

fn flags(config: &SynthConfig, rng: &mut impl Rng) -> Vec<u8> {
    let (g, n) = (config.mixed_groups, config.mixed_per_group);
    let mut x = vec![0u8; g * n];
    for gi in 0..g {
        for i in sample(rng, n, config.mixed_flagged_per_group) {
            x[gi * n + i] = 1;
        }
    }
    x
}

/// Draws `y = β0 + β1·flag + u_group + e` with every group holding the same number of
/// flagged rows. Intercepts and errors are centered, decorrelated from the design and
/// rescaled so their sample moments equal the planted variances; the maximum-likelihood
/// fit of the data then returns the planted parameters.
pub fn plant_mixed_observations(config: &SynthConfig, rng: &mut impl Rng) -> Vec<MixedObservation> {
    let (g, n) = (config.mixed_groups, config.mixed_per_group);
    let total = g * n;
    let x = flags(config, rng);
    let share = config.mixed_flagged_per_group as f64 / n as f64;
    let x_within: Vec<f64> = x.iter().map(|&f| f64::from(f) - share).collect();

    let mut u = normals(rng, g);
    center(&mut u);
    scale_to(&mut u, g as f64 * config.mixed_sigma_u2);

    let mut w = normals(rng, total);
    for gi in 0..g {
        center(&mut w[gi * n..(gi + 1) * n]);
    }
    orthogonalize(&mut w, &x_within);
    scale_to(&mut w, (total - g) as f64 * config.mixed_sigma_e2);

    // Group means of the error term.
    let mut b = normals(rng, g);
    center(&mut b);
    orthogonalize(&mut b, &u);
    scale_to(&mut b, config.mixed_sigma_e2 / n as f64 * g as f64);

    (0..total)
        .map(|i| {
            let gi = i / n;
            MixedObservation {
                group: group_id(gi),
                flag: x[i],
                y: config.mixed_beta0 + config.mixed_beta1 * f64::from(x[i]) + u[gi] + b[gi] + w[i],
            }
        })
        .collect()
}

/// Independent draws from the same model, without moment matching.
pub fn simulate_mixed_observations(config: &SynthConfig, rng: &mut impl Rng) -> Vec<MixedObservation> {
    let (g, n) = (config.mixed_groups, config.mixed_per_group);
    let x = flags(config, rng);
    let su = config.mixed_sigma_u2.sqrt();
    let se = config.mixed_sigma_e2.sqrt();
    let u: Vec<f64> = normals(rng, g).into_iter().map(|z| z * su).collect();
    let e: Vec<f64> = normals(rng, g * n).into_iter().map(|z| z * se).collect();
    (0..g * n)
        .map(|i| MixedObservation {
            group: group_id(i / n),
            flag: x[i],
            y: config.mixed_beta0 + config.mixed_beta1 * f64::from(x[i]) + u[i / n] + e[i],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::fit_random_intercept;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moment_matched_data_fit_exactly() {
        let cfg = SynthConfig {
            mixed_groups: 60,
            ..SynthConfig::new(7)
        };
        let obs = plant_mixed_observations(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(obs.len(), 60 * 20);
        assert!(obs.chunks(20).all(|c| c.iter().filter(|o| o.flag == 1).count() == 6));
        let fit = fit_random_intercept(&obs).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.beta0, cfg.mixed_beta0) < 1e-6, "{}", fit.beta0);
        assert!(rel(fit.beta1, cfg.mixed_beta1) < 1e-6, "{}", fit.beta1);
        assert!(rel(fit.sigma_u2, cfg.mixed_sigma_u2) < 1e-4, "{}", fit.sigma_u2);
        assert!(rel(fit.sigma_e2, cfg.mixed_sigma_e2) < 1e-4, "{}", fit.sigma_e2);
    }
}
