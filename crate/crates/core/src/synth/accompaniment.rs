//! Planted accompaniment pairs tapping together at dedicated rail devices.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{ExpectedPattern, PlantedPair};
use super::names::Cards;
use super::travel::{rail_stage, RailTap, RAIL_STATIONS};
use super::SynthConfig;
use crate::accompany::{AccompanimentClass, MONTH_THRESHOLD, QUARTER_THRESHOLD};
use crate::gender::GenderLabel;
use crate::ingest::{DayType, FareProduct, Stage};

const HOUR: f64 = 3600.0;
/// One pair in ten is an occasional co-traveller that must not qualify.
const NON_QUALIFYING_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PairPlan {
    pub class: AccompanimentClass,
    /// Events per week; `None` for three events in each calendar month.
    pub rate: Option<u32>,
    pub accompanying_product: FareProduct,
    pub accompanying_registered: bool,
    pub accompanying_gender: GenderLabel,
}

impl PairPlan {
    pub fn class_product(&self) -> FareProduct {
        match self.class {
            AccompanimentClass::Student => FareProduct::Student,
            AccompanimentClass::Senior => FareProduct::Senior,
            AccompanimentClass::Disabled => FareProduct::Disabled,
        }
    }
}

/// Accompanying product mix by class and rate: `(high_rate, mix)`.
fn product_mix(class: AccompanimentClass, high: bool) -> &'static [(FareProduct, f64)] {
    use FareProduct::*;
    match (class, high) {
        (AccompanimentClass::Student, false) => &[(Full, 0.8), (WeeklyPass, 0.2)],
        (AccompanimentClass::Student, true) => &[(WeeklyPass, 0.6), (Full, 0.4)],
        (AccompanimentClass::Senior, false) => &[(Full, 0.7), (Senior, 0.3)],
        (AccompanimentClass::Senior, true) => &[(Senior, 0.55), (Full, 0.45)],
        (AccompanimentClass::Disabled, false) => &[(Full, 0.65), (Disabled, 0.35)],
        (AccompanimentClass::Disabled, true) => &[(WeeklyPass, 0.4), (Disabled, 0.35), (Full, 0.25)],
    }
}

/// Deterministic quota: the `k`-th of `n` items gets the first option whose cumulative
/// share covers the item's midpoint.
fn quota<T: Copy>(options: &[(T, f64)], k: usize, n: usize) -> T {
    let x = (k as f64 + 0.5) / n as f64;
    let mut acc = 0.0;
    for &(v, share) in options {
        acc += share;
        if x < acc {
            return v;
        }
    }
    options[options.len() - 1].0
}

fn registered_share(config: &SynthConfig, rate: u32) -> f64 {
    0.2 + 0.6 * rate_position(config, rate)
}

fn rate_position(config: &SynthConfig, rate: u32) -> f64 {
    let lo = *config.accompaniment_rates.iter().min().unwrap_or(&1);
    let hi = *config.accompaniment_rates.iter().max().unwrap_or(&1);
    if hi == lo {
        0.0
    } else {
        f64::from(rate - lo) / f64::from(hi - lo)
    }
}

fn women_share(config: &SynthConfig, rate: u32) -> f64 {
    let t = rate_position(config, rate);
    config.accompanying_women_low + (config.accompanying_women_high - config.accompanying_women_low) * t
}

/// Pair plans. Registration and women shares rise with the weekly rate; both are assigned
/// by quota within each rate so the planted gradient holds exactly.
pub(crate) fn plan_pairs(config: &SynthConfig) -> Vec<PairPlan> {
    let n = config.accompaniment_pairs;
    let mut plans: Vec<PairPlan> = Vec::with_capacity(n);
    let mut qualifying = 0;
    for i in 0..n {
        let non_qual = i % NON_QUALIFYING_EVERY == NON_QUALIFYING_EVERY - 1;
        let (class, rate) = if non_qual {
            (AccompanimentClass::ALL[i / NON_QUALIFYING_EVERY % 3], None)
        } else {
            let j = qualifying;
            qualifying += 1;
            let rates = &config.accompaniment_rates;
            (AccompanimentClass::ALL[j % 3], Some(rates[j / 3 % rates.len()]))
        };
        plans.push(PairPlan {
            class,
            rate,
            accompanying_product: FareProduct::Full,
            accompanying_registered: non_qual && i / NON_QUALIFYING_EVERY % 2 == 0,
            accompanying_gender: if i % 2 == 0 { GenderLabel::Woman } else { GenderLabel::Man },
        });
    }

    let mut by_cell: BTreeMap<(AccompanimentClass, u32), Vec<usize>> = BTreeMap::new();
    let mut by_rate: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in plans.iter().enumerate() {
        if let Some(r) = p.rate {
            by_cell.entry((p.class, r)).or_default().push(i);
            by_rate.entry(r).or_default().push(i);
        }
    }
    for ((class, rate), idx) in &by_cell {
        // Three or more events a week lands in the high frequency band over a quarter.
        let mix = product_mix(*class, *rate >= 3);
        for (k, &i) in idx.iter().enumerate() {
            plans[i].accompanying_product = quota(mix, k, idx.len());
        }
    }
    for (rate, idx) in &by_rate {
        let reg = registered_share(config, *rate);
        let registered: Vec<usize> = idx
            .iter()
            .enumerate()
            .filter(|(k, _)| quota(&[(true, reg), (false, 1.0 - reg)], *k, idx.len()))
            .map(|(_, &i)| i)
            .collect();
        for &i in idx {
            plans[i].accompanying_registered = false;
        }
        let w = women_share(config, *rate);
        for (k, &i) in registered.iter().enumerate() {
            plans[i].accompanying_registered = true;
            plans[i].accompanying_gender =
                quota(&[(GenderLabel::Woman, w), (GenderLabel::Man, 1.0 - w)], k, registered.len());
        }
    }
    plans
}

fn event_days(config: &SynthConfig, plan: &PairPlan, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let days = config.days;
    let mut out = Vec::new();
    match plan.rate {
        Some(r) => {
            for start in (0..days).step_by(7) {
                let len = (days - start).min(7);
                let k = r.min(len);
                let mut picked: Vec<u32> = sample(rng, len as usize, k as usize)
                    .into_iter()
                    .map(|d| start + d as u32)
                    .collect();
                picked.sort_unstable();
                out.extend(picked);
            }
        }
        None => {
            let mut months: BTreeMap<(i32, u32), Vec<u32>> = BTreeMap::new();
            for d in 0..days {
                let date = config.start_date + Days::new(u64::from(d));
                months.entry((date.year(), date.month())).or_default().push(d);
            }
            for (_, ds) in months {
                if ds.len() < 3 {
                    continue;
                }
                let mut picked: Vec<u32> = sample(rng, ds.len(), 3).into_iter().map(|k| ds[k]).collect();
                picked.sort_unstable();
                out.extend(picked);
            }
        }
    }
    out
}

fn event_time(class: AccompanimentClass, day_type: DayType, rng: &mut ChaCha8Rng) -> u32 {
    let uniform = |rng: &mut ChaCha8Rng, a: f64, b: f64| rng.random_range(a * HOUR..b * HOUR);
    let t = match (class, day_type) {
        (AccompanimentClass::Student, DayType::Weekday) => {
            let bell = if rng.random_bool(0.5) { 7.0 + 40.0 / 60.0 } else { 15.0 + 10.0 / 60.0 };
            let jitter = Normal::new(0.0, 12.0 * 60.0).expect("valid sd");
            (bell * HOUR + jitter.sample(rng)).clamp(6.5 * HOUR, 17.0 * HOUR)
        }
        (_, DayType::Weekday) => uniform(rng, 9.5, 15.0),
        (_, DayType::Weekend) => uniform(rng, 10.0, 15.0),
    };
    t as u32
}

fn qualifies(dates: &[NaiveDate]) -> bool {
    let mut months: BTreeMap<(i32, u32), u32> = BTreeMap::new();
    for d in dates {
        *months.entry((d.year(), d.month())).or_default() += 1;
    }
    months.values().any(|&c| c >= MONTH_THRESHOLD) || dates.len() as u32 >= QUARTER_THRESHOLD
}

pub(crate) struct Planted {
    pub stages: Vec<Stage>,
    pub pairs: Vec<PlantedPair>,
    pub expected: Vec<ExpectedPattern>,
}

pub(crate) fn simulate(config: &SynthConfig, cards: &Cards, rng: &mut ChaCha8Rng) -> Planted {
    let mut stages = Vec::new();
    let mut pairs = Vec::new();
    let mut expected = Vec::new();
    let mut journey = 0u64;
    for (i, (a, b, plan)) in cards.pairs.iter().enumerate() {
        let (target, helper) = (&cards.all[*a], &cards.all[*b]);
        let device = format!("RMX{:03}", i + 1);
        let station = i % RAIL_STATIONS + 1;
        let days = event_days(config, plan, rng);
        let mut dates = Vec::with_capacity(days.len());
        for d in days {
            let date = config.start_date + Days::new(u64::from(d));
            dates.push(date);
            let t = event_time(plan.class, DayType::of(date), rng);
            let gap: u32 = rng.random_range(0..=30);
            let (first, second) = if rng.random_bool(0.5) { (target, helper) } else { (helper, target) };
            for (card, time) in [(first, t), (second, t + gap)] {
                journey += 1;
                let tap = RailTap {
                    card_id: &card.card_id,
                    journey_id: format!("A{journey:06}"),
                    date,
                    time,
                    product: card.product,
                    station,
                };
                let mut s = rail_stage(config.alighting_coverage, tap, rng);
                s.device_id = device.clone();
                stages.push(s);
            }
        }
        let q = qualifies(&dates);
        let total = dates.len() as u32;
        pairs.push(PlantedPair {
            accompanied_card: target.card_id.clone(),
            accompanying_card: helper.card_id.clone(),
            class: plan.class,
            rate_per_week: plan.rate,
            events: total,
            expected_qualifies: q,
            accompanying_product: helper.product,
            accompanying_registered: helper.registered,
            accompanying_gender: helper.gender,
            device_id: device,
        });
        expected.push(ExpectedPattern {
            accompanied_card: target.card_id.clone(),
            accompanying_card: helper.card_id.clone(),
            class: plan.class,
            total,
            qualifies: q,
            accompanying_product: helper.product,
        });
        if let Some(class) = AccompanimentClass::of(helper.product) {
            expected.push(ExpectedPattern {
                accompanied_card: helper.card_id.clone(),
                accompanying_card: target.card_id.clone(),
                class,
                total,
                qualifies: q,
                accompanying_product: target.product,
            });
        }
    }
    expected.sort_by(|x, y| {
        (&x.accompanied_card, &x.accompanying_card, x.class).cmp(&(&y.accompanied_card, &y.accompanying_card, y.class))
    });
    Planted { stages, pairs, expected }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_follow_quotas() {
        let cfg = SynthConfig::new(1);
        let plans = plan_pairs(&cfg);
        assert_eq!(plans.len(), 100);
        assert_eq!(plans.iter().filter(|p| p.rate.is_none()).count(), 10);
        let reg = |r: u32| {
            let v: Vec<_> = plans.iter().filter(|p| p.rate == Some(r)).collect();
            v.iter().filter(|p| p.accompanying_registered).count() as f64 / v.len() as f64
        };
        assert!(reg(1) < reg(3) && reg(3) < reg(5));
        let senior_high: Vec<_> = plans
            .iter()
            .filter(|p| p.class == AccompanimentClass::Senior && p.rate == Some(5))
            .collect();
        assert!(senior_high.iter().any(|p| p.accompanying_product == FareProduct::Senior));
    }

    #[test]
    fn quota_shares() {
        let opts = [(1, 0.55), (2, 0.45)];
        let ones = (0..20).filter(|&k| quota(&opts, k, 20) == 1).count();
        assert_eq!(ones, 11);
    }
}
