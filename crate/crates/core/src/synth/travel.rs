//! Bus and rail journeys for the card population.
//!
//! Regular journeys are drawn without a rider first; the rider's gender then follows
//! error diffusion within the journey's stratum so the realized women's share of every
//! stratum tracks its target to within one journey.

use std::collections::HashMap;

use chrono::{Days, NaiveDate};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::names::Cards;
use super::network::{stop_id, Network, PlacedPois, SPACING_M};
use super::SynthConfig;
use crate::ingest::{DayType, FareProduct, Mode, Stage};
use crate::mocgeo::time_bin;

pub(crate) const RAIL_STATIONS: usize = 12;
const RAIL_GATES: u32 = 4;
const RAIL_M_PER_MIN: f64 = 536.0;
const HOP_S: u32 = 75;
const MAX_HOPS: usize = 8;
const VEHICLES_PER_ROUTE: u32 = 20;
const BUS_FARE: i64 = 200;
const RAIL_FARE: i64 = 225;

const HOUR: f64 = 3600.0;
const EARLIEST_S: f64 = 4.5 * HOUR;
const LATEST_S: f64 = 23.0 * HOUR;

fn fare(product: FareProduct, base: i64) -> i64 {
    match product {
        FareProduct::Student | FareProduct::Senior | FareProduct::Disabled => base / 2,
        FareProduct::WeeklyPass => 0,
        FareProduct::Full | FareProduct::Other => base,
    }
}

/// Departure time: morning peak, evening peak and a flat daytime component.
fn departure(rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let t = if u < 0.35 {
        Normal::new(7.75 * HOUR, 0.8 * HOUR).expect("valid sd").sample(rng)
    } else if u < 0.65 {
        Normal::new(17.25 * HOUR, HOUR).expect("valid sd").sample(rng)
    } else {
        rng.random_range(5.5 * HOUR..22.5 * HOUR)
    };
    t.clamp(EARLIEST_S, LATEST_S) as u32
}

pub(crate) struct RailTap<'a> {
    pub card_id: &'a str,
    pub journey_id: String,
    pub date: NaiveDate,
    pub time: u32,
    pub product: FareProduct,
    /// 1-based station number.
    pub station: usize,
}

pub(crate) fn rail_stage(coverage: f64, tap: RailTap<'_>, rng: &mut ChaCha8Rng) -> Stage {
    let gate = rng.random_range(1..=RAIL_GATES);
    let mut exit = rng.random_range(1..RAIL_STATIONS);
    if exit >= tap.station {
        exit += 1;
    }
    let minutes = 2 * tap.station.abs_diff(exit) as u32 + 2;
    let alighted = rng.random_bool(coverage);
    Stage {
        card_id: tap.card_id.to_string(),
        journey_id: tap.journey_id,
        stage_index: 1,
        service_date: tap.date,
        board_stop: format!("RS{:02}", tap.station),
        alight_stop: alighted.then(|| format!("RS{exit:02}")),
        board_time: tap.time,
        alight_time: alighted.then_some(tap.time + minutes * 60),
        mode: Mode::Rail,
        route_id: None,
        direction_id: None,
        device_id: format!("RM{:02}-{gate}", tap.station),
        fare_product: tap.product,
        fare_paid: fare(tap.product, RAIL_FARE),
        distance_m: alighted.then_some(f64::from(minutes) * RAIL_M_PER_MIN),
    }
}

/// A bus leg before a rider is attached.
#[derive(Debug, Clone)]
struct Leg {
    pattern: usize,
    from: usize,
    hops: usize,
    board_time: u32,
}

impl Leg {
    fn arrival(&self) -> u32 {
        self.board_time + self.hops as u32 * HOP_S
    }
}

#[derive(Debug, Clone)]
enum Draft {
    Bus(Vec<Leg>),
    Rail { station: usize, time: u32 },
}

/// Gender stratum of a regular journey: planted flag, day type and the bin of its key
/// boarding.
type Stratum = (bool, DayType, Option<usize>);

struct Builder<'a> {
    config: &'a SynthConfig,
    net: &'a Network,
    served: Vec<usize>,
    poi_transfer: Vec<usize>,
    plain_transfer: Vec<usize>,
    planted_stop: Vec<bool>,
    next_journey: u64,
}

impl<'a> Builder<'a> {
    fn new(config: &'a SynthConfig, net: &'a Network, placed: &PlacedPois) -> Self {
        let served = net.served_stops();
        // A transfer stop needs an arriving and a departing leg.
        let transferable = |k: &usize| {
            let s = &net.serving[*k];
            s.iter().any(|&(_, pos)| pos > 0)
                && s.iter().any(|&(p, pos)| pos + 1 < net.patterns[p].stops.len())
        };
        let (poi_transfer, plain_transfer): (Vec<usize>, Vec<usize>) =
            served.iter().copied().filter(transferable).partition(|&k| placed.is_poi_stop(k));
        let planted: Vec<usize> = placed.stops_of(config.planted_class);
        let mut planted_stop = vec![false; config.n_stops];
        for k in planted {
            planted_stop[k] = true;
        }
        Self {
            config,
            net,
            served,
            poi_transfer,
            plain_transfer,
            planted_stop,
            next_journey: 0,
        }
    }

    fn single_leg(&self, rng: &mut ChaCha8Rng, time: u32) -> Leg {
        let k = self.served[rng.random_range(0..self.served.len())];
        let options: Vec<(usize, usize)> = self.net.serving[k]
            .iter()
            .copied()
            .filter(|&(p, pos)| pos + 1 < self.net.patterns[p].stops.len())
            .collect();
        let (pattern, from) = if options.is_empty() {
            // Terminal stop of every pattern through it: board at the start instead.
            (self.net.serving[k][0].0, 0)
        } else {
            options[rng.random_range(0..options.len())]
        };
        let remaining = self.net.patterns[pattern].stops.len() - 1 - from;
        Leg {
            pattern,
            from,
            hops: rng.random_range(1..=remaining.min(MAX_HOPS)),
            board_time: time,
        }
    }

    fn chained(&self, rng: &mut ChaCha8Rng, time: u32, x: usize) -> Vec<Leg> {
        let net = self.net;
        let arriving: Vec<(usize, usize)> = net.serving[x].iter().copied().filter(|&(_, pos)| pos > 0).collect();
        let (p1, pos1) = arriving[rng.random_range(0..arriving.len())];
        let hops1 = rng.random_range(1..=pos1.min(MAX_HOPS));
        let leg1 = Leg {
            pattern: p1,
            from: pos1 - hops1,
            hops: hops1,
            board_time: time,
        };
        let departing: Vec<(usize, usize)> = net.serving[x]
            .iter()
            .copied()
            .filter(|&(p, pos)| pos + 1 < net.patterns[p].stops.len())
            .collect();
        let other: Vec<(usize, usize)> = departing.iter().copied().filter(|&(p, _)| p != p1).collect();
        let pool = if other.is_empty() { &departing } else { &other };
        let (p2, pos2) = pool[rng.random_range(0..pool.len())];
        let remaining = net.patterns[p2].stops.len() - 1 - pos2;
        let dwell = rng.random_range(120..=900);
        let leg2 = Leg {
            pattern: p2,
            from: pos2,
            hops: rng.random_range(1..=remaining.min(MAX_HOPS)),
            board_time: leg1.arrival() + dwell,
        };
        vec![leg1, leg2]
    }

    /// A bus journey mixing single legs and transfers.
    fn bus(&self, rng: &mut ChaCha8Rng, time: u32) -> Vec<Leg> {
        let want_chain = rng.random_bool(self.config.chain_share);
        if want_chain {
            let at_poi = rng.random_bool(self.config.poi_transfer_share);
            let pool = match (at_poi, self.poi_transfer.is_empty(), self.plain_transfer.is_empty()) {
                (true, false, _) | (false, false, true) => &self.poi_transfer,
                (_, _, false) => &self.plain_transfer,
                _ => return vec![self.single_leg(rng, time)],
            };
            let x = pool[rng.random_range(0..pool.len())];
            return self.chained(rng, time, x);
        }
        vec![self.single_leg(rng, time)]
    }

    fn rail(&self, rng: &mut ChaCha8Rng, time: u32) -> Draft {
        Draft::Rail {
            station: rng.random_range(1..=RAIL_STATIONS),
            time,
        }
    }

    fn regular_draft(&self, rng: &mut ChaCha8Rng) -> Draft {
        let time = departure(rng);
        if rng.random_bool(self.config.rail_share) {
            self.rail(rng, time)
        } else {
            Draft::Bus(self.bus(rng, time))
        }
    }

    fn stratum(&self, draft: &Draft, date: NaiveDate) -> Stratum {
        let day_type = DayType::of(date);
        match draft {
            Draft::Rail { time, .. } => (false, day_type, time_bin(*time)),
            Draft::Bus(legs) if legs.len() >= 2 => {
                let leg2 = &legs[1];
                let x = self.net.patterns[leg2.pattern].stops[leg2.from];
                let t2 = leg2.board_time;
                let planted = self.planted_stop[x]
                    && day_type == DayType::Weekday
                    && (self.config.planted_start..self.config.planted_end).contains(&t2);
                (planted, day_type, time_bin(t2))
            }
            Draft::Bus(legs) => (false, day_type, time_bin(legs[0].board_time)),
        }
    }

    fn emit(&mut self, draft: Draft, card_id: &str, product: FareProduct, date: NaiveDate, rng: &mut ChaCha8Rng) -> Vec<Stage> {
        self.next_journey += 1;
        let journey_id = format!("J{:07}", self.next_journey);
        match draft {
            Draft::Rail { station, time } => vec![rail_stage(
                self.config.alighting_coverage,
                RailTap {
                    card_id,
                    journey_id,
                    date,
                    time,
                    product,
                    station,
                },
                rng,
            )],
            Draft::Bus(legs) => legs
                .iter()
                .enumerate()
                .map(|(i, leg)| {
                    let pat = &self.net.patterns[leg.pattern];
                    let alighted = rng.random_bool(self.config.alighting_coverage);
                    let vehicle = rng.random_range(1..=VEHICLES_PER_ROUTE);
                    Stage {
                        card_id: card_id.to_string(),
                        journey_id: journey_id.clone(),
                        stage_index: i as u32 + 1,
                        service_date: date,
                        board_stop: stop_id(pat.stops[leg.from]),
                        alight_stop: alighted.then(|| stop_id(pat.stops[leg.from + leg.hops])),
                        board_time: leg.board_time,
                        alight_time: alighted.then(|| leg.arrival()),
                        mode: Mode::Bus,
                        route_id: Some(pat.route_id.clone()),
                        direction_id: Some(pat.direction_id),
                        device_id: format!("BUS-{}-{vehicle:02}", pat.route_id),
                        fare_product: product,
                        fare_paid: if i == 0 { fare(product, BUS_FARE) } else { 0 },
                        distance_m: alighted.then_some(leg.hops as f64 * SPACING_M),
                    }
                })
                .collect(),
        }
    }
}

/// Women's share among journeys of a stratum such that a balanced sample of the regular
/// cards sees `share`.
fn journey_target(share: f64, women: usize, men: usize) -> f64 {
    let w = share * women as f64;
    let m = (1.0 - share) * men as f64;
    if w + m == 0.0 {
        0.5
    } else {
        w / (w + m)
    }
}

/// Distinct day offsets for a card active on `lo..=hi` days.
fn active_days(config: &SynthConfig, lo: u32, hi: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let k = rng.random_range(lo..=hi).min(config.days);
    let mut d: Vec<u32> = sample(rng, config.days as usize, k as usize)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    d.sort_unstable();
    d
}

pub(crate) fn simulate(
    config: &SynthConfig,
    net: &Network,
    placed: &PlacedPois,
    cards: &Cards,
    rng: &mut ChaCha8Rng,
) -> Vec<Stage> {
    let mut b = Builder::new(config, net, placed);
    let mut stages = Vec::new();
    let (nw, nm) = (cards.regular_women.len(), cards.regular_men.len());
    let q_planted = journey_target(config.planted_share, nw, nm);
    let q_base = journey_target(config.baseline_share, nw, nm);
    let mut carry: HashMap<Stratum, f64> = HashMap::new();
    let regular = nw + nm;

    for d in 0..config.days {
        let date = config.start_date + Days::new(u64::from(d));
        let damping = match DayType::of(date) {
            DayType::Weekday => 1.0,
            DayType::Weekend => config.weekend_damping,
        };
        let n = (regular as f64 * config.weekday_journeys_per_card * damping).round() as usize;
        for _ in 0..n {
            let draft = b.regular_draft(rng);
            let stratum = b.stratum(&draft, date);
            let q = if stratum.0 { q_planted } else { q_base };
            let acc = carry.entry(stratum).or_insert(0.0);
            *acc += q;
            let pool = if *acc >= 0.5 {
                *acc -= 1.0;
                &cards.regular_women
            } else {
                &cards.regular_men
            };
            if pool.is_empty() {
                continue;
            }
            let card = &cards.all[pool[rng.random_range(0..pool.len())]];
            stages.extend(b.emit(draft, &card.card_id, card.product, date, rng));
        }
    }

    for &i in &cards.occasional {
        let card = &cards.all[i];
        for d in active_days(config, 1, 9, rng) {
            let date = config.start_date + Days::new(u64::from(d));
            let time = departure(rng);
            let leg = b.single_leg(rng, time);
            stages.extend(b.emit(Draft::Bus(vec![leg]), &card.card_id, card.product, date, rng));
        }
    }
    for &i in &cards.anonymous {
        let card = &cards.all[i];
        for d in active_days(config, 10, 40, rng) {
            let date = config.start_date + Days::new(u64::from(d));
            let time = departure(rng);
            let legs = b.bus(rng, time);
            stages.extend(b.emit(Draft::Bus(legs), &card.card_id, card.product, date, rng));
        }
    }
    for &i in &cards.rail_only {
        let card = &cards.all[i];
        for d in active_days(config, 12, 30, rng) {
            let date = config.start_date + Days::new(u64::from(d));
            let time = departure(rng);
            let draft = b.rail(rng, time);
            stages.extend(b.emit(draft, &card.card_id, card.product, date, rng));
        }
    }
    stages
}
