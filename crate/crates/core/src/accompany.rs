//! Accompaniment of student, senior and disabled fare-product holders.
//!
//! Two cards accompany each other when their taps are consecutive at the same fare
//! device and at most 30 seconds apart, and at least one of them holds a target product.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvutil::write_table;
use crate::gender::GenderLabel;
use crate::ingest::{DayType, FareProduct, IngestError, Mode, Stage};

pub const MAX_GAP_S: i64 = 30;
pub const MONTH_THRESHOLD: u32 = 4;
pub const QUARTER_THRESHOLD: u32 = 10;
/// About one accompaniment per week over a 13-week quarter.
pub const LOW_RATE_MAX: u32 = 13;
/// About three accompaniments per week over a 13-week quarter.
pub const HIGH_RATE_MIN: u32 = 39;
pub const DISPLAY_MIN_SHARE: f64 = 0.03;
const WEEKS_PER_QUARTER: u32 = 13;
const RATE_BUCKET_CAP: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccompanimentClass {
    Student,
    Senior,
    Disabled,
}

impl AccompanimentClass {
    pub const ALL: [AccompanimentClass; 3] = [
        AccompanimentClass::Student,
        AccompanimentClass::Senior,
        AccompanimentClass::Disabled,
    ];

    pub fn of(product: FareProduct) -> Option<Self> {
        match product {
            FareProduct::Student => Some(Self::Student),
            FareProduct::Senior => Some(Self::Senior),
            FareProduct::Disabled => Some(Self::Disabled),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Student => "student",
            Self::Senior => "senior",
            Self::Disabled => "disabled",
        }
    }
}

impl fmt::Display for AccompanimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tap {
    pub card_id: String,
    pub journey_id: String,
    pub device_id: String,
    pub service_date: NaiveDate,
    /// Seconds after midnight of the service date.
    pub time: u32,
    pub fare_product: FareProduct,
    pub mode: Mode,
}

impl Tap {
    pub fn from_stage(s: &Stage) -> Self {
        Self {
            card_id: s.card_id.clone(),
            journey_id: s.journey_id.clone(),
            device_id: s.device_id.clone(),
            service_date: s.service_date,
            time: s.board_time,
            fare_product: s.fare_product,
            mode: s.mode,
        }
    }

    fn instant(&self) -> i64 {
        i64::from(self.service_date.num_days_from_ce()) * 86_400 + i64::from(self.time)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct AccompanimentEvent {
    pub device_id: String,
    pub service_date: NaiveDate,
    /// Time of the earlier tap of the pair.
    pub time: u32,
    pub accompanied_card: String,
    pub accompanying_card: String,
    pub class: AccompanimentClass,
    pub gap_seconds: u32,
    pub mode: Mode,
    pub accompanying_product: FareProduct,
    pub accompanied_journey: String,
}

impl AccompanimentEvent {
    pub fn day_type(&self) -> DayType {
        DayType::of(self.service_date)
    }
}

/// Scans each device's taps in time order and pairs consecutive taps at most 30 s apart.
/// A pair yields one event per target-product card in it. Output is sorted.
pub fn detect_events(taps: Vec<Tap>) -> Vec<AccompanimentEvent> {
    let mut by_device: HashMap<String, Vec<Tap>> = HashMap::new();
    for t in taps {
        by_device.entry(t.device_id.clone()).or_default().push(t);
    }
    let mut events: Vec<AccompanimentEvent> = by_device
        .into_par_iter()
        .flat_map_iter(|(_, mut taps)| {
            taps.sort_by(|a, b| (a.instant(), &a.card_id).cmp(&(b.instant(), &b.card_id)));
            let mut out = Vec::new();
            for w in taps.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                let gap = b.instant() - a.instant();
                if gap > MAX_GAP_S || a.card_id == b.card_id {
                    continue;
                }
                for (accompanied, other) in [(a, b), (b, a)] {
                    if let Some(class) = AccompanimentClass::of(accompanied.fare_product) {
                        out.push(AccompanimentEvent {
                            device_id: a.device_id.clone(),
                            service_date: a.service_date,
                            time: a.time,
                            accompanied_card: accompanied.card_id.clone(),
                            accompanying_card: other.card_id.clone(),
                            class,
                            gap_seconds: gap as u32,
                            mode: accompanied.mode,
                            accompanying_product: other.fare_product,
                            accompanied_journey: accompanied.journey_id.clone(),
                        });
                    }
                }
            }
            out
        })
        .collect();
    events.sort();
    events
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccompanimentPattern {
    pub accompanied_card: String,
    pub accompanying_card: String,
    pub class: AccompanimentClass,
    pub total: u32,
    /// Keyed by (year, month).
    pub monthly: BTreeMap<(i32, u32), u32>,
    pub accompanying_products: BTreeMap<FareProduct, u32>,
    pub qualifies: bool,
}

impl AccompanimentPattern {
    fn qualifies(monthly: &BTreeMap<(i32, u32), u32>, total: u32) -> bool {
        monthly.values().any(|&c| c >= MONTH_THRESHOLD) || total >= QUARTER_THRESHOLD
    }
}

/// Groups events by (accompanied, accompanying, class). Sorted by that key.
pub fn aggregate_patterns(events: &[AccompanimentEvent]) -> Vec<AccompanimentPattern> {
    let mut groups: BTreeMap<(&str, &str, AccompanimentClass), Vec<&AccompanimentEvent>> = BTreeMap::new();
    for e in events {
        groups
            .entry((&e.accompanied_card, &e.accompanying_card, e.class))
            .or_default()
            .push(e);
    }
    groups
        .into_iter()
        .map(|((accompanied, accompanying, class), evs)| {
            let mut monthly = BTreeMap::new();
            let mut products = BTreeMap::new();
            for e in &evs {
                *monthly.entry((e.service_date.year(), e.service_date.month())).or_insert(0) += 1;
                *products.entry(e.accompanying_product).or_insert(0) += 1;
            }
            let total = evs.len() as u32;
            AccompanimentPattern {
                accompanied_card: accompanied.to_string(),
                accompanying_card: accompanying.to_string(),
                class,
                total,
                qualifies: AccompanimentPattern::qualifies(&monthly, total),
                monthly,
                accompanying_products: products,
            }
        })
        .collect()
}

/// Hour-of-day boardings of all trips, the comparison baseline for accompaniment timing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HourCounts {
    pub weekday: [u64; 24],
    pub weekend: [u64; 24],
}

impl HourCounts {
    pub fn add(&mut self, date: NaiveDate, time: u32) {
        let hour = ((time / 3600) % 24) as usize;
        match DayType::of(date) {
            DayType::Weekday => self.weekday[hour] += 1,
            DayType::Weekend => self.weekend[hour] += 1,
        }
    }

    pub fn get(&self, day_type: DayType) -> &[u64; 24] {
        match day_type {
            DayType::Weekday => &self.weekday,
            DayType::Weekend => &self.weekend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourlyDensity {
    pub day_type: DayType,
    /// A class name or `all_trips`.
    pub series: String,
    pub total: u64,
    /// Sums to 1 when `total > 0`, all zeros otherwise.
    pub density: [f64; 24],
}

fn normalize(counts: &[u64; 24]) -> (u64, [f64; 24]) {
    let total: u64 = counts.iter().sum();
    let mut d = [0.0; 24];
    if total > 0 {
        for (o, &c) in d.iter_mut().zip(counts) {
            *o = c as f64 / total as f64;
        }
    }
    (total, d)
}

/// Per-class hour-of-day densities of events, weekday and weekend, plus the baseline.
pub fn hourly_distribution(events: &[AccompanimentEvent], baseline: &HourCounts) -> Vec<HourlyDensity> {
    let mut out = Vec::new();
    for day_type in [DayType::Weekday, DayType::Weekend] {
        for class in AccompanimentClass::ALL {
            let mut counts = [0u64; 24];
            for e in events.iter().filter(|e| e.class == class && e.day_type() == day_type) {
                counts[((e.time / 3600) % 24) as usize] += 1;
            }
            let (total, density) = normalize(&counts);
            out.push(HourlyDensity {
                day_type,
                series: class.as_str().to_string(),
                total,
                density,
            });
        }
        let (total, density) = normalize(baseline.get(day_type));
        out.push(HourlyDensity {
            day_type,
            series: "all_trips".to_string(),
            total,
            density,
        });
    }
    out
}

/// Weekly-rate bucket of a pattern's quarterly total: 0 for under one per week, capped at 5.
pub fn rate_bucket(total: u32) -> u32 {
    (total / WEEKS_PER_QUARTER).min(RATE_BUCKET_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBucketRow {
    pub bucket: u32,
    pub patterns: u64,
    pub unregistered: u64,
    pub registered_gendered: u64,
    pub women: u64,
    /// Women among registered cards with a binary label; absent when there are none.
    pub women_ratio: Option<f64>,
    pub unregistered_ratio: f64,
}

/// Women and unregistered shares of accompanying cards by weekly accompaniment rate,
/// over qualifying patterns. `cards` maps card id to (label, registered).
pub fn gender_vs_rate(
    patterns: &[AccompanimentPattern],
    cards: &HashMap<String, (GenderLabel, bool)>,
) -> Vec<RateBucketRow> {
    let mut buckets: BTreeMap<u32, (u64, u64, u64, u64)> = BTreeMap::new();
    for p in patterns.iter().filter(|p| p.qualifies) {
        let b = buckets.entry(rate_bucket(p.total)).or_default();
        b.0 += 1;
        match cards.get(&p.accompanying_card) {
            Some((label, true)) => {
                if label.is_binary() {
                    b.2 += 1;
                    if *label == GenderLabel::Woman {
                        b.3 += 1;
                    }
                }
            }
            _ => b.1 += 1,
        }
    }
    buckets
        .into_iter()
        .map(|(bucket, (n, unreg, gendered, women))| RateBucketRow {
            bucket,
            patterns: n,
            unregistered: unreg,
            registered_gendered: gendered,
            women,
            women_ratio: (gendered > 0).then(|| women as f64 / gendered as f64),
            unregistered_ratio: unreg as f64 / n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateGroup {
    Low,
    High,
}

impl RateGroup {
    pub fn of(total: u32, low_max: u32, high_min: u32) -> Option<Self> {
        if total <= low_max {
            Some(RateGroup::Low)
        } else if total >= high_min {
            Some(RateGroup::High)
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RateGroup::Low => "low",
            RateGroup::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FareShare {
    pub group: RateGroup,
    pub class: AccompanimentClass,
    pub product: FareProduct,
    pub events: u64,
    /// Share of the (group, class) events; shares of one (group, class) sum to 1.
    pub share: f64,
    /// At or above the 3% display threshold.
    pub displayed: bool,
}

/// Accompanying fare product mix of qualifying patterns, split into low-rate and
/// high-rate patterns by quarterly event count.
pub fn fare_breakdown(patterns: &[AccompanimentPattern], low_max: u32, high_min: u32) -> Vec<FareShare> {
    let mut counts: BTreeMap<(RateGroup, AccompanimentClass), BTreeMap<FareProduct, u64>> = BTreeMap::new();
    for p in patterns.iter().filter(|p| p.qualifies) {
        let Some(group) = RateGroup::of(p.total, low_max, high_min) else {
            continue;
        };
        let c = counts.entry((group, p.class)).or_default();
        for (&product, &n) in &p.accompanying_products {
            *c.entry(product).or_default() += u64::from(n);
        }
    }
    let mut out = Vec::new();
    for ((group, class), products) in counts {
        let total: u64 = products.values().sum();
        for (product, events) in products {
            let share = events as f64 / total as f64;
            out.push(FareShare {
                group,
                class,
                product,
                events,
                share,
                displayed: share >= DISPLAY_MIN_SHARE,
            });
        }
    }
    out
}

/// Totals that depend on the counting unit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AccompanimentTotals {
    pub events: u64,
    pub accompanied_journeys: u64,
    pub patterns: u64,
    pub qualifying_patterns: u64,
    pub events_by_class: BTreeMap<AccompanimentClass, u64>,
}

pub fn totals(events: &[AccompanimentEvent], patterns: &[AccompanimentPattern]) -> AccompanimentTotals {
    let mut by_class = BTreeMap::new();
    for e in events {
        *by_class.entry(e.class).or_default() += 1;
    }
    let journeys: BTreeSet<(&str, &str)> = events
        .iter()
        .map(|e| (e.accompanied_card.as_str(), e.accompanied_journey.as_str()))
        .collect();
    AccompanimentTotals {
        events: events.len() as u64,
        accompanied_journeys: journeys.len() as u64,
        patterns: patterns.len() as u64,
        qualifying_patterns: patterns.iter().filter(|p| p.qualifies).count() as u64,
        events_by_class: by_class,
    }
}

pub fn write_events(events: &[AccompanimentEvent], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = [
        "device_id",
        "service_date",
        "time",
        "accompanied_card",
        "accompanying_card",
        "class",
        "gap_seconds",
        "mode",
        "accompanying_product",
    ];
    let rows = events.iter().map(|e| {
        [
            e.device_id.clone(),
            e.service_date.to_string(),
            e.time.to_string(),
            e.accompanied_card.clone(),
            e.accompanying_card.clone(),
            e.class.to_string(),
            e.gap_seconds.to_string(),
            e.mode.as_str().to_string(),
            e.accompanying_product.to_string(),
        ]
    });
    write_table(path.as_ref(), &header, rows)
}

pub fn write_patterns(patterns: &[AccompanimentPattern], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = [
        "accompanied_card",
        "accompanying_card",
        "class",
        "total",
        "max_month",
        "monthly",
        "qualifies",
    ];
    let rows = patterns.iter().map(|p| {
        let monthly: Vec<String> = p.monthly.iter().map(|((y, m), c)| format!("{y}-{m:02}:{c}")).collect();
        [
            p.accompanied_card.clone(),
            p.accompanying_card.clone(),
            p.class.to_string(),
            p.total.to_string(),
            p.monthly.values().max().copied().unwrap_or(0).to_string(),
            monthly.join(";"),
            p.qualifies.to_string(),
        ]
    });
    write_table(path.as_ref(), &header, rows)
}

pub fn write_hourly(rows: &[HourlyDensity], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["day_type", "series", "hour", "count_total", "density"];
    let out = rows.iter().flat_map(|r| {
        (0..24).map(move |h| {
            [
                r.day_type.as_str().to_string(),
                r.series.clone(),
                h.to_string(),
                r.total.to_string(),
                format!("{:.6}", r.density[h]),
            ]
        })
    });
    write_table(path.as_ref(), &header, out)
}

pub fn write_gender_vs_rate(rows: &[RateBucketRow], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = [
        "per_week",
        "patterns",
        "unregistered",
        "registered_gendered",
        "women",
        "women_pct",
        "unregistered_pct",
    ];
    let out = rows.iter().map(|r| {
        [
            if r.bucket == RATE_BUCKET_CAP {
                format!("{}+", r.bucket)
            } else {
                r.bucket.to_string()
            },
            r.patterns.to_string(),
            r.unregistered.to_string(),
            r.registered_gendered.to_string(),
            r.women.to_string(),
            r.women_ratio.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default(),
            format!("{:.2}", r.unregistered_ratio * 100.0),
        ]
    });
    write_table(path.as_ref(), &header, out)
}

/// Writes only the rows passing the display filter; percentages are of the unfiltered total.
pub fn write_fare_breakdown(rows: &[FareShare], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["rate_group", "class", "product", "events", "pct"];
    let out = rows.iter().filter(|r| r.displayed).map(|r| {
        [
            r.group.as_str().to_string(),
            r.class.to_string(),
            r.product.to_string(),
            r.events.to_string(),
            format!("{:.2}", r.share * 100.0),
        ]
    });
    write_table(path.as_ref(), &header, out)
}
