use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use super::parity::{percentile_table, stop_deviation, ParityAccumulator, ParityCell};
use super::{bin_start_label, case1_classes, case2_point, coverage, Case, CenterBox, StopClassIndex, WINDOW_HOURS};
use crate::csvutil::write_table;
use crate::gender::GenderLabel;
use crate::ingest::{DayType, IngestError, Mode, PoiClass, Stage, Stop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Target {
    Class(PoiClass),
    /// Every bus boarding (Case 1) or alighting (Case 2) in the network.
    AllStops,
    /// Boardings or alightings at stops outside every POI stop set.
    NonPoiStops,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Class(c) => f.write_str(c.as_str()),
            Target::AllStops => f.write_str("all"),
            Target::NonPoiStops => f.write_str("non_poi"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Area {
    All,
    OutsideCenter,
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Area::All => "all",
            Area::OutsideCenter => "outside_center",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Scope {
    pub target: Target,
    pub day_type: DayType,
    pub area: Area,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MocConfig {
    pub case: Case,
    pub day_types: Vec<DayType>,
    pub center: Option<CenterBox>,
    /// Service dates dropped before any counting (holidays, closures).
    pub excluded_dates: BTreeSet<NaiveDate>,
}

impl Default for MocConfig {
    fn default() -> Self {
        Self {
            case: Case::One,
            day_types: vec![DayType::Weekday, DayType::Weekend],
            center: None,
            excluded_dates: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEntry {
    pub scope: Scope,
    pub cells: Vec<ParityCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileRow {
    pub scope: Scope,
    /// Stops with at least one in-window trip.
    pub stops: usize,
    /// p25, p50, p75, p90 of per-stop deviations.
    pub values: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRow {
    pub scope: Scope,
    pub stops: usize,
    pub women_stages: u64,
    pub men_stages: u64,
    pub days: usize,
    pub women_per_hour: f64,
    pub men_per_hour: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MocReport {
    pub config: MocConfig,
    pub series: Vec<SeriesEntry>,
    pub percentiles: Vec<PercentileRow>,
    pub flow: Vec<FlowRow>,
    /// Sampled-card bus stages seen after date filtering.
    pub bus_stages: u64,
    pub without_alighting: u64,
    pub alighting_coverage: f64,
    pub out_of_window: u64,
    /// Tagged POI trips per class (all day types, in or out of window).
    pub tagged: BTreeMap<PoiClass, u64>,
}

impl MocReport {
    pub fn series_for(&self, scope: Scope) -> Option<&[ParityCell]> {
        self.series.iter().find(|s| s.scope == scope).map(|s| s.cells.as_slice())
    }
}

/// Streams stages of one analysis case and accumulates every scope at once.
pub struct MocAnalyzer<'a> {
    config: MocConfig,
    index: &'a StopClassIndex,
    labels: &'a HashMap<String, GenderLabel>,
    stops: &'a [Stop],
    inside_center: HashSet<&'a str>,
    acc: HashMap<Scope, ParityAccumulator>,
    dates: BTreeMap<DayType, BTreeSet<NaiveDate>>,
    bus_stages: u64,
    without_alighting: u64,
    tagged: BTreeMap<PoiClass, u64>,
}

impl<'a> MocAnalyzer<'a> {
    /// `labels` maps the sampled cards to their binary label; other cards are ignored.
    pub fn new(
        config: MocConfig,
        index: &'a StopClassIndex,
        labels: &'a HashMap<String, GenderLabel>,
        stops: &'a [Stop],
    ) -> Self {
        let inside_center = match &config.center {
            Some(b) => stops
                .iter()
                .filter(|s| b.contains(s.lat, s.lon))
                .map(|s| s.stop_id.as_str())
                .collect(),
            None => HashSet::new(),
        };
        Self {
            config,
            index,
            labels,
            stops,
            inside_center,
            acc: HashMap::new(),
            dates: BTreeMap::new(),
            bus_stages: 0,
            without_alighting: 0,
            tagged: BTreeMap::new(),
        }
    }

    fn areas(&self, stop: &str) -> &'static [Area] {
        match self.config.center {
            Some(_) if !self.inside_center.contains(stop) => &[Area::All, Area::OutsideCenter],
            _ => &[Area::All],
        }
    }

    fn add(&mut self, target: Target, day_type: DayType, stop: &str, stage: &Stage, time: u32, label: GenderLabel) {
        for &area in self.areas(stop) {
            let scope = Scope { target, day_type, area };
            self.acc
                .entry(scope)
                .or_default()
                .add(stop, stage.service_date, time, label);
        }
    }

    pub fn observe(&mut self, stage: &Stage) {
        if self.config.excluded_dates.contains(&stage.service_date) {
            return;
        }
        let day_type = stage.day_type();
        if !self.config.day_types.contains(&day_type) {
            return;
        }
        self.dates.entry(day_type).or_default().insert(stage.service_date);
        let Some(&label) = self.labels.get(&stage.card_id) else {
            return;
        };
        if stage.mode != Mode::Bus {
            return;
        }
        self.bus_stages += 1;
        let index = self.index;
        let (stop, time, classes): (&str, u32, &[PoiClass]) = match self.config.case {
            Case::One => (&stage.board_stop, stage.board_time, case1_classes(stage, index)),
            Case::Two => match case2_point(stage) {
                Some((stop, time)) => (stop, time, index.classes(stop)),
                None => {
                    self.without_alighting += 1;
                    return;
                }
            },
        };
        self.add(Target::AllStops, day_type, stop, stage, time, label);
        if !index.is_poi_stop(stop) {
            self.add(Target::NonPoiStops, day_type, stop, stage, time, label);
        }
        for &class in classes {
            *self.tagged.entry(class).or_default() += 1;
            self.add(Target::Class(class), day_type, stop, stage, time, label);
        }
    }

    fn scope_stop_count(&self, scope: &Scope) -> usize {
        let in_area = |s: &&str| scope.area == Area::All || !self.inside_center.contains(s);
        match scope.target {
            Target::Class(c) => self.index.stops_of(c).into_iter().filter(in_area).count(),
            Target::AllStops => self.stops.iter().map(|s| s.stop_id.as_str()).filter(in_area).count(),
            Target::NonPoiStops => self
                .stops
                .iter()
                .map(|s| s.stop_id.as_str())
                .filter(|s| !self.index.is_poi_stop(s))
                .filter(in_area)
                .count(),
        }
    }

    pub fn finish(self) -> MocReport {
        let mut targets: Vec<Target> = PoiClass::ALL.iter().map(|&c| Target::Class(c)).collect();
        targets.extend([Target::AllStops, Target::NonPoiStops]);
        let mut areas = vec![Area::All];
        if self.config.center.is_some() {
            areas.push(Area::OutsideCenter);
        }
        let mut day_types = self.config.day_types.clone();
        day_types.sort();
        day_types.dedup();

        let empty = ParityAccumulator::default();
        let mut series = Vec::new();
        let mut percentiles = Vec::new();
        let mut flow = Vec::new();
        let mut out_of_window = 0;
        for &day_type in &day_types {
            let days = self.dates.get(&day_type).map_or(0, BTreeSet::len);
            for &target in &targets {
                for &area in &areas {
                    let scope = Scope { target, day_type, area };
                    let acc = self.acc.get(&scope).unwrap_or(&empty);
                    if area == Area::All && target == Target::AllStops {
                        out_of_window += acc.out_of_window();
                    }
                    series.push(SeriesEntry {
                        scope,
                        cells: acc.series(),
                    });

                    let totals = acc.stop_totals();
                    let mut devs: Vec<(&str, f64)> = totals
                        .iter()
                        .filter_map(|(s, &(w, m))| stop_deviation(w, m).map(|d| (*s, d)))
                        .collect();
                    devs.sort_by(|a, b| a.0.cmp(b.0));
                    percentiles.push(PercentileRow {
                        scope,
                        stops: devs.len(),
                        values: percentile_table(devs.into_iter().map(|d| d.1).collect()),
                    });

                    let (women, men) = totals.values().fold((0, 0), |(w, m), c| (w + c.0, m + c.1));
                    let stops = self.scope_stop_count(&scope);
                    let hours = WINDOW_HOURS * stops as f64;
                    let per_hour = |n: u64| if hours > 0.0 { n as f64 / hours } else { 0.0 };
                    flow.push(FlowRow {
                        scope,
                        stops,
                        women_stages: women,
                        men_stages: men,
                        days,
                        women_per_hour: per_hour(women),
                        men_per_hour: per_hour(men),
                        delta: per_hour(women) - per_hour(men),
                    });
                }
            }
        }
        MocReport {
            alighting_coverage: coverage(self.bus_stages, self.without_alighting),
            config: self.config,
            series,
            percentiles,
            flow,
            bus_stages: self.bus_stages,
            without_alighting: self.without_alighting,
            out_of_window,
            tagged: self.tagged,
        }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

fn scope_cells(s: &Scope) -> [String; 3] {
    [s.target.to_string(), s.day_type.as_str().to_string(), s.area.to_string()]
}

pub fn write_parity_series(report: &MocReport, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = [
        "case",
        "target",
        "day_type",
        "area",
        "bin",
        "start",
        "n_trips",
        "n_women",
        "n_men",
        "n_obs",
        "deviation",
        "ci_half_width",
        "deviation_pct",
        "ci_low_pct",
        "ci_high_pct",
    ];
    let case = report.config.case.to_string();
    let rows = report.series.iter().flat_map(|entry| {
        let scope = scope_cells(&entry.scope);
        let case = case.clone();
        entry.cells.iter().map(move |c| {
            let pct = |v: Option<f64>| opt(v.map(|x| x * 100.0), 2);
            let lo = c.deviation.zip(c.ci_half_width).map(|(d, h)| d - h);
            let hi = c.deviation.zip(c.ci_half_width).map(|(d, h)| d + h);
            let mut row = vec![case.clone()];
            row.extend(scope.iter().cloned());
            row.extend([
                c.bin.to_string(),
                bin_start_label(c.bin),
                c.n_trips.to_string(),
                c.n_women.to_string(),
                c.n_men.to_string(),
                c.n_obs.to_string(),
                opt(c.deviation, 6),
                opt(c.ci_half_width, 6),
                pct(c.deviation),
                pct(lo),
                pct(hi),
            ]);
            row
        })
    });
    write_table(path.as_ref(), &header, rows)
}

pub fn write_percentiles(report: &MocReport, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = ["target", "day_type", "area", "stops", "p25_pct", "p50_pct", "p75_pct", "p90_pct"];
    let rows = report.percentiles.iter().map(|r| {
        let mut row: Vec<String> = scope_cells(&r.scope).into();
        row.push(r.stops.to_string());
        for i in 0..4 {
            row.push(opt(r.values.map(|v| v[i] * 100.0), 2));
        }
        row
    });
    write_table(path.as_ref(), &header, rows)
}

pub fn write_flow_stats(report: &MocReport, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let header = [
        "target",
        "day_type",
        "area",
        "stops",
        "women_stages",
        "men_stages",
        "days",
        "women_per_hour",
        "men_per_hour",
        "delta",
    ];
    let rows = report.flow.iter().map(|r| {
        let mut row: Vec<String> = scope_cells(&r.scope).into();
        row.extend([
            r.stops.to_string(),
            r.women_stages.to_string(),
            r.men_stages.to_string(),
            r.days.to_string(),
            format!("{:.2}", r.women_per_hour),
            format!("{:.2}", r.men_per_hour),
            format!("{:.2}", r.delta),
        ]);
        row
    });
    write_table(path.as_ref(), &header, rows)
}
