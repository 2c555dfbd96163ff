//! Ground truth emitted next to a synthetic city.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::names::Cards;
use super::network::{poi_stop_ids, stop_id, Network, PlacedPois};
use super::{SynthConfig, SynthError};
use crate::accompany::AccompanimentClass;
use crate::gender::GenderLabel;
use crate::ingest::{DayType, FareProduct, Mode, PoiClass, Stage};
use crate::mocgeo::{time_bin, CenterBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardCategory {
    /// Frequent registered bus riders with a known gender.
    Regular,
    /// Registered bus riders active on fewer than ten days.
    Occasional,
    /// Unregistered cards and cards whose name has no usable gender.
    Anonymous,
    RailOnly,
    /// Target-product holder in a planted accompaniment pair.
    Accompanied,
    Accompanying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardTruth {
    pub card_id: String,
    pub category: CardCategory,
    pub gender: GenderLabel,
    pub registered: bool,
    /// Canonical first name behind the registration spelling.
    pub name: Option<String>,
    /// Label that inference at the default cutoff must produce.
    pub expected_label: GenderLabel,
    pub product: FareProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTruth {
    pub route_id: String,
    pub direction_id: u8,
    pub stops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiTruth {
    pub poi_id: String,
    pub class: PoiClass,
    /// Stop the POI was placed around; `None` for POIs placed away from the network.
    pub anchor_stop: Option<String>,
    pub anchor_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBin {
    pub class: PoiClass,
    pub day_type: DayType,
    pub bin: usize,
    /// Women's share of second-stage boardings a balanced sample sees.
    pub women_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterTruth {
    pub bbox: CenterBox,
    pub inside: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub accompanied_card: String,
    pub accompanying_card: String,
    pub class: AccompanimentClass,
    /// `None` for the occasional pairs planted below the qualification thresholds.
    pub rate_per_week: Option<u32>,
    pub events: u32,
    pub expected_qualifies: bool,
    pub accompanying_product: FareProduct,
    pub accompanying_registered: bool,
    pub accompanying_gender: GenderLabel,
    pub device_id: String,
}

/// A pattern that accompaniment aggregation must report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPattern {
    pub accompanied_card: String,
    pub accompanying_card: String,
    pub class: AccompanimentClass,
    pub total: u32,
    pub qualifies: bool,
    pub accompanying_product: FareProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTruth {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
    pub groups: usize,
    pub per_group: usize,
    pub flagged_per_group: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub cards: usize,
    pub journeys: usize,
    pub stages: usize,
    pub bus_stages: usize,
    pub bus_stages_with_alighting: usize,
    pub rail_stages: usize,
    /// Second-stage bus boardings by regular cards in planted bins, by gender.
    pub planted_women: usize,
    pub planted_men: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub seed: u64,
    /// Canonical generator config.
    pub config: BTreeMap<String, String>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub cards: Vec<CardTruth>,
    pub patterns: Vec<PatternTruth>,
    pub pois: Vec<PoiTruth>,
    /// Stops whose 400 m walkshed reaches a POI of the class on some pattern.
    pub poi_stops: BTreeMap<PoiClass, Vec<String>>,
    pub planted_bins: Vec<PlantedBin>,
    pub baseline_share: f64,
    pub center: CenterTruth,
    pub alighting_coverage: f64,
    pub accompaniment_pairs: Vec<PlantedPair>,
    pub expected_patterns: Vec<ExpectedPattern>,
    pub mixed: MixedTruth,
    pub counts: Counts,
}

impl TruthManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| SynthError::Manifest(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn card(&self, card_id: &str) -> Option<&CardTruth> {
        self.cards
            .binary_search_by(|c| c.card_id.as_str().cmp(card_id))
            .ok()
            .map(|i| &self.cards[i])
    }

    pub fn cards_of(&self, category: CardCategory) -> impl Iterator<Item = &CardTruth> {
        self.cards.iter().filter(move |c| c.category == category)
    }

    pub fn planted_bin_set(&self) -> BTreeSet<(PoiClass, DayType, usize)> {
        self.planted_bins.iter().map(|b| (b.class, b.day_type, b.bin)).collect()
    }
}

/// Bins lying entirely inside `[start, end)`.
fn planted_bins(config: &SynthConfig) -> Vec<PlantedBin> {
    let first = time_bin(config.planted_start);
    let last = config.planted_end.checked_sub(1).and_then(time_bin);
    let (Some(first), Some(last)) = (first, last) else {
        return Vec::new();
    };
    (first..=last)
        .filter(|&b| {
            let s = crate::mocgeo::WINDOW_START_S + b as u32 * crate::mocgeo::BIN_SECONDS;
            s >= config.planted_start && s + crate::mocgeo::BIN_SECONDS <= config.planted_end
        })
        .map(|bin| PlantedBin {
            class: config.planted_class,
            day_type: DayType::Weekday,
            bin,
            women_share: config.planted_share,
        })
        .collect()
}

pub(crate) fn build(
    config: &SynthConfig,
    net: &Network,
    placed: &PlacedPois,
    cards: &Cards,
    stages: &[Stage],
    pairs: Vec<PlantedPair>,
    expected_patterns: Vec<ExpectedPattern>,
) -> TruthManifest {
    let mut card_truths: Vec<CardTruth> = cards
        .all
        .iter()
        .map(|c| CardTruth {
            card_id: c.card_id.clone(),
            category: c.category,
            gender: c.gender,
            registered: c.registered,
            name: c.name.clone(),
            expected_label: c.expected_label,
            product: c.product,
        })
        .collect();
    card_truths.sort_by(|a, b| a.card_id.cmp(&b.card_id));

    let planted_stops: BTreeSet<String> = placed.stops_of(config.planted_class).into_iter().map(stop_id).collect();
    let regular: BTreeMap<&str, GenderLabel> = cards
        .all
        .iter()
        .filter(|c| c.category == CardCategory::Regular)
        .map(|c| (c.card_id.as_str(), c.gender))
        .collect();
    let mut counts = Counts {
        cards: cards.all.len(),
        stages: stages.len(),
        ..Counts::default()
    };
    let mut journeys = BTreeSet::new();
    for s in stages {
        journeys.insert(s.journey_id.as_str());
        match s.mode {
            Mode::Bus => {
                counts.bus_stages += 1;
                if s.alight_stop.is_some() {
                    counts.bus_stages_with_alighting += 1;
                }
            }
            Mode::Rail => counts.rail_stages += 1,
        }
        let planted = s.mode == Mode::Bus
            && s.stage_index >= 2
            && s.day_type() == DayType::Weekday
            && (config.planted_start..config.planted_end).contains(&s.board_time)
            && planted_stops.contains(&s.board_stop);
        if planted {
            match regular.get(s.card_id.as_str()) {
                Some(GenderLabel::Woman) => counts.planted_women += 1,
                Some(_) => counts.planted_men += 1,
                None => {}
            }
        }
    }
    counts.journeys = journeys.len();

    TruthManifest {
        seed: config.seed,
        config: config.to_kv().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        start_date: config.start_date,
        end_date: config.end_date(),
        cards: card_truths,
        patterns: net
            .patterns
            .iter()
            .map(|p| PatternTruth {
                route_id: p.route_id.clone(),
                direction_id: p.direction_id,
                stops: p.stops.iter().map(|&k| stop_id(k)).collect(),
            })
            .collect(),
        pois: placed.truths.clone(),
        poi_stops: poi_stop_ids(placed),
        planted_bins: planted_bins(config),
        baseline_share: config.baseline_share,
        center: CenterTruth {
            bbox: net.center,
            inside: net.inside_center,
            total: config.n_stops,
        },
        alighting_coverage: config.alighting_coverage,
        accompaniment_pairs: pairs,
        expected_patterns,
        mixed: MixedTruth {
            beta0: config.mixed_beta0,
            beta1: config.mixed_beta1,
            sigma_u2: config.mixed_sigma_u2,
            sigma_e2: config.mixed_sigma_e2,
            groups: config.mixed_groups,
            per_group: config.mixed_per_group,
            flagged_per_group: config.mixed_flagged_per_group,
        },
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_covers_twelve_bins() {
        let bins = planted_bins(&SynthConfig::new(1));
        assert_eq!(bins.iter().map(|b| b.bin).collect::<Vec<_>>(), (2..=13).collect::<Vec<_>>());
        let mut cfg = SynthConfig::new(1);
        cfg.planted_start = 6 * 3600 + 40 * 60;
        assert_eq!(planted_bins(&cfg).first().map(|b| b.bin), Some(3));
    }
}
