//! Synthetic first names, the name cache, the baby-names table and the card population.

#[cfg(test)]
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::accompaniment::{plan_pairs, PairPlan};
use super::manifest::CardCategory;
use super::SynthConfig;
use crate::gender::{BabyNames, GenderLabel, GenderRecord, NameCache, RecordSource};
use crate::ingest::{CardRegistration, FareProduct};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const WOMEN_ENDINGS: [&str; 3] = ["a", "ine", "elle"];
const MEN_ENDINGS: [&str; 3] = ["o", "an", "us"];
const AMBIGUOUS_ENDING: &str = "ey";
const BABY_WOMEN_ENDING: &str = "ia";
const BABY_MEN_ENDING: &str = "ord";

const CACHE_NAMES_PER_GENDER: usize = 300;
const BABY_ONLY_PER_GENDER: usize = 40;
const AMBIGUOUS_NAMES: usize = 60;
/// Registered gendered cards whose name is known only to the baby-names table.
const BABY_ONLY_SHARE: f64 = 0.15;

#[derive(Debug, Clone)]
pub(crate) struct NamePool {
    pub women: Vec<String>,
    pub men: Vec<String>,
    pub baby_women: Vec<String>,
    pub baby_men: Vec<String>,
    pub ambiguous: Vec<String>,
    pub cache: NameCache,
    pub baby_names: BabyNames,
}

fn stems(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let mut all: Vec<String> = syllables
        .iter()
        .flat_map(|a| syllables.iter().map(move |b| format!("{a}{b}")))
        .collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
        .unwrap_or_default()
}

impl NamePool {
    pub fn build(rng: &mut ChaCha8Rng) -> Self {
        let total = 2 * CACHE_NAMES_PER_GENDER + 2 * BABY_ONLY_PER_GENDER + AMBIGUOUS_NAMES;
        let mut stems = stems(rng, total).into_iter();
        let mut take = |n: usize, ending: &dyn Fn(usize) -> &'static str| -> Vec<String> {
            (0..n)
                .map(|i| capitalize(&format!("{}{}", stems.next().expect("enough stems"), ending(i))))
                .collect()
        };
        let women = take(CACHE_NAMES_PER_GENDER, &|i| WOMEN_ENDINGS[i % 3]);
        let men = take(CACHE_NAMES_PER_GENDER, &|i| MEN_ENDINGS[i % 3]);
        let baby_women = take(BABY_ONLY_PER_GENDER, &|_| BABY_WOMEN_ENDING);
        let baby_men = take(BABY_ONLY_PER_GENDER, &|_| BABY_MEN_ENDING);
        let ambiguous = take(AMBIGUOUS_NAMES, &|_| AMBIGUOUS_ENDING);

        let mut records = Vec::new();
        for (names, label) in [(&women, GenderLabel::Woman), (&men, GenderLabel::Man)] {
            for n in names {
                records.push(GenderRecord {
                    name: n.clone(),
                    label,
                    probability: (rng.random_range(0.80..0.995f64) * 1000.0).round() / 1000.0,
                    count: rng.random_range(50..5000),
                    source: RecordSource::RemoteProvider,
                });
            }
        }
        for (i, n) in ambiguous.iter().enumerate() {
            // Majority below the default cutoff, or no majority at all.
            let (label, probability) = match i % 3 {
                0 => (GenderLabel::Woman, 0.505),
                1 => (GenderLabel::Man, 0.5),
                _ => (GenderLabel::Unknown, 0.0),
            };
            records.push(GenderRecord {
                name: n.clone(),
                label,
                probability,
                count: rng.random_range(50..5000),
                source: RecordSource::RemoteProvider,
            });
        }
        let cache = NameCache::from_records(records);

        let mut rows: Vec<(String, GenderLabel, u64)> = Vec::new();
        for (names, major, minor) in [
            (&baby_women, GenderLabel::Woman, GenderLabel::Man),
            (&baby_men, GenderLabel::Man, GenderLabel::Woman),
        ] {
            for n in names {
                let total: u64 = rng.random_range(200..20_000);
                let share = rng.random_range(0.85..0.97f64);
                let k = (total as f64 * share).round() as u64;
                rows.push((n.clone(), major, k));
                rows.push((n.clone(), minor, total - k));
            }
        }
        let baby_names = BabyNames::from_rows(rows.iter().map(|(n, g, c)| (n.as_str(), *g, *c)));
        Self {
            women,
            men,
            baby_women,
            baby_men,
            ambiguous,
            cache,
            baby_names,
        }
    }

    fn pick_gendered(&self, gender: GenderLabel, rng: &mut ChaCha8Rng) -> String {
        let (cache, baby) = match gender {
            GenderLabel::Woman => (&self.women, &self.baby_women),
            _ => (&self.men, &self.baby_men),
        };
        let list = if rng.random_bool(BABY_ONLY_SHARE) { baby } else { cache };
        list[rng.random_range(0..list.len())].clone()
    }

    #[cfg(test)]
    pub fn all_names(&self) -> BTreeSet<&str> {
        [&self.women, &self.men, &self.baby_women, &self.baby_men, &self.ambiguous]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

/// Raw registration spelling of a canonical name: random casing and stray whitespace.
pub(crate) fn mangle(name: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..6) {
        0 => name.to_string(),
        1 => name.to_lowercase(),
        2 => name.to_uppercase(),
        3 => format!("  {name} "),
        4 => {
            let cut = rng.random_range(1..name.len());
            format!("{} {}", &name[..cut], &name[cut..])
        }
        _ => name
            .chars()
            .enumerate()
            .map(|(i, c)| if i % 2 == 0 { c.to_ascii_lowercase() } else { c.to_ascii_uppercase() })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Card {
    pub card_id: String,
    pub category: CardCategory,
    pub gender: GenderLabel,
    pub registered: bool,
    pub name: Option<String>,
    pub raw_name: Option<String>,
    pub expected_label: GenderLabel,
    pub product: FareProduct,
}

#[derive(Debug, Clone)]
pub(crate) struct Cards {
    pub all: Vec<Card>,
    pub regular_women: Vec<usize>,
    pub regular_men: Vec<usize>,
    pub occasional: Vec<usize>,
    pub anonymous: Vec<usize>,
    pub rail_only: Vec<usize>,
    /// `(accompanied, accompanying, plan)` per planted pair.
    pub pairs: Vec<(usize, usize, PairPlan)>,
}

impl Cards {
    pub fn registrations(&self) -> Vec<CardRegistration> {
        self.all
            .iter()
            .map(|c| CardRegistration {
                card_id: c.card_id.clone(),
                first_name_raw: c.raw_name.clone(),
                registered: c.registered,
            })
            .collect()
    }
}

fn background_product(rng: &mut ChaCha8Rng) -> FareProduct {
    match rng.random_range(0..10) {
        0..7 => FareProduct::Full,
        7..9 => FareProduct::WeeklyPass,
        _ => FareProduct::Other,
    }
}

fn random_gender(rng: &mut ChaCha8Rng) -> GenderLabel {
    if rng.random_bool(0.5) {
        GenderLabel::Woman
    } else {
        GenderLabel::Man
    }
}

pub(crate) fn assign_cards(config: &SynthConfig, pool: &NamePool, rng: &mut ChaCha8Rng) -> Cards {
    let regular = config.regular_cards();
    let women = config.regular_women();
    let plans = plan_pairs(config);
    let rest = config.n_cards - regular - 2 * plans.len();
    let occasional = rest * 35 / 100;
    let anonymous = rest * 45 / 100;
    let rail_only = rest - occasional - anonymous;

    let mut slots: Vec<CardCategory> = Vec::with_capacity(config.n_cards);
    slots.extend(std::iter::repeat_n(CardCategory::Regular, regular));
    slots.extend(std::iter::repeat_n(CardCategory::Occasional, occasional));
    slots.extend(std::iter::repeat_n(CardCategory::Anonymous, anonymous));
    slots.extend(std::iter::repeat_n(CardCategory::RailOnly, rail_only));
    slots.extend(std::iter::repeat_n(CardCategory::Accompanied, plans.len()));
    slots.extend(std::iter::repeat_n(CardCategory::Accompanying, plans.len()));
    slots.shuffle(rng);

    let mut cards = Cards {
        all: Vec::with_capacity(slots.len()),
        regular_women: Vec::new(),
        regular_men: Vec::new(),
        occasional: Vec::new(),
        anonymous: Vec::new(),
        rail_only: Vec::new(),
        pairs: Vec::new(),
    };
    let mut accompanied = Vec::new();
    let mut accompanying = Vec::new();
    let mut regular_seen = 0;
    for (i, category) in slots.into_iter().enumerate() {
        let card_id = format!("C{:05}", i + 1);
        let gendered = |gender: GenderLabel, rng: &mut ChaCha8Rng| {
            let name = pool.pick_gendered(gender, rng);
            (gender, true, Some(name), gender)
        };
        let (gender, registered, name, expected) = match category {
            CardCategory::Regular => {
                let g = if regular_seen < women {
                    GenderLabel::Woman
                } else {
                    GenderLabel::Man
                };
                regular_seen += 1;
                gendered(g, rng)
            }
            CardCategory::Occasional | CardCategory::RailOnly => {
                let g = random_gender(rng);
                gendered(g, rng)
            }
            CardCategory::Anonymous => {
                let g = random_gender(rng);
                if rng.random_bool(0.5) {
                    (g, false, None, GenderLabel::Unknown)
                } else {
                    let n = pool.ambiguous[rng.random_range(0..pool.ambiguous.len())].clone();
                    (g, true, Some(n), GenderLabel::Unknown)
                }
            }
            // Filled in from the pair plans below.
            CardCategory::Accompanied | CardCategory::Accompanying => {
                (GenderLabel::Unknown, false, None, GenderLabel::Unknown)
            }
        };
        let raw_name = name.as_deref().map(|n| mangle(n, rng));
        let idx = cards.all.len();
        match (category, gender) {
            (CardCategory::Regular, GenderLabel::Woman) => cards.regular_women.push(idx),
            (CardCategory::Regular, _) => cards.regular_men.push(idx),
            (CardCategory::Occasional, _) => cards.occasional.push(idx),
            (CardCategory::Anonymous, _) => cards.anonymous.push(idx),
            (CardCategory::RailOnly, _) => cards.rail_only.push(idx),
            (CardCategory::Accompanied, _) => accompanied.push(idx),
            (CardCategory::Accompanying, _) => accompanying.push(idx),
        }
        cards.all.push(Card {
            card_id,
            category,
            gender,
            registered,
            name,
            raw_name,
            expected_label: expected,
            product: background_product(rng),
        });
    }

    for ((a, b), plan) in accompanied.into_iter().zip(accompanying).zip(plans) {
        let target = &mut cards.all[a];
        target.gender = random_gender(rng);
        target.product = plan.class_product();
        let helper = &mut cards.all[b];
        helper.product = plan.accompanying_product;
        helper.registered = plan.accompanying_registered;
        helper.gender = plan.accompanying_gender;
        if plan.accompanying_registered {
            let name = pool.pick_gendered(plan.accompanying_gender, rng);
            helper.raw_name = Some(mangle(&name, rng));
            helper.name = Some(name);
            helper.expected_label = plan.accompanying_gender;
        }
        cards.pairs.push((a, b, plan));
    }
    cards
}
