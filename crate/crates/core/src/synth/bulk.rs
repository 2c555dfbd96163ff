//! Large stage files for streaming and throughput checks.

use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SynthError;
use crate::ingest::{FareProduct, Mode, Stage, StageWriter};

const CARDS: u32 = 1_000_000;
const STOPS: u32 = 2_000;
const ROUTES: u32 = 150;
const DAYS: u64 = 90;

/// Streams `rows` plausible bus stages to `path` without holding them in memory. Journeys
/// have one or two stages. Returns the number of rows written.
pub fn write_bulk_stages(path: impl AsRef<Path>, rows: u64, seed: u64) -> Result<u64, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = StageWriter::create(path)?;
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let mut written = 0;
    let mut journey = 0u64;
    while written < rows {
        journey += 1;
        let legs = if rows - written >= 2 && rng.random_bool(0.3) { 2 } else { 1 };
        let card_id = format!("C{:07}", rng.random_range(0..CARDS));
        let journey_id = format!("J{journey:010}");
        let date = start + Days::new(rng.random_range(0..DAYS));
        let mut t = rng.random_range(5 * 3600..22 * 3600);
        for k in 1..=legs {
            let route = rng.random_range(1..=ROUTES);
            let hops = rng.random_range(1..=8u32);
            let alighted = rng.random_bool(0.65);
            let stage = Stage {
                card_id: card_id.clone(),
                journey_id: journey_id.clone(),
                stage_index: k,
                service_date: date,
                board_stop: format!("S{:05}", rng.random_range(0..STOPS)),
                alight_stop: alighted.then(|| format!("S{:05}", rng.random_range(0..STOPS))),
                board_time: t,
                alight_time: alighted.then_some(t + hops * 75),
                mode: Mode::Bus,
                route_id: Some(format!("R{route:03}")),
                direction_id: Some(rng.random_range(0..2)),
                device_id: format!("BUS-R{route:03}-{:02}", rng.random_range(1..=20)),
                fare_product: FareProduct::Full,
                fare_paid: if k == 1 { 200 } else { 0 },
                distance_m: alighted.then_some(f64::from(hops) * 250.0),
            };
            out.write(&stage)?;
            t += hops * 75 + rng.random_range(120..=900);
        }
        written += u64::from(legs);
    }
    out.finish()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_stages, ErrorPolicy};

    #[test]
    fn rows_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bulk.csv");
        assert_eq!(write_bulk_stages(&path, 1001, 3).unwrap(), 1001);
        let rows: Vec<Stage> = load_stages(&path, ErrorPolicy::Fatal)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(rows.len(), 1001);
    }
}
