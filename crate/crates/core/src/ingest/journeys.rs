use std::collections::BTreeMap;

use super::{DayType, IngestError, Journey, Stage};

/// Groups stages into journeys ordered by `journey_id`.
///
/// Stage indices must run 1..=n without gaps and every stage must share the card.
pub fn assemble_journeys(stages: impl IntoIterator<Item = Stage>) -> Result<Vec<Journey>, IngestError> {
    let mut groups: BTreeMap<String, Vec<Stage>> = BTreeMap::new();
    for s in stages {
        groups.entry(s.journey_id.clone()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(journey_id, mut stages)| {
            stages.sort_by_key(|s| s.stage_index);
            let invalid = |reason: String| IngestError::InvalidJourney {
                journey_id: journey_id.clone(),
                reason,
            };
            for (i, s) in stages.iter().enumerate() {
                if s.stage_index as usize != i + 1 {
                    return Err(invalid(format!(
                        "stage indices must be contiguous from 1, found {} at position {}",
                        s.stage_index,
                        i + 1
                    )));
                }
                if s.card_id != stages[0].card_id {
                    return Err(invalid(format!(
                        "stages belong to different cards ('{}' and '{}')",
                        stages[0].card_id, s.card_id
                    )));
                }
            }
            let first = &stages[0];
            Ok(Journey {
                card_id: first.card_id.clone(),
                service_date: first.service_date,
                day_type: DayType::of(first.service_date),
                journey_id,
                stages,
            })
        })
        .collect()
}
