use rayon::prelude::*;

use crate::model::{score, ModelInput, ModelParameters};
use crate::xic::PeakGroup;

use super::ScoredPsm;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("cannot start {workers} scoring workers: {reason}")]
    Pool { workers: usize, reason: String },
}

fn score_one(pg: &PeakGroup, params: &ModelParameters) -> Option<ScoredPsm> {
    match ModelInput::new(pg, &params.config) {
        Ok(input) => Some(ScoredPsm {
            modified_sequence: pg.entry.modified_sequence.clone(),
            charge: pg.entry.charge,
            origin: pg.entry.origin,
            score: score(&input, params),
            quantity: None,
            protein_ids: pg.entry.protein_ids.clone(),
            species: pg.entry.species.clone(),
        }),
        Err(e) => {
            log::warn!(
                "not scoring {}/{}: {e}",
                pg.entry.modified_sequence,
                pg.entry.charge
            );
            None
        }
    }
}

/// Scores conditioned peak groups on `workers` threads. Output order follows
/// the input; groups the network cannot featurise are logged and left out.
pub fn score_candidates(
    params: &ModelParameters,
    groups: &[PeakGroup],
    workers: usize,
) -> Result<Vec<ScoredPsm>, ScoringError> {
    if workers <= 1 {
        return Ok(groups.iter().filter_map(|g| score_one(g, params)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ScoringError::Pool {
            workers,
            reason: e.to_string(),
        })?;
    Ok(pool.install(|| {
        groups
            .par_iter()
            .map(|g| score_one(g, params))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }))
}
