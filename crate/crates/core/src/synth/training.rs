use serde::{Deserialize, Serialize};

use crate::library::{generate_decoys, Library, Origin, PrecursorEntry};
use crate::model::TrainingPair;
use crate::spectra::RunIndex;
use crate::xic::{build_peak_group, condition_peak_group, ExtractionConfig};

use super::{
    generate_entrapment_library, generate_library, plant_targets, synthesize_run, Result,
    SynthConfig, SynthError,
};

/// Extra library entries generated so that a few failed extractions do not
/// leave a class short.
const SPARE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetConfig {
    /// `n_peptides` is ignored; the library is sized from `n_pairs`.
    pub synth: SynthConfig,
    pub n_pairs: usize,
    pub positive_fraction: f64,
    /// Share of the negatives that are entrapment rather than decoy pairs.
    pub entrapment_share: f64,
    pub extraction: ExtractionConfig,
}

impl Default for TrainingSetConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            n_pairs: 2000,
            positive_fraction: 0.5,
            entrapment_share: 0.3,
            extraction: ExtractionConfig::default(),
        }
    }
}

/// Labelled pairs from one simulated run.
///
/// Positives are planted targets extracted at their library coordinates.
/// Decoy negatives are the pseudo-reversed targets extracted at the same m/z
/// and RT, so they see the target's MS1 signal but not its fragments.
/// Entrapment negatives are never planted and are extracted at their own
/// coordinates. Pairs come back positives first, then decoys, then
/// entrapments.
pub fn synthesize_training_set(config: &TrainingSetConfig) -> Result<Vec<TrainingPair>> {
    if !(0.0..=1.0).contains(&config.positive_fraction)
        || !(0.0..=1.0).contains(&config.entrapment_share)
    {
        return Err(SynthError::Config("fractions must lie in [0, 1]".into()));
    }
    config.extraction.validate().map_err(SynthError::Config)?;
    let n_pos = (config.n_pairs as f64 * config.positive_fraction).round() as usize;
    let n_neg = config.n_pairs - n_pos;
    let n_trap = (n_neg as f64 * config.entrapment_share).round() as usize;
    let n_decoy = n_neg - n_trap;

    let spare = |n: usize| (n as f64 * SPARE).ceil() as usize + 5;
    let synth = SynthConfig {
        n_peptides: spare(n_pos.max(n_decoy)),
        ..config.synth.clone()
    };
    let library = generate_library(&synth)?;
    let planted = plant_targets(&library, &synth);
    let run = synthesize_run(&library, &planted, &synth)?;
    let index = RunIndex::new(run.run)?;

    let decoys = generate_decoys(&library)?;
    let trap_species = "ARATH";
    let traps = generate_entrapment_library(&synth, &library, spare(n_trap), trap_species)?;

    let mut pairs = Vec::with_capacity(config.n_pairs);
    pairs.extend(extract(
        &library,
        Origin::Target,
        n_pos,
        &index,
        &config.extraction,
        "positive",
    )?);
    pairs.extend(extract(
        &decoys,
        Origin::Decoy,
        n_decoy,
        &index,
        &config.extraction,
        "decoy",
    )?);
    pairs.extend(extract(
        &traps,
        Origin::Entrapment,
        n_trap,
        &index,
        &config.extraction,
        "entrapment",
    )?);
    Ok(pairs)
}

fn extract(
    library: &Library,
    origin: Origin,
    wanted: usize,
    index: &RunIndex,
    config: &ExtractionConfig,
    what: &'static str,
) -> Result<Vec<TrainingPair>> {
    let entries: Vec<&PrecursorEntry> = library
        .entries
        .iter()
        .filter(|e| e.origin == origin)
        .collect();
    let mut out = Vec::with_capacity(wanted);
    for entry in entries {
        if out.len() == wanted {
            break;
        }
        let Ok(raw) = build_peak_group(entry, index, config) else {
            continue;
        };
        out.push(TrainingPair {
            entry: entry.clone(),
            peak_group: condition_peak_group(&raw, config),
            label: u8::from(origin == Origin::Target),
        });
    }
    if out.len() < wanted {
        return Err(SynthError::TooFewPairs {
            what,
            wanted,
            got: out.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_and_labels() {
        let config = TrainingSetConfig {
            n_pairs: 40,
            synth: SynthConfig {
                gradient_minutes: 8.0,
                ..SynthConfig::default()
            },
            ..TrainingSetConfig::default()
        };
        let pairs = synthesize_training_set(&config).unwrap();
        assert_eq!(pairs.len(), 40);
        let count = |o: Origin| pairs.iter().filter(|p| p.entry.origin == o).count();
        assert_eq!(count(Origin::Target), 20);
        assert_eq!(count(Origin::Entrapment), 6);
        assert_eq!(count(Origin::Decoy), 14);
        for p in &pairs {
            p.check().unwrap();
            assert!(p.peak_group.conditioned);
        }
    }
}
