//! Planted-truth data generation and brute-force reference implementations.
//!
//! Runs are simulated cycle by cycle: one MS1 scan followed by one MS2 scan
//! per fixed-width isolation window. Every planted precursor elutes as a
//! Gaussian; its isotope envelope lands in MS1 and its library fragments in
//! the MS2 scans of its window.

mod oracle;
mod run;
mod training;

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::library::{
    select_top_fragments, FragmentIon, IonType, Library, LibraryError, Origin, Peptide,
    PrecursorEntry, Residue, TOP_FRAGMENTS,
};
use crate::spectra::SpectraError;

pub use oracle::{oracle_extract, oracle_qvalues};
pub use run::{
    dia_windows, plant_targets, scale_by_species, synthesize_run, write_truth, Planted,
    SynthesizedRun, TruthRecord, BASE_INTENSITY, ISOTOPE_DECAY,
};
pub use training::{synthesize_training_set, TrainingSetConfig};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("planted precursor {sequence} at m/z {mz} falls outside every DIA window")]
    OutsideWindows { sequence: String, mz: f64 },
    #[error("planted index {0} is not in the library")]
    UnknownEntry(usize),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("could not build {wanted} {what} pairs, only {got} extracted")]
    TooFewPairs {
        what: &'static str,
        wanted: usize,
        got: usize,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesShare {
    pub species: String,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_peptides: usize,
    pub species_mix: Vec<SpeciesShare>,
    pub gradient_minutes: f64,
    pub cycle_seconds: f64,
    /// Th.
    pub window_width: f64,
    pub mz_min: f64,
    pub mz_max: f64,
    /// Gaussian sigma of every elution profile, minutes.
    pub elution_sigma: f64,
    /// Uniform noise peaks added to every spectrum.
    pub noise_peaks: usize,
    /// Upper bound of noise intensities as a fraction of [`BASE_INTENSITY`].
    pub noise_level: f64,
    /// Ratio of the largest to the smallest planted abundance.
    pub dynamic_range: f64,
    /// Probability that a planted precursor gets an unlisted co-eluting
    /// peptide in its window.
    pub interference_rate: f64,
    /// Standard deviation of the m/z error of emitted peaks.
    pub ppm_jitter: f64,
    /// Standard deviation of the apex shift from the library RT, minutes.
    pub rt_jitter: f64,
    /// MS1 envelope height relative to a fragment of relative intensity 1.
    pub precursor_scale: f64,
    /// Label recorded in the ground truth.
    pub condition: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_peptides: 500,
            species_mix: vec![
                SpeciesShare {
                    species: "HUMAN".into(),
                    proportion: 0.5,
                },
                SpeciesShare {
                    species: "YEAST".into(),
                    proportion: 0.45,
                },
                SpeciesShare {
                    species: "ECOLI".into(),
                    proportion: 0.05,
                },
            ],
            gradient_minutes: 30.0,
            cycle_seconds: 2.0,
            window_width: 25.0,
            mz_min: 400.0,
            mz_max: 1000.0,
            elution_sigma: 0.08,
            noise_peaks: 20,
            noise_level: 0.05,
            dynamic_range: 100.0,
            interference_rate: 0.05,
            ppm_jitter: 2.0,
            rt_jitter: 0.02,
            precursor_scale: 1.0,
            condition: "A".into(),
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// No noise peaks, interference or jitter.
    pub fn noiseless(mut self) -> Self {
        self.noise_peaks = 0;
        self.interference_rate = 0.0;
        self.ppm_jitter = 0.0;
        self.rt_jitter = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SynthError::Config(m));
        for (name, v) in [
            ("gradient_minutes", self.gradient_minutes),
            ("cycle_seconds", self.cycle_seconds),
            ("window_width", self.window_width),
            ("elution_sigma", self.elution_sigma),
            ("dynamic_range", self.dynamic_range),
            ("precursor_scale", self.precursor_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("noise_level", self.noise_level),
            ("ppm_jitter", self.ppm_jitter),
            ("rt_jitter", self.rt_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.interference_rate) {
            return fail(format!(
                "interference_rate {} outside [0, 1]",
                self.interference_rate
            ));
        }
        if !(self.mz_min > 0.0 && self.mz_min < self.mz_max) {
            return fail(format!(
                "m/z range [{}, {}) is empty",
                self.mz_min, self.mz_max
            ));
        }
        if self.gradient_minutes <= 2.0 * EDGE_MINUTES {
            return fail(format!(
                "gradient of {} min is too short",
                self.gradient_minutes
            ));
        }
        if self.species_mix.is_empty() || self.species_mix.iter().any(|s| !(s.proportion > 0.0)) {
            return fail("species proportions must be positive".into());
        }
        let total: f64 = self.species_mix.iter().map(|s| s.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("species proportions sum to {total}, not 1"));
        }
        Ok(())
    }

    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Library RTs stay this far from either end of the gradient.
const EDGE_MINUTES: f64 = 1.5;
const INNER_RESIDUES: &[u8] = b"ACDEFGHILMNPQSTVWY";
const MIN_LEN: usize = 7;
const MAX_LEN: usize = 16;

fn random_peptide(rng: &mut impl Rng) -> Peptide {
    let len = rng.gen_range(MIN_LEN..=MAX_LEN);
    let mut residues: Vec<Residue> = (0..len - 1)
        .map(|_| {
            let aa = INNER_RESIDUES[rng.gen_range(0..INNER_RESIDUES.len())];
            Residue {
                aa,
                carbamidomethyl: aa == b'C',
            }
        })
        .collect();
    residues.push(Residue {
        aa: if rng.gen_bool(0.5) { b'K' } else { b'R' },
        carbamidomethyl: false,
    });
    Peptide::from_residues(residues)
}

/// Singly charged b and y ions with ordinals 2..len, y ions brighter,
/// trimmed to the library's top 10.
pub(crate) fn random_fragments(peptide: &Peptide, rng: &mut impl Rng) -> Result<Vec<FragmentIon>> {
    let mut frags = Vec::new();
    for ordinal in 2..peptide.len() {
        for ion_type in [IonType::B, IonType::Y] {
            let relative_intensity = match ion_type {
                IonType::Y => rng.gen_range(0.2..1.0),
                IonType::B => rng.gen_range(0.05..0.6),
            };
            frags.push(FragmentIon {
                ion_type,
                ordinal,
                charge: 1,
                mz: peptide.fragment_mz(ion_type, ordinal, 1)?,
                relative_intensity,
            });
        }
    }
    let max = frags
        .iter()
        .map(|f| f.relative_intensity)
        .fold(0.0, f64::max);
    for f in &mut frags {
        f.relative_intensity /= max;
    }
    Ok(frags)
}

/// A random tryptic-looking precursor whose m/z lies in the configured range.
pub(crate) fn random_entry(
    rng: &mut impl Rng,
    config: &SynthConfig,
    taken: &mut HashSet<String>,
) -> Result<(Peptide, u8)> {
    loop {
        let peptide = random_peptide(rng);
        let charge = if rng.gen_bool(0.7) { 2 } else { 3 };
        let mz = peptide.precursor_mz(charge);
        if mz < config.mz_min || mz >= config.mz_max {
            continue;
        }
        if taken.insert(peptide.stripped()) {
            return Ok((peptide, charge));
        }
    }
}

fn build_entry(
    peptide: &Peptide,
    charge: u8,
    rt: f64,
    origin: Origin,
    species: &str,
    protein: String,
    rng: &mut impl Rng,
) -> Result<PrecursorEntry> {
    let entry = PrecursorEntry {
        modified_sequence: peptide.modified_sequence(),
        stripped_sequence: peptide.stripped(),
        charge,
        precursor_mz: peptide.precursor_mz(charge),
        calibrated_rt: rt,
        fragments: random_fragments(peptide, rng)?,
        origin,
        protein_ids: vec![protein],
        species: species.to_string(),
    };
    Ok(select_top_fragments(entry, TOP_FRAGMENTS))
}

fn generate(
    config: &SynthConfig,
    n: usize,
    origin: Origin,
    stream: u64,
    taken: &mut HashSet<String>,
) -> Result<Library> {
    config.validate()?;
    let mut rng = config.rng(stream);
    let weights = WeightedIndex::new(config.species_mix.iter().map(|s| s.proportion))
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let mut protein_counter = vec![0usize; config.species_mix.len()];
    let mut left_in_protein = vec![0usize; config.species_mix.len()];
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let s = weights.sample(&mut rng);
        let species = &config.species_mix[s].species;
        if left_in_protein[s] == 0 {
            protein_counter[s] += 1;
            left_in_protein[s] = rng.gen_range(1..=4);
        }
        left_in_protein[s] -= 1;
        let protein = format!("{species}{:05}", protein_counter[s]);
        let (peptide, charge) = random_entry(&mut rng, config, taken)?;
        let rt = rng.gen_range(EDGE_MINUTES..config.gradient_minutes - EDGE_MINUTES);
        entries.push(build_entry(
            &peptide, charge, rt, origin, species, protein, &mut rng,
        )?);
    }
    let mut lib = Library::new(entries);
    lib.provenance.push(format!(
        "synthetic {origin} library: {n} precursors, seed {}",
        config.seed
    ));
    Ok(lib)
}

/// `config.n_peptides` target precursors. Species are drawn from
/// `species_mix`; consecutive peptides of a species share a protein in runs
/// of one to four.
pub fn generate_library(config: &SynthConfig) -> Result<Library> {
    generate(
        config,
        config.n_peptides,
        Origin::Target,
        1,
        &mut HashSet::new(),
    )
}

/// `n` entrapment precursors of a single foreign species, none sharing a
/// sequence with `library`.
pub fn generate_entrapment_library(
    config: &SynthConfig,
    library: &Library,
    n: usize,
    species: &str,
) -> Result<Library> {
    let mut taken: HashSet<String> = library
        .entries
        .iter()
        .map(|e| e.stripped_sequence.clone())
        .collect();
    let cfg = SynthConfig {
        species_mix: vec![SpeciesShare {
            species: species.to_string(),
            proportion: 1.0,
        }],
        ..config.clone()
    };
    generate(&cfg, n, Origin::Entrapment, 3, &mut taken)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_is_valid_and_seeded() {
        let config = SynthConfig {
            n_peptides: 60,
            ..SynthConfig::default()
        };
        let a = generate_library(&config).unwrap();
        let b = generate_library(&config).unwrap();
        assert_eq!(a, b);
        for e in &a.entries {
            e.validate().unwrap();
            assert!(e.fragments.len() == TOP_FRAGMENTS);
            assert!(e.precursor_mz >= 400.0 && e.precursor_mz < 1000.0);
        }
        let trap = generate_entrapment_library(&config, &a, 20, "ARATH").unwrap();
        assert!(trap
            .entries
            .iter()
            .all(|e| e.origin == Origin::Entrapment && e.species == "ARATH"));
    }

    #[test]
    fn rejects_bad_mix() {
        let mut config = SynthConfig::default();
        config.species_mix[0].proportion = 0.4;
        assert!(matches!(config.validate(), Err(SynthError::Config(_))));
    }
}
