use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dia_rescore::synth::{SynthConfig, TrainingSetConfig};
use dia_rescore::{ExtractionConfig, ModelConfig, QuantConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub run: Vec<PathBuf>,
    pub library: Option<PathBuf>,
    pub entrapment_library: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// One sample group of a synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub replicates: usize,
    /// Abundance multiplier per species; missing species use 1.
    pub species_factors: BTreeMap<String, f64>,
}

impl Default for Condition {
    fn default() -> Self {
        Self {
            name: "A".into(),
            replicates: 1,
            species_factors: BTreeMap::new(),
        }
    }
}

impl Condition {
    /// File stems of the replicate runs, e.g. `A1`, `A2`.
    pub fn run_names(&self) -> Vec<String> {
        (1..=self.replicates).map(|r| format!("{}{r}", self.name)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub conditions: Vec<Condition>,
    pub entrapment_peptides: usize,
    pub entrapment_species: String,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            conditions: vec![Condition::default()],
            entrapment_peptides: 200,
            entrapment_species: "ARATH".into(),
        }
    }
}

/// The full effective configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fdr_threshold: f64,
    pub workers: usize,
    pub paths: Paths,
    pub extraction: ExtractionConfig,
    pub model: ModelConfig,
    pub quant: QuantConfig,
    pub synth: SynthConfig,
    pub experiment: Experiment,
    pub training: TrainingSetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            fdr_threshold: 0.01,
            workers: 1,
            paths: Paths::default(),
            extraction: ExtractionConfig::default(),
            model: ModelConfig::default(),
            quant: QuantConfig::default(),
            synth: SynthConfig::default(),
            experiment: Experiment::default(),
            training: TrainingSetConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Pushes the top-level seed into every seeded sub-config.
    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.model.seed = self.seed;
        self.training.synth.seed = self.seed;
        self.training.extraction = self.extraction.clone();
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fdr_threshold) {
            bail!("fdr threshold {} outside [0, 1]", self.fdr_threshold);
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        self.extraction.validate().map_err(anyhow::Error::msg)?;
        self.model.validate()?;
        self.quant.validate().map_err(anyhow::Error::msg)?;
        let mut names = std::collections::BTreeSet::new();
        for c in &self.experiment.conditions {
            if c.replicates == 0 || c.name.is_empty() {
                bail!("condition {:?} needs a name and at least one replicate", c.name);
            }
            if !names.insert(&c.name) {
                bail!("condition {} listed twice", c.name);
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.paths.out.as_deref().context("no output directory; pass --out")
    }

    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        match &self.paths.checkpoint {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join("model.ckpt")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = PipelineConfig::from_toml("seed = 7\n[model]\nepochs = 3\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.model.epochs, 3);
        assert_eq!(partial.model.dim_model, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sed = 7\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.fdr_threshold = 0.05;
        assert_ne!(a.hash(), b.hash());
    }
}
