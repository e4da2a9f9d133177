//! Dual-encoder scoring network.
//!
//! A transformer encoder embeds the precursor (sequence + charge), a second
//! encoder embeds the 14 conditioned traces of a peak group, and a decoder
//! lets the precursor tokens attend to the traces. The decoder output is
//! summed with a projection of the Pearson matrix and squashed to a score in
//! (0, 1). Training combines a cosine alignment term between the two
//! encoder summaries with binary cross-entropy on the score.
//!
//! Gradients come from the small reverse-mode [`tape`]; [`gradient_check`]
//! compares them against central differences.

mod checkpoint;
mod gradcheck;
mod network;
mod params;
pub mod tape;
mod train;

use serde::{Deserialize, Serialize};

use crate::library::{LibraryError, Origin, PrecursorEntry};
use crate::xic::{pcc_matrix, pcc_upper_triangle, PeakGroup, TRACE_SLOTS, XIC_POINTS};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION,
};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use network::{
    alignment_loss, decode_score, encode_precursor, encode_spectrum, forward, score, total_loss,
    Forward, LossBreakdown,
};
pub use params::{ModelParameters, TensorSpec};
pub use train::{loss_and_gradient, lr_at, train, train_examples, EpochRecord, TrainingHistory};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence {sequence} needs {tokens} tokens, more than max_seq_len {max}")]
    SequenceTooLong {
        sequence: String,
        tokens: usize,
        max: usize,
    },
    #[error("charge {0} has no token (1 to 4 supported)")]
    Charge(u8),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("peak group for {0} has not been conditioned")]
    Unconditioned(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// 20 residues, carbamidomethyl-C, pad, summary and four charge tokens.
pub const VOCAB_SIZE: usize = 27;
pub const RESIDUE_ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
pub const TOKEN_CAM_CYS: usize = 20;
pub const TOKEN_PAD: usize = 21;
pub const TOKEN_SUMMARY: usize = 22;
const TOKEN_CHARGE_1: usize = 23;

/// 12 intensities followed by 12 scaled ppm errors.
pub const SPECTRUM_FEATURES: usize = 2 * XIC_POINTS;
/// Maps ppm errors at the default 30 ppm tolerance onto [-1, 1].
pub const PPM_SCALE: f64 = 1.0 / 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alignment: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alignment: 1.0,
            bce: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_width: usize,
    pub max_seq_len: usize,
    pub margin: f64,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ffn_width: 128,
            max_seq_len: 32,
            margin: 0.0,
            loss_weights: LossWeights::default(),
            batch_size: 64,
            epochs: 40,
            lr_max: 1e-4,
            lr_min: 1e-7,
            weight_decay: 1e-6,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.dim_model == 0 || self.n_heads == 0 || self.dim_model % self.n_heads != 0 {
            return fail(format!(
                "dim_model {} must be a positive multiple of n_heads {}",
                self.dim_model, self.n_heads
            ));
        }
        if self.ffn_width == 0 {
            return fail("ffn_width must be positive".into());
        }
        if self.max_seq_len < 3 {
            return fail(format!(
                "max_seq_len {} leaves no room for residues",
                self.max_seq_len
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return fail(format!(
                "need lr_max {} >= lr_min {} >= 0",
                self.lr_max, self.lr_min
            ));
        }
        if !(self.weight_decay >= 0.0) || !self.margin.is_finite() {
            return fail("weight_decay must be >= 0 and margin finite".into());
        }
        let w = self.loss_weights;
        if !(w.alignment >= 0.0 && w.bce >= 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// `[summary, charge, residues...]`
pub fn tokenize(entry: &PrecursorEntry, max_seq_len: usize) -> Result<Vec<usize>> {
    if !(1..=4).contains(&entry.charge) {
        return Err(ModelError::Charge(entry.charge));
    }
    let peptide = entry.peptide()?;
    let tokens = peptide.len() + 2;
    if tokens > max_seq_len {
        return Err(ModelError::SequenceTooLong {
            sequence: entry.modified_sequence.clone(),
            tokens,
            max: max_seq_len,
        });
    }
    let mut out = Vec::with_capacity(tokens);
    out.push(TOKEN_SUMMARY);
    out.push(TOKEN_CHARGE_1 + entry.charge as usize - 1);
    for r in peptide.residues() {
        let t = if r.carbamidomethyl {
            TOKEN_CAM_CYS
        } else {
            RESIDUE_ALPHABET
                .iter()
                .position(|&a| a == r.aa)
                .expect("parsed residues are in the alphabet")
        };
        out.push(t);
    }
    Ok(out)
}

/// Network-ready view of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tokens: Vec<usize>,
    /// `TRACE_SLOTS x SPECTRUM_FEATURES`, row-major; padded slots are zero.
    pub traces: Vec<f64>,
    pub slot_mask: [bool; TRACE_SLOTS],
    /// Strict upper triangle of the Pearson matrix.
    pub pcc: Vec<f64>,
}

impl ModelInput {
    pub fn new(pg: &PeakGroup, config: &ModelConfig) -> Result<Self> {
        if !pg.conditioned {
            return Err(ModelError::Unconditioned(
                pg.entry.modified_sequence.clone(),
            ));
        }
        let tokens = tokenize(&pg.entry, config.max_seq_len)?;
        let slot_mask = pg.slot_mask();
        let mut traces = vec![0.0; TRACE_SLOTS * SPECTRUM_FEATURES];
        for (i, (t, real)) in pg.traces().zip(slot_mask).enumerate() {
            if !real {
                continue;
            }
            let row = &mut traces[i * SPECTRUM_FEATURES..(i + 1) * SPECTRUM_FEATURES];
            row[..XIC_POINTS].copy_from_slice(&t.intensities);
            for (d, e) in row[XIC_POINTS..].iter_mut().zip(&t.ppm_errors) {
                *d = e * PPM_SCALE;
            }
        }
        let pcc = pcc_upper_triangle(&pcc_matrix(pg));
        Ok(Self {
            tokens,
            traces,
            slot_mask,
            pcc,
        })
    }
}

/// A candidate with its supervision label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub entry: PrecursorEntry,
    /// Conditioned.
    pub peak_group: PeakGroup,
    /// 1 for a target paired with its own signal, 0 for decoy and
    /// entrapment pairs.
    pub label: u8,
}

impl TrainingPair {
    pub fn check(&self) -> Result<()> {
        let expected = u8::from(self.entry.origin == Origin::Target);
        if self.label != expected {
            return Err(ModelError::Data(format!(
                "{} ({}) labelled {}",
                self.entry.modified_sequence, self.entry.origin, self.label
            )));
        }
        Ok(())
    }
}

/// Featurised training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: ModelInput,
    pub label: f64,
}

impl Example {
    pub fn from_pair(pair: &TrainingPair, config: &ModelConfig) -> Result<Self> {
        pair.check()?;
        let mut input = ModelInput::new(&pair.peak_group, config)?;
        // the group may have been built for a different entry
        input.tokens = tokenize(&pair.entry, config.max_seq_len)?;
        Ok(Self {
            input,
            label: pair.label as f64,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    /// Random well-formed input with `n_frag` real fragment slots.
    pub fn random_input(rng: &mut impl Rng, residues: usize, n_frag: usize) -> ModelInput {
        let mut tokens = vec![TOKEN_SUMMARY, TOKEN_CHARGE_1 + rng.gen_range(0..4)];
        tokens.extend((0..residues).map(|_| rng.gen_range(0..=TOKEN_CAM_CYS)));
        let mut slot_mask = [false; TRACE_SLOTS];
        slot_mask[..PRECURSOR_SLOTS + n_frag]
            .iter_mut()
            .for_each(|m| *m = true);
        let mut traces = vec![0.0; TRACE_SLOTS * SPECTRUM_FEATURES];
        for (i, real) in slot_mask.iter().enumerate() {
            if *real {
                for j in 0..SPECTRUM_FEATURES {
                    traces[i * SPECTRUM_FEATURES + j] = if j < XIC_POINTS {
                        rng.gen_range(0.0..1.0)
                    } else {
                        rng.gen_range(-1.0..1.0)
                    };
                }
            }
        }
        let pcc = (0..crate::xic::PCC_UPPER_LEN)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        ModelInput {
            tokens,
            traces,
            slot_mask,
            pcc,
        }
    }

    const PRECURSOR_SLOTS: usize = crate::xic::PRECURSOR_TRACES;

    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            dim_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_width: 12,
            seed: 11,
            ..ModelConfig::default()
        }
    }
}
