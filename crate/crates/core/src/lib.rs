//! Peptide-centric re-scoring for data-independent acquisition (DIA) runs.
//!
//! The crate is organised along the processing chain:
//!
//! - [`spectra`]: mzML-subset and jsonl run readers plus a time-ordered [`spectra::RunIndex`]
//! - [`library`]: spectral library TSV, monoisotopic masses, pseudo-reversed decoys, entrapment merge
//! - [`xic`]: peak-group extraction, conditioning to 12 points, Pearson matrices, raw areas
//! - [`model`]: dual-encoder + decoder scorer with a small reverse-mode autodiff tape
//! - [`fdr`]: candidate scoring, monotone q-values, entrapment audit, protein grouping
//! - [`quant`]: Top-K precursor areas, protein rollup, CV bins and ratio tables
//! - [`synth`]: planted-truth run generator and brute-force reference implementations

pub mod fdr;
pub mod library;
pub mod model;
pub mod quant;
pub mod spectra;
pub mod synth;
pub mod xic;

pub use fdr::{QValueTable, ScoredPsm};
pub use library::{FragmentIon, IonType, Library, Origin, PrecursorEntry};
pub use model::{ModelConfig, ModelParameters};
pub use quant::QuantConfig;
pub use spectra::{RunIndex, Spectrum, SpectrumRun};
pub use xic::{ExtractionConfig, PeakGroup};

/// Version of this crate, recorded in pipeline manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
