//! Spectrum runs: readers for the supported formats and an immutable index
//! for retention-time range queries.
//!
//! Retention times are held in minutes throughout the crate. mzML scan start
//! times given in seconds are converted at load time.

mod index;
mod jsonl;
mod mzml;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use index::{RunIndex, WindowBucket};
pub use jsonl::write_jsonl;

#[derive(Debug, thiserror::Error)]
pub enum SpectraError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("spectrum {index}: {reason}")]
    Parse { index: usize, reason: String },
    #[error("spectrum {index}: unsupported encoding ({what})")]
    UnsupportedEncoding { index: usize, what: String },
    #[error("MS2 spectrum {index} has no isolation window")]
    MissingIsolationWindow { index: usize },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SpectraError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub mz: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationWindow {
    pub lower: f64,
    pub upper: f64,
}

impl IsolationWindow {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    /// Windows are compared after rounding both bounds to 1e-4 Th so that
    /// cycle-to-cycle float jitter maps onto the same DIA window.
    pub fn key(&self) -> (i64, i64) {
        (
            (self.lower * 1e4).round() as i64,
            (self.upper * 1e4).round() as i64,
        )
    }

    /// Half-open containment `[lower, upper)`.
    pub fn contains_mz(&self, mz: f64) -> bool {
        mz >= self.lower && mz < self.upper
    }

    pub fn contains_window(&self, other: &IsolationWindow) -> bool {
        let (lo, hi) = self.key();
        let (olo, ohi) = other.key();
        lo <= olo && ohi <= hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub ms_level: u8,
    pub rt_minutes: f64,
    pub isolation_window: Option<IsolationWindow>,
    pub peaks: Vec<Peak>,
}

impl Spectrum {
    /// Checks the per-spectrum invariants and sorts peaks by m/z.
    ///
    /// `index` is the position of the spectrum in its source file and is only
    /// used for error messages.
    pub fn normalize(mut self, index: usize) -> Result<Self> {
        let parse = |reason: String| SpectraError::Parse { index, reason };
        if self.ms_level != 1 && self.ms_level != 2 {
            return Err(parse(format!("unsupported ms level {}", self.ms_level)));
        }
        if !self.rt_minutes.is_finite() || self.rt_minutes < 0.0 {
            return Err(parse(format!("invalid retention time {}", self.rt_minutes)));
        }
        match (self.ms_level, self.isolation_window) {
            (2, None) => return Err(SpectraError::MissingIsolationWindow { index }),
            (2, Some(w)) if !(w.lower < w.upper) => {
                return Err(parse(format!(
                    "isolation window [{}, {}] is empty",
                    w.lower, w.upper
                )))
            }
            _ => {}
        }
        for p in &self.peaks {
            if !(p.mz.is_finite() && p.mz > 0.0) {
                return Err(parse(format!("peak m/z {} is not positive", p.mz)));
            }
            if !(p.intensity.is_finite() && p.intensity >= 0.0) {
                return Err(parse(format!("peak intensity {} is negative", p.intensity)));
            }
        }
        if !self.peaks.windows(2).all(|w| w[0].mz <= w[1].mz) {
            self.peaks.sort_by(|a, b| a.mz.total_cmp(&b.mz));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRun {
    pub run_id: String,
    pub spectra: Vec<Spectrum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunFormat {
    Mzml,
    Jsonl,
}

impl RunFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "mzml" => Some(RunFormat::Mzml),
            "jsonl" | "ndjson" => Some(RunFormat::Jsonl),
            _ => None,
        }
    }
}

pub fn load_run(path: &Path, format: RunFormat) -> Result<SpectrumRun> {
    let bytes = std::fs::read(path).map_err(|source| SpectraError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fallback_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    parse_run(&bytes, format, &fallback_id)
}

/// Parses a run held in memory. `fallback_id` is used when the source does
/// not name the run.
pub fn parse_run(bytes: &[u8], format: RunFormat, fallback_id: &str) -> Result<SpectrumRun> {
    match format {
        RunFormat::Jsonl => jsonl::parse(bytes, fallback_id),
        RunFormat::Mzml => mzml::parse(bytes, fallback_id),
    }
}

pub fn build_run_index(run: SpectrumRun) -> Result<RunIndex> {
    RunIndex::new(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_key_absorbs_jitter() {
        let a = IsolationWindow::new(500.0, 502.0);
        let b = IsolationWindow::new(500.000_01, 501.999_99);
        assert_eq!(a.key(), b.key());
        assert!(a.contains_window(&b));
    }

    #[test]
    fn half_open_containment() {
        let w = IsolationWindow::new(500.0, 502.0);
        assert!(w.contains_mz(500.0));
        assert!(!w.contains_mz(502.0));
    }

    #[test]
    fn normalize_sorts_and_validates() {
        let s = Spectrum {
            ms_level: 1,
            rt_minutes: 1.0,
            isolation_window: None,
            peaks: vec![
                Peak {
                    mz: 402.0,
                    intensity: 1.0,
                },
                Peak {
                    mz: 401.0,
                    intensity: 2.0,
                },
            ],
        };
        let s = s.normalize(0).unwrap();
        assert_eq!(s.peaks[0].mz, 401.0);

        let bad = Spectrum {
            ms_level: 2,
            rt_minutes: 1.0,
            isolation_window: None,
            peaks: vec![],
        };
        assert!(matches!(
            bad.normalize(7),
            Err(SpectraError::MissingIsolationWindow { index: 7 })
        ));
    }
}
