//! Peak-group extraction and conditioning.
//!
//! A peak group bundles 4 precursor isotope traces (MS1) and up to 10
//! fragment traces (MS2) sampled around a precursor's calibrated retention
//! time. Extraction keeps the raw samples; conditioning resamples every trace
//! to [`XIC_POINTS`] points, smooths it and normalises the whole group by its
//! largest intensity.

mod condition;
mod extract;
mod features;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::library::PrecursorEntry;

pub use condition::{condition_peak_group, gaussian_kernel, interpolate_uniform, smooth};
pub use extract::{
    build_peak_group, extract_library, isotope_mzs, nearest_peak, Extraction, PeakMatch, SkipReason,
};
pub use features::{pcc_matrix, pcc_upper_triangle, trace_area, PccMatrix, PCC_UPPER_LEN};

pub const XIC_POINTS: usize = 12;
pub const PRECURSOR_TRACES: usize = 4;
pub const FRAGMENT_SLOTS: usize = 10;
pub const TRACE_SLOTS: usize = PRECURSOR_TRACES + FRAGMENT_SLOTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub ppm_tolerance: f64,
    /// Minutes either side of the calibrated RT.
    pub rt_half_width: f64,
    /// In samples of the 12-point grid; 0 disables smoothing.
    pub smoothing_sigma: f64,
    pub smoothing_taps: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            ppm_tolerance: 30.0,
            rt_half_width: 0.5,
            smoothing_sigma: 1.0,
            smoothing_taps: 5,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ppm_tolerance > 0.0) {
            return Err(format!(
                "ppm_tolerance must be positive, got {}",
                self.ppm_tolerance
            ));
        }
        if !(self.rt_half_width > 0.0) {
            return Err(format!(
                "rt_half_width must be positive, got {}",
                self.rt_half_width
            ));
        }
        if self.smoothing_taps % 2 == 0 {
            return Err(format!(
                "smoothing_taps must be odd, got {}",
                self.smoothing_taps
            ));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(format!(
                "smoothing_sigma must be non-negative, got {}",
                self.smoothing_sigma
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceRole {
    /// 0 is monoisotopic.
    PrecursorIsotope(u8),
    /// Index into the entry's fragment list.
    Fragment(u8),
}

impl std::fmt::Display for TraceRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TraceRole::PrecursorIsotope(i) => write!(f, "precursor_{i}"),
            TraceRole::Fragment(i) => write!(f, "fragment_{i}"),
        }
    }
}

/// Samples of one ion as extracted, before any conditioning.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTrace {
    pub rts: Vec<f64>,
    pub intensities: Vec<f64>,
    pub ppm_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XicTrace {
    pub role: TraceRole,
    /// Conditioned intensities (all zero until conditioned).
    pub intensities: [f64; XIC_POINTS],
    /// Conditioned signed ppm errors, clamped to the tolerance.
    pub ppm_errors: [f64; XIC_POINTS],
    pub raw: RawTrace,
}

impl XicTrace {
    pub fn new(role: TraceRole, raw: RawTrace) -> Self {
        Self {
            role,
            intensities: [0.0; XIC_POINTS],
            ppm_errors: [0.0; XIC_POINTS],
            raw,
        }
    }

    pub fn padding(slot: u8) -> Self {
        Self::new(TraceRole::Fragment(slot), RawTrace::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakGroup {
    pub entry: PrecursorEntry,
    pub precursor_traces: Vec<XicTrace>,
    /// Always [`FRAGMENT_SLOTS`] long; see `fragment_mask`.
    pub fragment_traces: Vec<XicTrace>,
    /// `true` for slots holding a real library fragment.
    pub fragment_mask: [bool; FRAGMENT_SLOTS],
    /// RT of the MS2 sample with the largest summed fragment intensity.
    pub apex_rt: f64,
    pub conditioned: bool,
    /// Set by conditioning when every real trace is zero.
    pub empty: bool,
}

impl PeakGroup {
    /// All 14 slots, precursor isotopes first.
    pub fn traces(&self) -> impl Iterator<Item = &XicTrace> {
        self.precursor_traces.iter().chain(&self.fragment_traces)
    }

    pub fn traces_mut(&mut self) -> impl Iterator<Item = &mut XicTrace> {
        self.precursor_traces
            .iter_mut()
            .chain(self.fragment_traces.iter_mut())
    }

    /// Mask over all 14 slots.
    pub fn slot_mask(&self) -> [bool; TRACE_SLOTS] {
        let mut mask = [true; TRACE_SLOTS];
        mask[PRECURSOR_TRACES..].copy_from_slice(&self.fragment_mask);
        mask
    }

    /// Raw trapezoid areas of the real fragment traces, in library order.
    pub fn fragment_areas(&self) -> Vec<f64> {
        self.fragment_traces
            .iter()
            .zip(self.fragment_mask)
            .filter(|(_, real)| *real)
            .map(|(t, _)| trace_area(&t.raw))
            .collect()
    }
}

#[derive(Serialize)]
struct DumpTrace<'a> {
    label: String,
    intensities: &'a [f64],
    ppm_errors: &'a [f64],
    raw_intensities: &'a [f64],
    raw_rts: &'a [f64],
}

#[derive(Serialize)]
struct DumpGroup<'a> {
    entry_key: String,
    traces: Vec<DumpTrace<'a>>,
}

/// Writes one peak group per line for XIC inspection.
pub fn write_peak_group_dump<'a, W: Write>(
    groups: impl IntoIterator<Item = &'a PeakGroup>,
    mut out: W,
) -> std::io::Result<()> {
    for g in groups {
        let traces = g
            .traces()
            .zip(g.slot_mask())
            .filter(|(_, real)| *real)
            .map(|(t, _)| DumpTrace {
                label: t.role.to_string(),
                intensities: &t.intensities,
                ppm_errors: &t.ppm_errors,
                raw_intensities: &t.raw.intensities,
                raw_rts: &t.raw.rts,
            })
            .collect();
        let record = DumpGroup {
            entry_key: format!(
                "{}/{}/{}",
                g.entry.modified_sequence, g.entry.charge, g.entry.origin
            ),
            traces,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
