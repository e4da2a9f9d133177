use rayon::prelude::*;

use crate::library::{Library, PrecursorEntry, C13_C12};
use crate::spectra::{Peak, RunIndex, Spectrum};

use super::{
    condition_peak_group, ExtractionConfig, PeakGroup, RawTrace, TraceRole, XicTrace,
    FRAGMENT_SLOTS, PRECURSOR_TRACES,
};

/// Result of matching one theoretical m/z against a spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakMatch {
    pub intensity: f64,
    pub ppm_error: f64,
}

impl PeakMatch {
    pub fn miss(tolerance_ppm: f64) -> Self {
        Self {
            intensity: 0.0,
            ppm_error: tolerance_ppm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkipReason {
    #[error("no isolation window contains precursor m/z {0}")]
    NoWindow(f64),
    #[error("only {ms1} MS1 and {ms2} MS2 cycles in the RT window")]
    TooSparse { ms1: usize, ms2: usize },
}

#[inline]
fn ppm(observed: f64, theoretical: f64) -> f64 {
    (observed - theoretical) / theoretical * 1e6
}

/// Closest peak (in m/z) within `tolerance_ppm` of `theoretical`.
///
/// Ties in distance go to the lower m/z, and among peaks sharing an m/z the
/// first one wins. A miss is reported as zero intensity with an error of
/// `+tolerance_ppm`.
pub fn nearest_peak(peaks: &[Peak], theoretical: f64, tolerance_ppm: f64) -> PeakMatch {
    let idx = peaks.partition_point(|p| p.mz < theoretical);
    let mut best: Option<usize> = None;
    if idx > 0 {
        let mut lo = idx - 1;
        let mz = peaks[lo].mz;
        while lo > 0 && peaks[lo - 1].mz == mz {
            lo -= 1;
        }
        best = Some(lo);
    }
    if idx < peaks.len() {
        best = match best {
            Some(lo) if (theoretical - peaks[lo].mz) <= (peaks[idx].mz - theoretical) => Some(lo),
            _ => Some(idx),
        };
    }
    match best {
        Some(i) => {
            let err = ppm(peaks[i].mz, theoretical);
            if err.abs() <= tolerance_ppm {
                PeakMatch {
                    intensity: peaks[i].intensity,
                    ppm_error: err,
                }
            } else {
                PeakMatch::miss(tolerance_ppm)
            }
        }
        None => PeakMatch::miss(tolerance_ppm),
    }
}

/// Monoisotopic m/z followed by the next three isotopes.
pub fn isotope_mzs(mono_mz: f64, charge: u8) -> [f64; PRECURSOR_TRACES] {
    let step = C13_C12 / charge as f64;
    std::array::from_fn(|i| mono_mz + i as f64 * step)
}

fn trace_over<'a>(
    spectra: impl Iterator<Item = &'a Spectrum>,
    mz: f64,
    tolerance: f64,
) -> RawTrace {
    let mut raw = RawTrace::default();
    for s in spectra {
        let m = nearest_peak(&s.peaks, mz, tolerance);
        raw.rts.push(s.rt_minutes);
        raw.intensities.push(m.intensity);
        raw.ppm_errors.push(m.ppm_error);
    }
    raw
}

/// Minimum number of cycles in the RT window.
pub const MIN_CYCLES: usize = 3;

/// Extracts the raw (unconditioned) peak group of `entry` around its
/// calibrated RT.
pub fn build_peak_group(
    entry: &PrecursorEntry,
    index: &RunIndex,
    config: &ExtractionConfig,
) -> Result<PeakGroup, SkipReason> {
    let lo = entry.calibrated_rt - config.rt_half_width;
    let hi = entry.calibrated_rt + config.rt_half_width;
    let bucket = index
        .window_for_precursor(entry.precursor_mz)
        .ok_or(SkipReason::NoWindow(entry.precursor_mz))?;
    let ms1 = index.ms1_in_range(lo, hi);
    let start = bucket.spectra.partition_point(|s| s.rt_minutes < lo);
    let end = bucket.spectra.partition_point(|s| s.rt_minutes <= hi);
    let ms2 = &bucket.spectra[start..end.max(start)];
    if ms1.len() < MIN_CYCLES || ms2.len() < MIN_CYCLES {
        return Err(SkipReason::TooSparse {
            ms1: ms1.len(),
            ms2: ms2.len(),
        });
    }

    let tol = config.ppm_tolerance;
    let precursor_traces = isotope_mzs(entry.precursor_mz, entry.charge)
        .iter()
        .enumerate()
        .map(|(i, &mz)| {
            XicTrace::new(
                TraceRole::PrecursorIsotope(i as u8),
                trace_over(ms1.iter(), mz, tol),
            )
        })
        .collect();

    let mut fragment_mask = [false; FRAGMENT_SLOTS];
    let mut fragment_traces = Vec::with_capacity(FRAGMENT_SLOTS);
    for slot in 0..FRAGMENT_SLOTS {
        match entry.fragments.get(slot) {
            Some(f) => {
                fragment_mask[slot] = true;
                fragment_traces.push(XicTrace::new(
                    TraceRole::Fragment(slot as u8),
                    trace_over(ms2.iter(), f.mz, tol),
                ));
            }
            None => fragment_traces.push(XicTrace::padding(slot as u8)),
        }
    }

    let mut apex_rt = ms2[0].rt_minutes;
    let mut apex_sum = f64::NEG_INFINITY;
    for (k, s) in ms2.iter().enumerate() {
        let sum: f64 = fragment_traces
            .iter()
            .zip(fragment_mask)
            .filter(|(_, real)| *real)
            .map(|(t, _)| t.raw.intensities[k])
            .sum();
        if sum > apex_sum {
            apex_sum = sum;
            apex_rt = s.rt_minutes;
        }
    }

    Ok(PeakGroup {
        entry: entry.clone(),
        precursor_traces,
        fragment_traces,
        fragment_mask,
        apex_rt,
        conditioned: false,
        empty: false,
    })
}

/// Result of [`extract_library`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    /// Conditioned, in library order.
    pub groups: Vec<PeakGroup>,
    /// Library index and reason for every entry left out.
    pub skipped: Vec<(usize, SkipReason)>,
}

/// Extracts and conditions every entry of `library` on `workers` threads.
pub fn extract_library(
    library: &Library,
    index: &RunIndex,
    config: &ExtractionConfig,
    workers: usize,
) -> Extraction {
    let one = |(i, e): (usize, &PrecursorEntry)| {
        build_peak_group(e, index, config)
            .map(|pg| condition_peak_group(&pg, config))
            .map_err(|r| (i, r))
    };
    let results: Vec<_> =
        match (workers > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build()) {
            Some(Ok(pool)) => {
                pool.install(|| library.entries.par_iter().enumerate().map(one).collect())
            }
            Some(Err(e)) => {
                log::warn!("falling back to one extraction thread: {e}");
                library.entries.iter().enumerate().map(one).collect()
            }
            None => library.entries.iter().enumerate().map(one).collect(),
        };
    let mut out = Extraction::default();
    for r in results {
        match r {
            Ok(pg) => out.groups.push(pg),
            Err(skip) => out.skipped.push(skip),
        }
    }
    out
}
