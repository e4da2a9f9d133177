use std::collections::BTreeMap;

use super::{IsolationWindow, Result, SpectraError, Spectrum, SpectrumRun};

/// Time-ordered MS2 spectra sharing one DIA isolation window.
#[derive(Debug, Clone)]
pub struct WindowBucket {
    pub window: IsolationWindow,
    pub spectra: Vec<Spectrum>,
}

/// Immutable view of a run: MS1 spectra and one bucket per distinct
/// isolation window, each sorted by retention time.
#[derive(Debug, Clone)]
pub struct RunIndex {
    pub run_id: String,
    ms1: Vec<Spectrum>,
    // sorted by (lower, upper)
    buckets: Vec<WindowBucket>,
}

fn sort_by_rt(spectra: &mut [Spectrum]) {
    // stable, so equal retention times keep file order
    spectra.sort_by(|a, b| a.rt_minutes.total_cmp(&b.rt_minutes));
}

fn rt_slice(spectra: &[Spectrum], rt_lo: f64, rt_hi: f64) -> &[Spectrum] {
    let start = spectra.partition_point(|s| s.rt_minutes < rt_lo);
    let end = spectra.partition_point(|s| s.rt_minutes <= rt_hi);
    if start >= end {
        &[]
    } else {
        &spectra[start..end]
    }
}

impl RunIndex {
    pub fn new(run: SpectrumRun) -> Result<Self> {
        let mut ms1 = Vec::new();
        let mut by_key: BTreeMap<(i64, i64), WindowBucket> = BTreeMap::new();
        for (index, spectrum) in run.spectra.into_iter().enumerate() {
            match spectrum.ms_level {
                1 => ms1.push(spectrum),
                2 => {
                    let window = spectrum
                        .isolation_window
                        .ok_or(SpectraError::MissingIsolationWindow { index })?;
                    by_key
                        .entry(window.key())
                        .or_insert_with(|| WindowBucket {
                            window,
                            spectra: Vec::new(),
                        })
                        .spectra
                        .push(spectrum);
                }
                level => {
                    return Err(SpectraError::Parse {
                        index,
                        reason: format!("unsupported ms level {level}"),
                    })
                }
            }
        }
        sort_by_rt(&mut ms1);
        let mut buckets: Vec<WindowBucket> = by_key.into_values().collect();
        for b in &mut buckets {
            sort_by_rt(&mut b.spectra);
        }
        Ok(Self {
            run_id: run.run_id,
            ms1,
            buckets,
        })
    }

    pub fn ms1(&self) -> &[Spectrum] {
        &self.ms1
    }

    pub fn windows(&self) -> &[WindowBucket] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.ms1.len() + self.buckets.iter().map(|b| b.spectra.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First and last retention time over all spectra.
    pub fn rt_span(&self) -> Option<(f64, f64)> {
        let firsts = self
            .ms1
            .first()
            .into_iter()
            .chain(self.buckets.iter().filter_map(|b| b.spectra.first()));
        let lasts = self
            .ms1
            .last()
            .into_iter()
            .chain(self.buckets.iter().filter_map(|b| b.spectra.last()));
        let lo = firsts.map(|s| s.rt_minutes).min_by(f64::total_cmp)?;
        let hi = lasts.map(|s| s.rt_minutes).max_by(f64::total_cmp)?;
        Some((lo, hi))
    }

    /// The bucket whose half-open window `[lower, upper)` contains `mz`.
    /// When two windows overlap at `mz`, the one with the lower bound wins.
    pub fn window_for_precursor(&self, mz: f64) -> Option<&WindowBucket> {
        self.buckets.iter().find(|b| b.window.contains_mz(mz))
    }

    /// MS1 spectra with `rt_lo <= rt <= rt_hi`, in time order.
    pub fn ms1_in_range(&self, rt_lo: f64, rt_hi: f64) -> &[Spectrum] {
        rt_slice(&self.ms1, rt_lo, rt_hi)
    }

    /// Spectra of the given level in the closed interval `[rt_lo, rt_hi]`.
    ///
    /// For MS2, only buckets whose isolation window contains (or equals) the
    /// query window contribute; an unknown window yields an empty result.
    /// Results from several containing buckets are merged by retention time.
    pub fn spectra_in_range(
        &self,
        level: u8,
        window: Option<&IsolationWindow>,
        rt_lo: f64,
        rt_hi: f64,
    ) -> Vec<&Spectrum> {
        match (level, window) {
            (1, _) => self.ms1_in_range(rt_lo, rt_hi).iter().collect(),
            (2, Some(w)) => {
                let mut out: Vec<&Spectrum> = self
                    .buckets
                    .iter()
                    .filter(|b| b.window.contains_window(w))
                    .flat_map(|b| rt_slice(&b.spectra, rt_lo, rt_hi))
                    .collect();
                out.sort_by(|a, b| a.rt_minutes.total_cmp(&b.rt_minutes));
                out
            }
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Peak;

    fn ms1(rt: f64) -> Spectrum {
        Spectrum {
            ms_level: 1,
            rt_minutes: rt,
            isolation_window: None,
            peaks: vec![Peak {
                mz: 400.0,
                intensity: 1.0,
            }],
        }
    }

    fn ms2(rt: f64, lo: f64, hi: f64) -> Spectrum {
        Spectrum {
            ms_level: 2,
            rt_minutes: rt,
            isolation_window: Some(IsolationWindow::new(lo, hi)),
            peaks: vec![],
        }
    }

    #[test]
    fn two_windows_two_buckets() {
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![
                ms1(1.0),
                ms2(1.01, 500.0, 502.0),
                ms2(1.02, 502.0, 504.0),
                ms1(2.0),
                ms2(2.01, 500.0, 502.0),
                ms2(2.02, 502.0, 504.0),
            ],
        };
        let index = RunIndex::new(run).unwrap();
        assert_eq!(index.windows().len(), 2);
        assert_eq!(index.len(), 6);
    }

    #[test]
    fn ms1_only_run() {
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![ms1(1.0), ms1(2.0)],
        };
        let index = RunIndex::new(run).unwrap();
        assert!(index.windows().is_empty());
    }

    #[test]
    fn closed_interval_queries() {
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![ms1(9.9), ms1(10.2), ms1(10.6)],
        };
        let index = RunIndex::new(run).unwrap();
        let hits = index.spectra_in_range(1, None, 10.0, 10.5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].rt_minutes, 10.2);
        let exact = index.spectra_in_range(1, None, 10.6, 10.6);
        assert_eq!(exact.len(), 1);
    }

    #[test]
    fn boundary_precursor_takes_lower_window() {
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![ms2(1.0, 500.0, 502.0), ms2(1.0, 502.0, 504.0)],
        };
        let index = RunIndex::new(run).unwrap();
        assert_eq!(
            index.window_for_precursor(502.0).unwrap().window.lower,
            502.0
        );
        // overlapping windows: lower bound wins
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![ms2(1.0, 500.0, 503.0), ms2(1.0, 502.0, 504.0)],
        };
        let index = RunIndex::new(run).unwrap();
        assert_eq!(
            index.window_for_precursor(502.5).unwrap().window.lower,
            500.0
        );
        assert!(index.window_for_precursor(499.0).is_none());
    }

    #[test]
    fn unknown_window_is_empty() {
        let run = SpectrumRun {
            run_id: "r".into(),
            spectra: vec![ms2(1.0, 500.0, 502.0)],
        };
        let index = RunIndex::new(run).unwrap();
        let w = IsolationWindow::new(600.0, 602.0);
        assert!(index.spectra_in_range(2, Some(&w), 0.0, 5.0).is_empty());
        assert!(index.spectra_in_range(2, None, 0.0, 5.0).is_empty());
    }
}
