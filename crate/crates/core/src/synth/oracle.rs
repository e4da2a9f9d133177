//! Slow, obviously-correct versions of the extraction and q-value code, used
//! as references in tests.

use crate::fdr::{QValueRow, QValueTable, ScoredPsm};
use crate::library::Origin;
use crate::spectra::Spectrum;
use crate::xic::PeakMatch;

/// Linear scan for the peak closest to `mz` within `tolerance_ppm`.
pub fn oracle_extract(spectrum: &Spectrum, mz: f64, tolerance_ppm: f64) -> PeakMatch {
    let mut best: Option<(f64, f64)> = None;
    for p in &spectrum.peaks {
        let d = (p.mz - mz).abs();
        let better = match best {
            None => true,
            Some((bmz, _)) => {
                let bd = (bmz - mz).abs();
                d < bd || (d == bd && p.mz < bmz)
            }
        };
        if better {
            best = Some((p.mz, p.intensity));
        }
    }
    match best {
        Some((pmz, intensity)) => {
            let err = (pmz - mz) / mz * 1e6;
            if err.abs() <= tolerance_ppm {
                PeakMatch {
                    intensity,
                    ppm_error: err,
                }
            } else {
                PeakMatch::miss(tolerance_ppm)
            }
        }
        None => PeakMatch::miss(tolerance_ppm),
    }
}

/// q-values by enumerating every distinct score threshold and counting
/// accepted targets and decoys from scratch.
pub fn oracle_qvalues(psms: &[ScoredPsm]) -> QValueTable {
    let mut thresholds: Vec<f64> = psms.iter().map(|p| p.score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let fdr_at = |t: f64| {
        let d = psms
            .iter()
            .filter(|p| p.score >= t && p.origin == Origin::Decoy)
            .count();
        let n = psms.iter().filter(|p| p.score >= t).count();
        d as f64 / n as f64
    };
    let fdrs: Vec<f64> = thresholds.iter().map(|&t| fdr_at(t)).collect();

    // rank order written out independently of the production comparator
    let mut order: Vec<usize> = (0..psms.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&psms[a], &psms[b]);
        let ka = (
            std::cmp::Reverse(ordered(pa.score)),
            pa.origin != Origin::Decoy,
            &pa.modified_sequence,
            pa.charge,
            a,
        );
        let kb = (
            std::cmp::Reverse(ordered(pb.score)),
            pb.origin != Origin::Decoy,
            &pb.modified_sequence,
            pb.charge,
            b,
        );
        ka.cmp(&kb)
    });

    let rows = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let p = &psms[i];
            let above = &order[..=rank];
            let n_decoy = above
                .iter()
                .filter(|&&j| psms[j].origin == Origin::Decoy)
                .count();
            let n_target = above.len() - n_decoy;
            let q_value = thresholds
                .iter()
                .zip(&fdrs)
                .filter(|(t, _)| **t <= p.score)
                .map(|(_, f)| *f)
                .fold(f64::INFINITY, f64::min);
            QValueRow {
                psm: i,
                score: p.score,
                origin: p.origin,
                n_target,
                n_decoy,
                raw_fdr: n_decoy as f64 / (rank + 1) as f64,
                q_value,
            }
        })
        .collect();
    QValueTable { rows }
}

/// Total order key for finite scores.
fn ordered(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    if bits < 0 {
        bits ^ i64::MAX
    } else {
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdr::compute_qvalues;
    use crate::spectra::Peak;

    #[test]
    fn extract_prefers_lower_on_tie() {
        let s = Spectrum {
            ms_level: 1,
            rt_minutes: 0.0,
            isolation_window: None,
            peaks: vec![
                Peak {
                    mz: 499.99,
                    intensity: 1.0,
                },
                Peak {
                    mz: 500.01,
                    intensity: 2.0,
                },
            ],
        };
        assert_eq!(oracle_extract(&s, 500.0, 30.0).intensity, 1.0);
    }

    #[test]
    fn agrees_with_production_on_ties() {
        let mk = |s: &str, o: Origin, score: f64| ScoredPsm {
            modified_sequence: s.into(),
            charge: 2,
            origin: o,
            score,
            quantity: None,
            protein_ids: vec![],
            species: String::new(),
        };
        let list = vec![
            mk("A", Origin::Target, 0.9),
            mk("B", Origin::Decoy, 0.5),
            mk("C", Origin::Target, 0.5),
            mk("D", Origin::Target, 0.3),
            mk("E", Origin::Decoy, 0.9),
        ];
        assert_eq!(oracle_qvalues(&list), compute_qvalues(&list));
    }
}
