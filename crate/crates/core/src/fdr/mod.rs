//! Candidate scoring, target-decoy q-values, entrapment audit and protein
//! grouping.
//!
//! Entrapment entries are indistinguishable from targets while q-values are
//! computed; only [`entrapment_report`] looks at their true origin.

mod proteins;
mod report;
mod score;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::library::Origin;

pub use proteins::{infer_proteins, ProteinGroup};
pub use report::{
    entrapment_report, write_report, write_sweep, write_thresholds, EntrapmentReport, ReportRow,
    SweepRow, ThresholdRow, REPORT_COLUMNS, REPORT_THRESHOLDS,
};
pub use score::{score_candidates, ScoringError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPsm {
    pub modified_sequence: String,
    pub charge: u8,
    pub origin: Origin,
    /// In (0, 1).
    pub score: f64,
    /// Filled in by quantification.
    pub quantity: Option<f64>,
    pub protein_ids: Vec<String>,
    pub species: String,
}

impl ScoredPsm {
    pub fn key(&self) -> (&str, u8) {
        (&self.modified_sequence, self.charge)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValueRow {
    /// Index into the scored list the table was built from.
    pub psm: usize,
    pub score: f64,
    pub origin: Origin,
    /// Cumulative target-like count down to and including this row.
    pub n_target: usize,
    pub n_decoy: usize,
    pub raw_fdr: f64,
    pub q_value: f64,
}

/// Rows ordered by descending score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QValueTable {
    pub rows: Vec<QValueRow>,
}

impl QValueTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// q-value of each input PSM, indexed like the input list.
    pub fn q_by_psm(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.rows.len()];
        for r in &self.rows {
            out[r.psm] = r.q_value;
        }
        out
    }
}

/// Ranking order: score descending; among equal scores decoys first, then
/// by (sequence, charge) and input position so the order is total.
pub fn rank_order(psms: &[ScoredPsm]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..psms.len()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (&psms[a], &psms[b]);
        pb.score
            .total_cmp(&pa.score)
            .then_with(
                || match (pa.origin == Origin::Decoy, pb.origin == Origin::Decoy) {
                    (true, false) => Ordering::Less,
                    (false, true) => Ordering::Greater,
                    _ => Ordering::Equal,
                },
            )
            .then_with(|| pa.key().cmp(&pb.key()))
            .then(a.cmp(&b))
    });
    idx
}

/// Target-decoy q-values.
///
/// `raw_fdr` of a row is `decoys / (targets + decoys)` over all rows ranked at
/// or above it; entrapments count as targets. A score threshold cannot
/// separate tied rows, so every row takes the q-value of its score: the
/// smallest raw FDR over the ends of its own tie block and every block with
/// a lower score.
pub fn compute_qvalues(psms: &[ScoredPsm]) -> QValueTable {
    let order = rank_order(psms);
    let mut rows = Vec::with_capacity(order.len());
    let (mut t, mut d) = (0usize, 0usize);
    for &i in &order {
        let p = &psms[i];
        if p.origin == Origin::Decoy {
            d += 1;
        } else {
            t += 1;
        }
        rows.push(QValueRow {
            psm: i,
            score: p.score,
            origin: p.origin,
            n_target: t,
            n_decoy: d,
            raw_fdr: d as f64 / (t + d) as f64,
            q_value: 0.0,
        });
    }
    let mut running = f64::INFINITY;
    let mut end = rows.len();
    while end > 0 {
        let score = rows[end - 1].score;
        let mut start = end - 1;
        while start > 0 && rows[start - 1].score == score {
            start -= 1;
        }
        running = running.min(rows[end - 1].raw_fdr);
        for r in &mut rows[start..end] {
            r.q_value = running;
        }
        end = start;
    }
    QValueTable { rows }
}

/// Indices of target-like PSMs with q-value at most `threshold`, in rank
/// order. Decoys are never returned.
pub fn filter_at_fdr(table: &QValueTable, threshold: f64) -> Vec<usize> {
    table
        .rows
        .iter()
        .filter(|r| r.origin != Origin::Decoy && r.q_value <= threshold)
        .map(|r| r.psm)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn psm(seq: &str, origin: Origin, score: f64) -> ScoredPsm {
        ScoredPsm {
            modified_sequence: seq.into(),
            charge: 2,
            origin,
            score,
            quantity: None,
            protein_ids: vec![],
            species: "HUMAN".into(),
        }
    }

    #[test]
    fn worked_example() {
        use Origin::*;
        let list: Vec<_> = [Target, Target, Decoy, Target, Decoy]
            .iter()
            .enumerate()
            .map(|(i, &o)| psm(&format!("P{i}"), o, 0.9 - i as f64 * 0.1))
            .collect();
        let t = compute_qvalues(&list);
        let raw: Vec<f64> = t.rows.iter().map(|r| r.raw_fdr).collect();
        let q: Vec<f64> = t.rows.iter().map(|r| r.q_value).collect();
        assert_eq!(raw, vec![0.0, 0.0, 1.0 / 3.0, 0.25, 0.4]);
        assert_eq!(q, vec![0.0, 0.0, 0.25, 0.25, 0.4]);
    }

    #[test]
    fn decoy_on_top() {
        let list = vec![psm("A", Origin::Target, 0.2), psm("B", Origin::Decoy, 0.8)];
        let t = compute_qvalues(&list);
        assert_eq!(t.q_by_psm()[0], 0.5);
        assert!(filter_at_fdr(&t, 0.0).is_empty());
        assert_eq!(filter_at_fdr(&t, 1.0), vec![0]);
    }

    #[test]
    fn ties_rank_decoys_first_and_share_q() {
        let list = vec![
            psm("A", Origin::Target, 0.5),
            psm("B", Origin::Decoy, 0.5),
            psm("C", Origin::Entrapment, 0.9),
        ];
        let t = compute_qvalues(&list);
        let origins: Vec<Origin> = t.rows.iter().map(|r| r.origin).collect();
        assert_eq!(
            origins,
            vec![Origin::Entrapment, Origin::Decoy, Origin::Target]
        );
        assert_eq!(t.rows[1].q_value, t.rows[2].q_value);
        assert_eq!(t.rows[2].q_value, 1.0 / 3.0);
    }

    #[test]
    fn empty_and_no_decoys() {
        assert!(compute_qvalues(&[]).is_empty());
        let list = vec![psm("A", Origin::Target, 0.1), psm("B", Origin::Target, 0.7)];
        assert!(compute_qvalues(&list).rows.iter().all(|r| r.q_value == 0.0));
    }
}
