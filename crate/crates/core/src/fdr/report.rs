use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::library::Origin;

use super::{filter_at_fdr, ProteinGroup, QValueTable, ScoredPsm};

pub const REPORT_THRESHOLDS: [f64; 3] = [0.01, 0.005, 0.001];

pub const REPORT_COLUMNS: [&str; 8] = [
    "Modified.Sequence",
    "Charge",
    "Origin",
    "Score",
    "QValue",
    "Precursor.Quantity",
    "Protein.Group",
    "Species",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    /// Target-like identifications at this q-value.
    pub identified: usize,
    pub entrapments: usize,
    /// `entrapments / identified`, 0 when nothing is identified.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub score_cutoff: f64,
    pub decoy_count: usize,
    pub entrapment_count: usize,
    pub target_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrapmentReport {
    pub thresholds: Vec<ThresholdRow>,
    /// One row per distinct score, loosening cutoff.
    pub sweep: Vec<SweepRow>,
}

/// Entrapment share among identifications at [`REPORT_THRESHOLDS`], and
/// decoy / entrapment / target counts above every score cutoff.
pub fn entrapment_report(psms: &[ScoredPsm], table: &QValueTable) -> EntrapmentReport {
    let thresholds = REPORT_THRESHOLDS
        .iter()
        .map(|&threshold| {
            let ids = filter_at_fdr(table, threshold);
            let entrapments = ids
                .iter()
                .filter(|&&i| psms[i].origin == Origin::Entrapment)
                .count();
            ThresholdRow {
                threshold,
                identified: ids.len(),
                entrapments,
                proportion: if ids.is_empty() {
                    0.0
                } else {
                    entrapments as f64 / ids.len() as f64
                },
            }
        })
        .collect();

    let mut sweep: Vec<SweepRow> = Vec::new();
    let (mut d, mut e, mut t) = (0, 0, 0);
    for (k, row) in table.rows.iter().enumerate() {
        match row.origin {
            Origin::Decoy => d += 1,
            Origin::Entrapment => e += 1,
            Origin::Target => t += 1,
        }
        let block_end = table
            .rows
            .get(k + 1)
            .map_or(true, |next| next.score != row.score);
        if block_end {
            sweep.push(SweepRow {
                score_cutoff: row.score,
                decoy_count: d,
                entrapment_count: e,
                target_count: t,
            });
        }
    }
    EntrapmentReport { thresholds, sweep }
}

fn tsv<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_thresholds<W: Write>(rows: &[ThresholdRow], out: W) -> csv::Result<()> {
    let mut w = tsv(out);
    w.write_record([
        "Threshold",
        "Identified",
        "Entrapments",
        "EntrapmentProportion",
    ])?;
    for r in rows {
        w.write_record([
            r.threshold.to_string(),
            r.identified.to_string(),
            r.entrapments.to_string(),
            r.proportion.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = tsv(out);
    w.write_record([
        "ScoreCutoff",
        "DecoyCount",
        "EntrapmentCount",
        "TargetCount",
    ])?;
    for r in rows {
        w.write_record([
            r.score_cutoff.to_string(),
            r.decoy_count.to_string(),
            r.entrapment_count.to_string(),
            r.target_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub modified_sequence: String,
    pub charge: u8,
    pub origin: Origin,
    pub score: f64,
    pub q_value: f64,
    pub quantity: Option<f64>,
    pub protein_group: String,
    pub species: String,
}

impl ReportRow {
    /// Identified PSMs at `threshold` in rank order, labelled with every
    /// protein group that contains them.
    pub fn from_identifications(
        psms: &[ScoredPsm],
        table: &QValueTable,
        threshold: f64,
        groups: &[ProteinGroup],
    ) -> Vec<ReportRow> {
        let mut owners: BTreeMap<(&str, u8), BTreeSet<&str>> = BTreeMap::new();
        for g in groups {
            for (seq, z) in &g.precursors {
                owners
                    .entry((seq.as_str(), *z))
                    .or_default()
                    .extend(g.accessions.iter().map(String::as_str));
            }
        }
        let q = table.q_by_psm();
        filter_at_fdr(table, threshold)
            .into_iter()
            .map(|i| {
                let p = &psms[i];
                let protein_group = owners
                    .get(&p.key())
                    .map(|s| s.iter().copied().collect::<Vec<_>>().join(";"))
                    .unwrap_or_else(|| p.protein_ids.join(";"));
                ReportRow {
                    modified_sequence: p.modified_sequence.clone(),
                    charge: p.charge,
                    origin: p.origin,
                    score: p.score,
                    q_value: q[i],
                    quantity: p.quantity,
                    protein_group,
                    species: p.species.clone(),
                }
            })
            .collect()
    }
}

/// Precursor report; a missing quantity is an empty cell.
pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> csv::Result<()> {
    let mut w = tsv(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.modified_sequence.clone(),
            r.charge.to_string(),
            r.origin.to_string(),
            r.score.to_string(),
            r.q_value.to_string(),
            r.quantity.map(|q| q.to_string()).unwrap_or_default(),
            r.protein_group.clone(),
            r.species.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::compute_qvalues;
    use super::*;

    fn psm(seq: &str, origin: Origin, score: f64) -> ScoredPsm {
        ScoredPsm {
            modified_sequence: seq.into(),
            charge: 2,
            origin,
            score,
            quantity: None,
            protein_ids: vec!["P\t1".into()],
            species: "HUMAN".into(),
        }
    }

    #[test]
    fn proportion_and_sweep() {
        let mut psms: Vec<ScoredPsm> = (0..8)
            .map(|i| psm(&format!("T{i}"), Origin::Target, 0.9))
            .collect();
        psms.push(psm("E0", Origin::Entrapment, 0.8));
        psms.push(psm("E1", Origin::Entrapment, 0.7));
        psms.push(psm("D0", Origin::Decoy, 0.1));
        let table = compute_qvalues(&psms);
        let rep = entrapment_report(&psms, &table);
        assert_eq!(rep.thresholds[0].identified, 10);
        assert_eq!(rep.thresholds[0].proportion, 0.2);
        assert_eq!(rep.sweep.len(), 4);
        assert_eq!(rep.sweep[0].target_count, 8);
        let last = rep.sweep.last().unwrap();
        assert_eq!(
            (last.decoy_count, last.entrapment_count, last.target_count),
            (1, 2, 8)
        );
    }

    #[test]
    fn empty_report_is_header_only_and_fields_are_quoted() {
        let mut buf = Vec::new();
        write_report(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            REPORT_COLUMNS.join("\t") + "\n"
        );

        let psms = vec![psm("PEPTIDEK", Origin::Target, 0.9)];
        let table = compute_qvalues(&psms);
        let rows = ReportRow::from_identifications(&psms, &table, 0.01, &[]);
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.ends_with("PEPTIDEK\t2\ttarget\t0.9\t0\t\t\"P\t1\"\tHUMAN\n"),
            "{text}"
        );
    }
}
