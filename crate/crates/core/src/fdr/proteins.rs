use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::library::Origin;

use super::ScoredPsm;

type PrecursorKey = (String, u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinGroup {
    /// Sorted.
    pub accessions: Vec<String>,
    /// Supporting precursors, sorted.
    pub precursors: Vec<PrecursorKey>,
    pub species: String,
    /// At least one supporting precursor passed the q-value threshold.
    pub identified: bool,
}

impl ProteinGroup {
    pub fn label(&self) -> String {
        self.accessions.join(";")
    }
}

/// Groups proteins with identical supporting-precursor sets, then folds any
/// group whose precursors are a subset of another group's into the largest
/// such superset. Decoys are ignored; `q_values` is indexed like `psms`.
pub fn infer_proteins(psms: &[ScoredPsm], q_values: &[f64], threshold: f64) -> Vec<ProteinGroup> {
    let mut by_protein: BTreeMap<&str, BTreeSet<PrecursorKey>> = BTreeMap::new();
    let mut species: BTreeMap<&str, &str> = BTreeMap::new();
    let mut passing: BTreeSet<PrecursorKey> = BTreeSet::new();
    for (p, &q) in psms.iter().zip(q_values) {
        if p.origin == Origin::Decoy {
            continue;
        }
        let key = (p.modified_sequence.clone(), p.charge);
        if q <= threshold {
            passing.insert(key.clone());
        }
        for acc in &p.protein_ids {
            by_protein.entry(acc).or_default().insert(key.clone());
            species.entry(acc).or_insert(&p.species);
        }
    }

    let mut by_set: BTreeMap<BTreeSet<PrecursorKey>, Vec<&str>> = BTreeMap::new();
    for (acc, set) in by_protein {
        by_set.entry(set).or_default().push(acc);
    }
    let mut groups: Vec<(BTreeSet<PrecursorKey>, Vec<&str>)> = by_set.into_iter().collect();
    groups.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(&b.1)));

    let mut kept: Vec<(BTreeSet<PrecursorKey>, Vec<&str>)> = Vec::new();
    for (set, accs) in groups {
        match kept.iter_mut().find(|(k, _)| set.is_subset(k)) {
            Some((_, into)) => into.extend(accs),
            None => kept.push((set, accs)),
        }
    }

    let mut out: Vec<ProteinGroup> = kept
        .into_iter()
        .map(|(set, mut accs)| {
            accs.sort_unstable();
            ProteinGroup {
                species: species
                    .get(accs[0])
                    .copied()
                    .unwrap_or_default()
                    .to_string(),
                identified: set.iter().any(|k| passing.contains(k)),
                accessions: accs.into_iter().map(String::from).collect(),
                precursors: set.into_iter().collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.accessions.cmp(&b.accessions));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psm(seq: &str, proteins: &[&str]) -> ScoredPsm {
        ScoredPsm {
            modified_sequence: seq.into(),
            charge: 2,
            origin: Origin::Target,
            score: 0.9,
            quantity: None,
            protein_ids: proteins.iter().map(|s| s.to_string()).collect(),
            species: "HUMAN".into(),
        }
    }

    #[test]
    fn distinct_identical_and_subset() {
        let psms = vec![psm("AAAAAAK", &["P1"]), psm("CCCCCCK", &["P2"])];
        assert_eq!(infer_proteins(&psms, &[0.0, 0.0], 0.01).len(), 2);

        let psms = vec![psm("AAAAAAK", &["P1", "P2"]), psm("CCCCCCK", &["P1", "P2"])];
        let g = infer_proteins(&psms, &[0.0, 0.0], 0.01);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].label(), "P1;P2");

        // P3 is only supported by a peptide P1 also explains
        let psms = vec![psm("AAAAAAK", &["P1", "P3"]), psm("CCCCCCK", &["P1"])];
        let g = infer_proteins(&psms, &[0.0, 0.5], 0.01);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].accessions, vec!["P1", "P3"]);
        assert!(g[0].identified);
    }

    #[test]
    fn identification_needs_a_passing_precursor() {
        let psms = vec![psm("AAAAAAK", &["P1"]), psm("CCCCCCK", &["P2"])];
        let g = infer_proteins(&psms, &[0.001, 0.2], 0.01);
        assert!(g[0].identified);
        assert!(!g[1].identified);
    }
}
