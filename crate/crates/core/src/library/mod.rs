//! Spectral library entries, decoy generation and entrapment merging.

mod mass;
mod tsv;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use mass::{
    compute_fragment_mz, residue_mass, IonType, Peptide, Residue, C13_C12, CARBAMIDOMETHYL, PROTON,
    WATER,
};
pub use tsv::{load_library, read_library, write_library, REQUIRED_COLUMNS};

pub const MIN_PEPTIDE_LEN: usize = 7;
pub const MAX_PEPTIDE_LEN: usize = 30;
pub const TOP_FRAGMENTS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("failed to read library {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("library is missing required columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("unknown residue {residue:?} in {sequence:?}")]
    UnknownResidue { sequence: String, residue: char },
    #[error("unsupported modification {modification} in {sequence:?}")]
    UnsupportedModification {
        sequence: String,
        modification: String,
    },
    #[error("duplicate precursor {sequence}/{charge} ({origin}) with conflicting {field}")]
    Conflict {
        sequence: String,
        charge: u8,
        origin: Origin,
        field: &'static str,
    },
    #[error("entrapment entry {sequence} carries analyte species {species:?}")]
    AnalyteEntrapment { sequence: String, species: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Target,
    Decoy,
    Entrapment,
}

impl Origin {
    /// Entrapments cannot be told apart from targets at search time.
    pub fn is_target_like(self) -> bool {
        !matches!(self, Origin::Decoy)
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Target => "target",
            Origin::Decoy => "decoy",
            Origin::Entrapment => "entrapment",
        })
    }
}

impl std::str::FromStr for Origin {
    type Err = LibraryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "target" => Ok(Origin::Target),
            "decoy" => Ok(Origin::Decoy),
            "entrapment" => Ok(Origin::Entrapment),
            other => Err(LibraryError::Invalid(format!("unknown origin {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentIon {
    pub ion_type: IonType,
    pub ordinal: usize,
    pub charge: u8,
    pub mz: f64,
    pub relative_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecursorEntry {
    pub modified_sequence: String,
    pub stripped_sequence: String,
    pub charge: u8,
    pub precursor_mz: f64,
    /// Minutes.
    pub calibrated_rt: f64,
    /// Ordered by relative intensity, descending.
    pub fragments: Vec<FragmentIon>,
    pub origin: Origin,
    /// Sorted, deduplicated accessions.
    pub protein_ids: Vec<String>,
    pub species: String,
}

impl PrecursorEntry {
    pub fn key(&self) -> (&str, u8) {
        (&self.modified_sequence, self.charge)
    }

    pub fn peptide(&self) -> Result<Peptide, LibraryError> {
        Peptide::parse(&self.modified_sequence)
    }

    pub(crate) fn validate(&self) -> Result<(), LibraryError> {
        let peptide = self.peptide()?;
        let len = peptide.len();
        if !(MIN_PEPTIDE_LEN..=MAX_PEPTIDE_LEN).contains(&len) {
            return Err(LibraryError::Invalid(format!(
                "{} has length {len}, outside {MIN_PEPTIDE_LEN}..={MAX_PEPTIDE_LEN}",
                self.modified_sequence
            )));
        }
        if peptide.stripped() != self.stripped_sequence {
            return Err(LibraryError::Invalid(format!(
                "stripped sequence {} does not match {}",
                self.stripped_sequence, self.modified_sequence
            )));
        }
        if !(1..=4).contains(&self.charge) {
            return Err(LibraryError::Invalid(format!(
                "{} has precursor charge {}",
                self.modified_sequence, self.charge
            )));
        }
        if self.fragments.is_empty() {
            return Err(LibraryError::Invalid(format!(
                "{} has no fragments",
                self.modified_sequence
            )));
        }
        for f in &self.fragments {
            if f.ordinal == 0 || f.ordinal >= len || f.charge == 0 || !(f.mz > 0.0) {
                return Err(LibraryError::Invalid(format!(
                    "{} has invalid fragment {}{}^{} at {}",
                    self.modified_sequence, f.ion_type, f.ordinal, f.charge, f.mz
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Library {
    pub entries: Vec<PrecursorEntry>,
    pub provenance: Vec<String>,
}

impl Library {
    pub fn new(entries: Vec<PrecursorEntry>) -> Self {
        Self {
            entries,
            provenance: Vec::new(),
        }
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn fragment_order(a: &FragmentIon, b: &FragmentIon) -> std::cmp::Ordering {
    b.relative_intensity
        .total_cmp(&a.relative_intensity)
        .then(a.mz.total_cmp(&b.mz))
}

/// Keeps the `k` most intense fragments; ties at the cut go to the lower m/z.
pub fn select_top_fragments(mut entry: PrecursorEntry, k: usize) -> PrecursorEntry {
    entry.fragments.sort_by(fragment_order);
    entry.fragments.truncate(k);
    entry
}

/// Pseudo-reversal: reverse all residues except the C-terminal one.
pub fn pseudo_reverse(peptide: &Peptide) -> Peptide {
    let residues = peptide.residues();
    let n = residues.len();
    let mut out: Vec<Residue> = residues[..n - 1].iter().rev().copied().collect();
    out.push(residues[n - 1]);
    Peptide::from_residues(out)
}

fn make_decoy(target: &PrecursorEntry) -> Result<PrecursorEntry, LibraryError> {
    let decoy_peptide = pseudo_reverse(&target.peptide()?);
    let fragments = target
        .fragments
        .iter()
        .map(|f| {
            Ok(FragmentIon {
                mz: decoy_peptide.fragment_mz(f.ion_type, f.ordinal, f.charge)?,
                ..f.clone()
            })
        })
        .collect::<Result<Vec<_>, LibraryError>>()?;
    let mut decoy = PrecursorEntry {
        modified_sequence: decoy_peptide.modified_sequence(),
        stripped_sequence: decoy_peptide.stripped(),
        charge: target.charge,
        precursor_mz: target.precursor_mz,
        calibrated_rt: target.calibrated_rt,
        fragments,
        origin: Origin::Decoy,
        protein_ids: target
            .protein_ids
            .iter()
            .map(|p| format!("DECOY_{p}"))
            .collect(),
        species: target.species.clone(),
    };
    decoy.fragments.sort_by(fragment_order);
    Ok(decoy)
}

/// Appends one pseudo-reversed decoy per target (and entrapment) entry.
///
/// Decoys keep the charge, calibrated RT and precursor m/z of their source;
/// fragment m/z values are recomputed for the reversed sequence. Palindromic
/// sources are kept but noted in the provenance.
pub fn generate_decoys(library: &Library) -> Result<Library, LibraryError> {
    let mut out = library.clone();
    let mut palindromes = 0usize;
    for entry in library.entries.iter().filter(|e| e.origin.is_target_like()) {
        let decoy = make_decoy(entry)?;
        if decoy.modified_sequence == entry.modified_sequence {
            palindromes += 1;
        }
        out.entries.push(decoy);
    }
    out.provenance.push(format!(
        "decoys: pseudo-reverse (C-terminal residue kept), {} generated",
        library
            .entries
            .iter()
            .filter(|e| e.origin.is_target_like())
            .count()
    ));
    if palindromes > 0 {
        out.provenance.push(format!(
            "decoys: {palindromes} palindromic sequences map onto their target"
        ));
    }
    Ok(out)
}

/// Adds the entries of `entrapment` labelled as [`Origin::Entrapment`].
///
/// Entries whose `(sequence, charge)` already exists in `library` are dropped
/// in favour of the existing entry. An entrapment entry whose species is one
/// of the analyte species (the species of the library's targets) is an error.
pub fn merge_entrapment(library: &Library, entrapment: &Library) -> Result<Library, LibraryError> {
    let analyte: BTreeSet<&str> = library
        .entries
        .iter()
        .filter(|e| e.origin == Origin::Target)
        .map(|e| e.species.as_str())
        .collect();
    let existing: HashSet<(String, u8)> = library
        .entries
        .iter()
        .map(|e| (e.modified_sequence.clone(), e.charge))
        .collect();
    let mut out = library.clone();
    let mut collisions = 0usize;
    for entry in &entrapment.entries {
        if analyte.contains(entry.species.as_str()) {
            return Err(LibraryError::AnalyteEntrapment {
                sequence: entry.modified_sequence.clone(),
                species: entry.species.clone(),
            });
        }
        if existing.contains(&(entry.modified_sequence.clone(), entry.charge)) {
            log::info!(
                "entrapment {}/{} collides with a library entry; keeping the target",
                entry.modified_sequence,
                entry.charge
            );
            collisions += 1;
            continue;
        }
        out.entries.push(PrecursorEntry {
            origin: Origin::Entrapment,
            ..entry.clone()
        });
    }
    out.provenance.push(format!(
        "entrapment: {} merged, {collisions} dropped on collision",
        entrapment.entries.len() - collisions
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: &str, charge: u8, species: &str) -> PrecursorEntry {
        let p = Peptide::parse(seq).unwrap();
        let fragments = (1..p.len().min(4))
            .map(|i| FragmentIon {
                ion_type: IonType::Y,
                ordinal: i,
                charge: 1,
                mz: p.fragment_mz(IonType::Y, i, 1).unwrap(),
                relative_intensity: 1.0 / i as f64,
            })
            .collect();
        PrecursorEntry {
            modified_sequence: p.modified_sequence(),
            stripped_sequence: p.stripped(),
            charge,
            precursor_mz: p.precursor_mz(charge),
            calibrated_rt: 10.0,
            fragments,
            origin: Origin::Target,
            protein_ids: vec![format!("{species}_P1")],
            species: species.into(),
        }
    }

    #[test]
    fn pseudo_reverse_keeps_c_term() {
        let p = Peptide::parse("PEPTIDEK").unwrap();
        assert_eq!(pseudo_reverse(&p).stripped(), "EDITPEPK");
    }

    #[test]
    fn decoys_preserve_precursor_mass() {
        let lib = Library::new(vec![
            entry("PEPTIDEK", 2, "HUMAN"),
            entry("LESLIEKR", 3, "HUMAN"),
        ]);
        let with = generate_decoys(&lib).unwrap();
        assert_eq!(with.count(Origin::Decoy), with.count(Origin::Target));
        for (t, d) in lib.entries.iter().zip(&with.entries[2..]) {
            let tm = t.peptide().unwrap().precursor_mz(t.charge);
            let dm = d.peptide().unwrap().precursor_mz(d.charge);
            assert!((tm - dm).abs() < 1e-9);
            assert_eq!(d.precursor_mz, t.precursor_mz);
            assert_eq!(d.calibrated_rt, t.calibrated_rt);
        }
        let t_mz: Vec<f64> = with.entries[0].fragments.iter().map(|f| f.mz).collect();
        let d_mz: Vec<f64> = with.entries[2].fragments.iter().map(|f| f.mz).collect();
        assert_ne!(t_mz, d_mz);
    }

    #[test]
    fn palindrome_is_flagged() {
        // reversing all but the last residue of AGGGGGAK yields itself
        let lib = Library::new(vec![entry("AGGGGGAK", 2, "HUMAN")]);
        let with = generate_decoys(&lib).unwrap();
        assert_eq!(with.entries[1].modified_sequence, "AGGGGGAK");
        assert!(with.provenance.iter().any(|p| p.contains("palindromic")));
    }

    fn coded(prefix: &str, i: usize) -> String {
        const LETTERS: &[u8] = b"ADEFGHLNQS";
        let code: String = [i / 100, (i / 10) % 10, i % 10]
            .iter()
            .map(|&d| LETTERS[d] as char)
            .collect();
        format!("{prefix}{code}K")
    }

    #[test]
    fn merge_counts_and_collisions() {
        let targets = Library::new(
            (0..100)
                .map(|i| entry(&coded("PEPT", i), 2, "HUMAN"))
                .collect(),
        );
        let trap = Library::new(
            (0..50)
                .map(|i| entry(&coded("LLVV", i), 2, "YEAST"))
                .collect(),
        );
        let merged = merge_entrapment(&targets, &trap).unwrap();
        assert_eq!(merged.len(), 150);
        assert_eq!(merged.count(Origin::Entrapment), 50);
        assert_eq!(merged.count(Origin::Target), 100);

        // 5 of the entrapment keys also exist as targets
        let trap = Library::new(
            (0..50)
                .map(|i| {
                    let prefix = if i < 5 { "PEPT" } else { "LLVV" };
                    entry(&coded(prefix, i), 2, "YEAST")
                })
                .collect(),
        );
        let merged = merge_entrapment(&targets, &trap).unwrap();
        assert_eq!(merged.count(Origin::Target), 100);
        assert_eq!(merged.count(Origin::Entrapment), 50 - 5);
        assert!(merged.provenance[0].contains("5 dropped"));

        let base = Library::new(vec![entry("PEPTIDEK", 2, "HUMAN")]);
        let other = Library::new(vec![entry("PEPTIDEK", 2, "YEAST")]);
        let merged = merge_entrapment(&base, &other).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.entries[0].origin, Origin::Target);
    }

    #[test]
    fn analyte_entrapment_rejected() {
        let base = Library::new(vec![entry("PEPTIDEK", 2, "HUMAN")]);
        let trap = Library::new(vec![entry("LESLIEKR", 2, "HUMAN")]);
        assert!(matches!(
            merge_entrapment(&base, &trap),
            Err(LibraryError::AnalyteEntrapment { .. })
        ));
    }

    #[test]
    fn top_fragments_tie_rule() {
        let mut e = entry("PEPTIDEKAAK", 2, "HUMAN");
        e.fragments = (0..15)
            .map(|i| FragmentIon {
                ion_type: IonType::B,
                ordinal: 1 + i % 9,
                charge: 1,
                mz: 1000.0 - i as f64,
                relative_intensity: if i < 12 { 0.5 } else { 1.0 },
            })
            .collect();
        let kept = select_top_fragments(e.clone(), 10);
        assert_eq!(kept.fragments.len(), 10);
        assert!(kept.fragments[..3]
            .iter()
            .all(|f| f.relative_intensity == 1.0));
        // among the tied 0.5 fragments the lowest m/z values survive
        let tied: Vec<f64> = kept.fragments[3..].iter().map(|f| f.mz).collect();
        assert_eq!(tied, vec![989.0, 990.0, 991.0, 992.0, 993.0, 994.0, 995.0]);

        e.fragments.truncate(4);
        assert_eq!(select_top_fragments(e, 10).fragments.len(), 4);
    }
}
