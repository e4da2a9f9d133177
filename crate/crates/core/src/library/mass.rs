//! Monoisotopic masses for unmodified residues plus fixed carbamidomethyl-C.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::LibraryError;

pub const PROTON: f64 = 1.007_276_466;
pub const WATER: f64 = 18.010_565;
pub const C13_C12: f64 = 1.003_354_837_8;
pub const CARBAMIDOMETHYL: f64 = 57.021_464;

pub fn residue_mass(aa: u8) -> Option<f64> {
    Some(match aa {
        b'G' => 57.021_463_72,
        b'A' => 71.037_113_81,
        b'S' => 87.032_028_40,
        b'P' => 97.052_763_88,
        b'V' => 99.068_413_91,
        b'T' => 101.047_678_47,
        b'C' => 103.009_184_51,
        b'L' => 113.084_064_01,
        b'I' => 113.084_064_01,
        b'N' => 114.042_927_45,
        b'D' => 115.026_943_03,
        b'Q' => 128.058_577_54,
        b'K' => 128.094_963_05,
        b'E' => 129.042_593_09,
        b'M' => 131.040_484_63,
        b'H' => 137.058_911_86,
        b'F' => 147.068_413_91,
        b'R' => 156.101_111_05,
        b'Y' => 163.063_328_57,
        b'W' => 186.079_312_98,
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Residue {
    pub aa: u8,
    pub carbamidomethyl: bool,
}

impl Residue {
    pub fn mass(&self) -> f64 {
        // aa validated at construction
        let base = residue_mass(self.aa).unwrap_or(f64::NAN);
        if self.carbamidomethyl {
            base + CARBAMIDOMETHYL
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IonType {
    B,
    Y,
}

impl fmt::Display for IonType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IonType::B => "b",
            IonType::Y => "y",
        })
    }
}

impl std::str::FromStr for IonType {
    type Err = LibraryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "b" | "B" => Ok(IonType::B),
            "y" | "Y" => Ok(IonType::Y),
            other => Err(LibraryError::Invalid(format!(
                "unsupported ion type {other:?}"
            ))),
        }
    }
}

/// A peptide with its (fixed) modifications resolved per residue.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Peptide {
    residues: Vec<Residue>,
}

const CAM_TAGS: [&str; 4] = [
    "(UniMod:4)",
    "[UniMod:4]",
    "[Carbamidomethyl]",
    "(Carbamidomethyl)",
];

impl Peptide {
    /// Parses a modified sequence such as `PEPC(UniMod:4)TIDEK`.
    ///
    /// Only carbamidomethylation on cysteine is accepted; any other
    /// annotation is rejected.
    pub fn parse(modified: &str) -> Result<Self, LibraryError> {
        let bytes = modified.as_bytes();
        let mut residues: Vec<Residue> = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if c == b'(' || c == b'[' {
                let close = if c == b'(' { b')' } else { b']' };
                let end = bytes[i..]
                    .iter()
                    .position(|&b| b == close)
                    .map(|p| i + p)
                    .ok_or_else(|| {
                        LibraryError::Invalid(format!("unterminated modification in {modified:?}"))
                    })?;
                let tag = &modified[i..=end];
                match residues.last_mut() {
                    Some(r) if r.aa == b'C' && !r.carbamidomethyl && CAM_TAGS.contains(&tag) => {
                        r.carbamidomethyl = true
                    }
                    _ => {
                        return Err(LibraryError::UnsupportedModification {
                            sequence: modified.to_string(),
                            modification: tag.to_string(),
                        })
                    }
                }
                i = end + 1;
                continue;
            }
            if residue_mass(c).is_none() {
                return Err(LibraryError::UnknownResidue {
                    sequence: modified.to_string(),
                    residue: c as char,
                });
            }
            residues.push(Residue {
                aa: c,
                carbamidomethyl: false,
            });
            i += 1;
        }
        if residues.is_empty() {
            return Err(LibraryError::Invalid("empty peptide sequence".into()));
        }
        Ok(Self { residues })
    }

    /// Builds a peptide from a plain sequence, carbamidomethylating every C.
    pub fn from_stripped_with_fixed_cam(stripped: &str) -> Result<Self, LibraryError> {
        let mut residues = Vec::with_capacity(stripped.len());
        for &c in stripped.as_bytes() {
            if residue_mass(c).is_none() {
                return Err(LibraryError::UnknownResidue {
                    sequence: stripped.to_string(),
                    residue: c as char,
                });
            }
            residues.push(Residue {
                aa: c,
                carbamidomethyl: c == b'C',
            });
        }
        Ok(Self { residues })
    }

    pub fn from_residues(residues: Vec<Residue>) -> Self {
        Self { residues }
    }

    pub fn residues(&self) -> &[Residue] {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn stripped(&self) -> String {
        self.residues.iter().map(|r| r.aa as char).collect()
    }

    /// Canonical modified sequence, e.g. `AC(UniMod:4)K`.
    pub fn modified_sequence(&self) -> String {
        let mut s = String::with_capacity(self.residues.len() + 8);
        for r in &self.residues {
            s.push(r.aa as char);
            if r.carbamidomethyl {
                s.push_str("(UniMod:4)");
            }
        }
        s
    }

    /// Sum of residue masses plus water.
    pub fn neutral_mass(&self) -> f64 {
        self.residues.iter().map(Residue::mass).sum::<f64>() + WATER
    }

    pub fn precursor_mz(&self, charge: u8) -> f64 {
        let z = charge as f64;
        (self.neutral_mass() + z * PROTON) / z
    }

    /// Neutral mass of a b or y fragment of the given ordinal (number of
    /// residues it contains).
    pub fn fragment_neutral_mass(&self, ion: IonType, ordinal: usize) -> Result<f64, LibraryError> {
        if ordinal == 0 || ordinal >= self.residues.len() {
            return Err(LibraryError::Invalid(format!(
                "{ion}{ordinal} is out of range for a {}-residue peptide",
                self.residues.len()
            )));
        }
        Ok(match ion {
            IonType::B => self.residues[..ordinal].iter().map(Residue::mass).sum(),
            IonType::Y => {
                self.residues[self.residues.len() - ordinal..]
                    .iter()
                    .map(Residue::mass)
                    .sum::<f64>()
                    + WATER
            }
        })
    }

    pub fn fragment_mz(
        &self,
        ion: IonType,
        ordinal: usize,
        charge: u8,
    ) -> Result<f64, LibraryError> {
        if charge == 0 {
            return Err(LibraryError::Invalid(
                "fragment charge must be positive".into(),
            ));
        }
        let z = charge as f64;
        Ok((self.fragment_neutral_mass(ion, ordinal)? + z * PROTON) / z)
    }
}

/// m/z of a b or y ion for a modified sequence (see [`Peptide::parse`]).
pub fn compute_fragment_mz(
    modified_sequence: &str,
    ion: IonType,
    ordinal: usize,
    charge: u8,
) -> Result<f64, LibraryError> {
    Peptide::parse(modified_sequence)?.fragment_mz(ion, ordinal, charge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_cam() {
        let p = Peptide::parse("AC[Carbamidomethyl]DK").unwrap();
        assert_eq!(p.modified_sequence(), "AC(UniMod:4)DK");
        assert_eq!(p.stripped(), "ACDK");
        assert!(p.residues()[1].carbamidomethyl);
    }

    #[test]
    fn rejects_variable_mods_and_unknown_residues() {
        assert!(matches!(
            Peptide::parse("PEPM(UniMod:35)K"),
            Err(LibraryError::UnsupportedModification { .. })
        ));
        assert!(matches!(
            Peptide::parse("PEPXK"),
            Err(LibraryError::UnknownResidue { residue: 'X', .. })
        ));
        assert!(Peptide::parse("A(UniMod:4)K").is_err());
    }

    #[test]
    fn cam_shifts_mass() {
        let plain = Peptide::parse("ACK").unwrap().neutral_mass();
        let cam = Peptide::parse("AC(UniMod:4)K").unwrap().neutral_mass();
        assert!((cam - plain - CARBAMIDOMETHYL).abs() < 1e-9);
    }

    #[test]
    fn ordinal_bounds() {
        let p = Peptide::parse("PEPTIDEK").unwrap();
        assert!(p.fragment_mz(IonType::Y, 0, 1).is_err());
        assert!(p.fragment_mz(IonType::Y, 8, 1).is_err());
        assert!(p.fragment_mz(IonType::B, 7, 1).is_ok());
    }
}
