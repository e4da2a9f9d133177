use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    select_top_fragments, FragmentIon, IonType, Library, LibraryError, Origin, PrecursorEntry,
    TOP_FRAGMENTS,
};

pub const REQUIRED_COLUMNS: [&str; 12] = [
    "ModifiedPeptide",
    "StrippedPeptide",
    "PrecursorCharge",
    "PrecursorMz",
    "CalibratedRT",
    "FragmentType",
    "FragmentSeriesNumber",
    "FragmentCharge",
    "FragmentMz",
    "RelativeIntensity",
    "ProteinIds",
    "Species",
];
const ORIGIN_COLUMN: &str = "Origin";

struct Columns {
    idx: [usize; 12],
    origin: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, LibraryError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let missing: Vec<String> = REQUIRED_COLUMNS
            .iter()
            .filter(|c| find(c).is_none())
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(LibraryError::MissingColumns(missing));
        }
        let mut idx = [0usize; 12];
        for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
            *slot = find(name).expect("checked above");
        }
        Ok(Self {
            idx,
            origin: find(ORIGIN_COLUMN),
        })
    }
}

fn field<'r>(
    record: &'r csv::StringRecord,
    cols: &Columns,
    which: usize,
    line: u64,
) -> Result<&'r str, LibraryError> {
    record
        .get(cols.idx[which])
        .map(str::trim)
        .ok_or_else(|| LibraryError::Row {
            line,
            reason: format!("missing value for {}", REQUIRED_COLUMNS[which]),
        })
}

fn number<T: std::str::FromStr>(raw: &str, column: &str, line: u64) -> Result<T, LibraryError> {
    raw.parse::<T>().map_err(|_| LibraryError::Row {
        line,
        reason: format!("{column} value {raw:?} is not numeric"),
    })
}

pub fn load_library(path: &Path) -> Result<Library, LibraryError> {
    let file = std::fs::File::open(path).map_err(|source| LibraryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lib = read_library(std::io::BufReader::new(file))?;
    lib.provenance
        .push(format!("loaded from {}", path.display()));
    Ok(lib)
}

/// Reads a library TSV: one row per fragment, grouped by precursor.
pub fn read_library<R: Read>(reader: R) -> Result<Library, LibraryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let cols = Columns::from_header(rdr.headers()?)?;

    let mut entries: Vec<PrecursorEntry> = Vec::new();
    let mut by_key: HashMap<(String, u8, Origin), usize> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let modified = field(&record, &cols, 0, line)?.to_string();
        let stripped = field(&record, &cols, 1, line)?.to_string();
        let charge: u8 = number(field(&record, &cols, 2, line)?, "PrecursorCharge", line)?;
        let precursor_mz: f64 = number(field(&record, &cols, 3, line)?, "PrecursorMz", line)?;
        let rt: f64 = number(field(&record, &cols, 4, line)?, "CalibratedRT", line)?;
        let ion_type: IonType =
            field(&record, &cols, 5, line)?
                .parse()
                .map_err(|e: LibraryError| LibraryError::Row {
                    line,
                    reason: e.to_string(),
                })?;
        let ordinal: usize = number(
            field(&record, &cols, 6, line)?,
            "FragmentSeriesNumber",
            line,
        )?;
        let frag_charge: u8 = number(field(&record, &cols, 7, line)?, "FragmentCharge", line)?;
        let frag_mz: f64 = number(field(&record, &cols, 8, line)?, "FragmentMz", line)?;
        let rel: f64 = number(field(&record, &cols, 9, line)?, "RelativeIntensity", line)?;
        let mut proteins: Vec<String> = field(&record, &cols, 10, line)?
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        proteins.sort();
        proteins.dedup();
        let species = field(&record, &cols, 11, line)?.to_string();
        let origin: Origin = match cols.origin.and_then(|i| record.get(i)) {
            Some(raw) => raw.parse().map_err(|e: LibraryError| LibraryError::Row {
                line,
                reason: e.to_string(),
            })?,
            None => Origin::Target,
        };

        let fragment = FragmentIon {
            ion_type,
            ordinal,
            charge: frag_charge,
            mz: frag_mz,
            relative_intensity: rel,
        };
        let key = (modified.clone(), charge, origin);
        match by_key.get(&key) {
            Some(&i) => {
                let e = &mut entries[i];
                let conflict = |field: &'static str| LibraryError::Conflict {
                    sequence: modified.clone(),
                    charge,
                    origin,
                    field,
                };
                if e.calibrated_rt != rt {
                    return Err(conflict("CalibratedRT"));
                }
                if e.precursor_mz != precursor_mz {
                    return Err(conflict("PrecursorMz"));
                }
                if e.stripped_sequence != stripped {
                    return Err(conflict("StrippedPeptide"));
                }
                if e.protein_ids != proteins {
                    return Err(conflict("ProteinIds"));
                }
                if e.species != species {
                    return Err(conflict("Species"));
                }
                e.fragments.push(fragment);
            }
            None => {
                by_key.insert(key, entries.len());
                entries.push(PrecursorEntry {
                    modified_sequence: modified,
                    stripped_sequence: stripped,
                    charge,
                    precursor_mz,
                    calibrated_rt: rt,
                    fragments: vec![fragment],
                    origin,
                    protein_ids: proteins,
                    species,
                });
            }
        }
    }

    let entries = entries
        .into_iter()
        .map(|e| {
            e.validate()?;
            Ok(select_top_fragments(e, TOP_FRAGMENTS))
        })
        .collect::<Result<Vec<_>, LibraryError>>()?;
    Ok(Library::new(entries))
}

pub fn write_library<W: Write>(library: &Library, writer: W) -> Result<(), LibraryError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.push(ORIGIN_COLUMN);
    w.write_record(&header)?;
    for e in &library.entries {
        let proteins = e.protein_ids.join(";");
        for f in &e.fragments {
            w.write_record([
                e.modified_sequence.as_str(),
                e.stripped_sequence.as_str(),
                &e.charge.to_string(),
                &e.precursor_mz.to_string(),
                &e.calibrated_rt.to_string(),
                &f.ion_type.to_string(),
                &f.ordinal.to_string(),
                &f.charge.to_string(),
                &f.mz.to_string(),
                &f.relative_intensity.to_string(),
                &proteins,
                &e.species,
                &e.origin.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| LibraryError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "ModifiedPeptide\tStrippedPeptide\tPrecursorCharge\tPrecursorMz\tCalibratedRT\tFragmentType\tFragmentSeriesNumber\tFragmentCharge\tFragmentMz\tRelativeIntensity\tProteinIds\tSpecies\n";

    fn row(rt: &str, ion: &str, ord: usize, mz: &str, rel: &str) -> String {
        format!(
            "PEPTIDEK\tPEPTIDEK\t2\t464.7350\t{rt}\t{ion}\t{ord}\t1\t{mz}\t{rel}\tP1;P0\tHUMAN\n"
        )
    }

    #[test]
    fn groups_and_orders_fragments() {
        let text = format!(
            "{HEADER}{}{}{}",
            row("12.5", "y", 1, "147.1128", "0.2"),
            row("12.5", "y", 2, "276.1554", "1.0"),
            row("12.5", "b", 2, "227.1026", "0.5"),
        );
        let lib = read_library(text.as_bytes()).unwrap();
        assert_eq!(lib.len(), 1);
        let e = &lib.entries[0];
        assert_eq!(e.fragments.len(), 3);
        let rel: Vec<f64> = e.fragments.iter().map(|f| f.relative_intensity).collect();
        assert_eq!(rel, vec![1.0, 0.5, 0.2]);
        assert_eq!(e.protein_ids, vec!["P0", "P1"]);
        assert_eq!(e.origin, Origin::Target);
    }

    #[test]
    fn conflicting_rt_is_error() {
        let text = format!(
            "{HEADER}{}{}",
            row("12.5", "y", 1, "147.1128", "0.2"),
            row("13.0", "y", 2, "276.1554", "1.0"),
        );
        assert!(matches!(
            read_library(text.as_bytes()),
            Err(LibraryError::Conflict {
                field: "CalibratedRT",
                ..
            })
        ));
    }

    #[test]
    fn missing_columns_are_listed() {
        let text = "ModifiedPeptide\tPrecursorCharge\nPEPTIDEK\t2\n";
        match read_library(text.as_bytes()) {
            Err(LibraryError::MissingColumns(cols)) => {
                assert!(cols.contains(&"FragmentMz".to_string()));
                assert!(cols.contains(&"Species".to_string()));
                assert!(!cols.contains(&"PrecursorCharge".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_mz_reports_line() {
        let text = format!(
            "{HEADER}{}{}",
            row("12.5", "y", 1, "147.1128", "0.2"),
            row("12.5", "y", 2, "abc", "1.0"),
        );
        match read_library(text.as_bytes()) {
            Err(LibraryError::Row { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("FragmentMz"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variable_modification_rejected() {
        let text = format!(
            "{HEADER}PEPM(UniMod:35)IDEK\tPEPMIDEK\t2\t500.0\t1.0\ty\t1\t1\t147.1\t1.0\tP1\tHUMAN\n"
        );
        assert!(matches!(
            read_library(text.as_bytes()),
            Err(LibraryError::UnsupportedModification { .. })
        ));
    }
}
