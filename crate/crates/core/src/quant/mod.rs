//! Precursor and protein quantities, CV binning and two-condition ratios.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::xic::PeakGroup;

#[derive(Debug, thiserror::Error)]
pub enum QuantError {
    #[error("quant matrix line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    /// Fragment areas averaged per precursor.
    pub top_k: usize,
    /// Tukey fence multiplier in log space.
    pub iqr_multiplier: f64,
    pub cv_thresholds: Vec<f64>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            top_k: 6,
            iqr_multiplier: 1.5,
            cv_thresholds: vec![0.05, 0.10, 0.20],
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        if !(self.iqr_multiplier >= 0.0) {
            return Err(format!(
                "iqr_multiplier {} must be non-negative",
                self.iqr_multiplier
            ));
        }
        Ok(())
    }
}

/// Mean of the `k` largest non-zero areas, or of all non-zero areas when
/// fewer remain. `None` when every area is zero.
pub fn top_k_mean(areas: &[f64], k: usize) -> Option<f64> {
    let mut nz: Vec<f64> = areas.iter().copied().filter(|&a| a > 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    nz.sort_by(|a, b| b.total_cmp(a));
    nz.truncate(k);
    Some(nz.iter().sum::<f64>() / nz.len() as f64)
}

pub fn quantify_precursor(pg: &PeakGroup, config: &QuantConfig) -> Option<f64> {
    top_k_mean(&pg.fragment_areas(), config.top_k)
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Protein quantity from its precursor quantities: drop log-space Tukey
/// outliers, then back-transform the mean log of the survivors. With fewer
/// than three values nothing is dropped.
pub fn quantify_protein(values: &[f64], config: &QuantConfig) -> Option<f64> {
    let mut logs: Vec<f64> = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v.ln())
        .collect();
    if logs.is_empty() {
        return None;
    }
    logs.sort_by(f64::total_cmp);
    let kept: Vec<f64> = if logs.len() < 3 {
        logs
    } else {
        let q1 = quantile_sorted(&logs, 0.25);
        let q3 = quantile_sorted(&logs, 0.75);
        let fence = config.iqr_multiplier * (q3 - q1);
        logs.into_iter()
            .filter(|&l| l >= q1 - fence && l <= q3 + fence)
            .collect()
    };
    Some((kept.iter().sum::<f64>() / kept.len() as f64).exp())
}

/// Rows by columns; `None` is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl QuantMatrix {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            ..Self::default()
        }
    }

    /// Builds a matrix from per-column `(row key, value)` lists; rows are
    /// sorted by key.
    pub fn from_columns(columns: Vec<(String, Vec<(String, f64)>)>) -> Self {
        let mut by_row: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        let n = columns.len();
        for (c, (_, values)) in columns.iter().enumerate() {
            for (key, v) in values {
                by_row.entry(key.clone()).or_insert_with(|| vec![None; n])[c] = Some(*v);
            }
        }
        let mut m = Self::new(columns.into_iter().map(|(name, _)| name).collect());
        for (key, cells) in by_row {
            m.rows.push(key);
            m.cells.push(cells);
        }
        m
    }

    pub fn push_row(&mut self, key: String, cells: Vec<Option<f64>>) {
        assert_eq!(cells.len(), self.columns.len());
        self.rows.push(key);
        self.cells.push(cells);
    }

    /// Mean over the non-missing cells of a row.
    pub fn row_mean(&self, r: usize) -> Option<f64> {
        let vals: Vec<f64> = self.cells[r].iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn write_tsv<W: Write>(&self, out: W) -> Result<(), QuantError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["Key".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (key, cells) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![key.clone()];
            rec.extend(
                cells
                    .iter()
                    .map(|c| c.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(input: R) -> Result<Self, QuantError> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_reader(input);
        let header = r.headers()?.clone();
        let mut m = Self::new(header.iter().skip(1).map(String::from).collect());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != header.len() {
                return Err(QuantError::Parse {
                    line,
                    reason: format!("{} fields, header has {}", rec.len(), header.len()),
                });
            }
            let cells = rec
                .iter()
                .skip(1)
                .map(|c| match c {
                    "" => Ok(None),
                    s => match s.parse::<f64>() {
                        Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
                        _ => Err(QuantError::Parse {
                            line,
                            reason: format!("quantity {s:?} is not a positive number"),
                        }),
                    },
                })
                .collect::<Result<Vec<_>, _>>()?;
            m.push_row(rec[0].to_string(), cells);
        }
        Ok(m)
    }
}

/// Sample coefficient of variation of one row; needs two present values.
pub fn row_cv(cells: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = cells.iter().flatten().copied().collect();
    if vals.len() < 2 {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt() / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvBin {
    pub threshold: f64,
    /// Rows whose CV is strictly below the threshold.
    pub count: usize,
}

pub fn cv_bins(matrix: &QuantMatrix, config: &QuantConfig) -> Vec<CvBin> {
    let cvs: Vec<f64> = matrix.cells.iter().filter_map(|c| row_cv(c)).collect();
    config
        .cv_thresholds
        .iter()
        .map(|&threshold| CvBin {
            threshold,
            count: cvs.iter().filter(|&&cv| cv < threshold).count(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub key: String,
    pub species: String,
    pub log2_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRatio {
    pub species: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl SpeciesRatio {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    /// Sorted by species.
    pub species: Vec<SpeciesRatio>,
}

/// `log2(mean_A / mean_B)` for rows present in both matrices, plus median
/// and quartiles per species. Rows without a species label are skipped.
pub fn ratio_table(
    a: &QuantMatrix,
    b: &QuantMatrix,
    species: &HashMap<String, String>,
) -> RatioTable {
    let b_index: HashMap<&str, usize> = b
        .rows
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    for (i, key) in a.rows.iter().enumerate() {
        let (Some(&j), Some(sp)) = (b_index.get(key.as_str()), species.get(key)) else {
            continue;
        };
        if let (Some(ma), Some(mb)) = (a.row_mean(i), b.row_mean(j)) {
            rows.push(RatioRow {
                key: key.clone(),
                species: sp.clone(),
                log2_ratio: (ma / mb).log2(),
            });
        }
    }
    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        grouped.entry(&r.species).or_default().push(r.log2_ratio);
    }
    let species = grouped
        .into_iter()
        .map(|(sp, mut v)| {
            v.sort_by(f64::total_cmp);
            SpeciesRatio {
                species: sp.to_string(),
                n: v.len(),
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
            }
        })
        .collect();
    RatioTable { rows, species }
}
