//! One function per subcommand. Each reads its inputs, writes its artifacts
//! atomically under the output directory and returns their paths.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dia_rescore::fdr::{
    compute_qvalues, entrapment_report, filter_at_fdr, infer_proteins, score_candidates,
    write_report, write_sweep, write_thresholds, ProteinGroup, ReportRow,
};
use dia_rescore::library::{generate_decoys, load_library, merge_entrapment, write_library};
use dia_rescore::model::{load_checkpoint, train, write_checkpoint, FORMAT_VERSION};
use dia_rescore::quant::{cv_bins, quantify_precursor, quantify_protein, ratio_table, QuantMatrix};
use dia_rescore::spectra::{load_run, write_jsonl, RunFormat};
use dia_rescore::synth::{
    generate_entrapment_library, generate_library, plant_targets, scale_by_species,
    synthesize_run, synthesize_training_set, write_truth, SynthConfig,
};
use dia_rescore::xic::extract_library;
use dia_rescore::{QValueTable, RunIndex, ScoredPsm};

use crate::config::PipelineConfig;
use crate::fsio::{read_json, write_atomic, write_json};

pub const SCORES_SUFFIX: &str = ".scores.json";
pub const HISTORY_FILE: &str = "training_history.json";
pub const LIBRARY_FILE: &str = "library.tsv";
pub const ENTRAPMENT_FILE: &str = "entrapment.tsv";

/// Output of the `score` stage for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub run_id: String,
    /// File stem the run was read from.
    pub name: String,
    pub psms: Vec<ScoredPsm>,
    pub qvalues: QValueTable,
    /// Library entries that could not be extracted.
    pub skipped: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    stage: &'a str,
    config_hash: String,
    seed: u64,
    versions: BTreeMap<&'static str, String>,
    artifacts: Vec<String>,
    config: &'a PipelineConfig,
}

fn write_manifest(config: &PipelineConfig, stage: &str, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let out = config.out_dir()?;
    let versions = BTreeMap::from([
        ("dia-rescore", env!("CARGO_PKG_VERSION").to_string()),
        ("dia-rescore-core", dia_rescore::VERSION.to_string()),
        ("checkpoint-format", FORMAT_VERSION.to_string()),
    ]);
    let manifest = Manifest {
        stage,
        config_hash: config.hash(),
        seed: config.seed,
        versions,
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
            .collect(),
        config,
    };
    let path = out.join(format!("manifest_{stage}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

fn finish(config: &PipelineConfig, stage: &str, mut artifacts: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let manifest = write_manifest(config, stage, &artifacts)?;
    artifacts.push(manifest);
    Ok(artifacts)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Library, entrapment library and one run plus ground truth per replicate
/// of every configured condition.
pub fn synth(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let library = generate_library(&config.synth)?;
    let trap = generate_entrapment_library(
        &config.synth,
        &library,
        config.experiment.entrapment_peptides,
        &config.experiment.entrapment_species,
    )?;
    let mut artifacts = Vec::new();
    for (name, lib) in [(LIBRARY_FILE, &library), (ENTRAPMENT_FILE, &trap)] {
        let path = out.join(name);
        write_atomic(&path, |w| Ok(write_library(lib, w)?))?;
        artifacts.push(path);
    }

    let base = plant_targets(&library, &config.synth);
    let mut k = 0u64;
    for condition in &config.experiment.conditions {
        let planted = scale_by_species(&base, &library, &condition.species_factors);
        for name in condition.run_names() {
            let run_config = SynthConfig {
                seed: config.synth.seed.wrapping_add(k),
                condition: condition.name.clone(),
                ..config.synth.clone()
            };
            k += 1;
            let synthesized = synthesize_run(&library, &planted, &run_config)?;
            let run_path = out.join(format!("{name}.jsonl"));
            write_atomic(&run_path, |w| Ok(write_jsonl(&synthesized.run, w)?))?;
            let truth_path = out.join(format!("{name}.truth.jsonl"));
            write_atomic(&truth_path, |w| Ok(write_truth(&synthesized.truth, w)?))?;
            artifacts.extend([run_path, truth_path]);
        }
    }
    finish(config, "synth", artifacts)
}

/// Trains on a synthetic labelled set and writes the checkpoint and the
/// per-epoch history.
pub fn train_model(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let pairs = synthesize_training_set(&config.training).context("building training set")?;
    log::info!("training on {} pairs", pairs.len());
    let (params, history) = train(&pairs, &config.model)?;
    let ckpt = config.checkpoint_path()?;
    write_atomic(&ckpt, |w| Ok(write_checkpoint(&params, w)?))?;
    let hist = out.join(HISTORY_FILE);
    write_json(&hist, &history)?;
    finish(config, "train", vec![ckpt, hist])
}

/// Extracts every library, entrapment and decoy entry from each run, scores
/// them and assigns q-values.
pub fn score(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let ckpt = config.checkpoint_path()?;
    if !ckpt.exists() {
        bail!("checkpoint {} does not exist; run `train` first or pass --checkpoint", ckpt.display());
    }
    let params = load_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let lib_path = config.paths.library.clone().unwrap_or_else(|| out.join(LIBRARY_FILE));
    let mut library = load_library(&lib_path).with_context(|| format!("loading library {}", lib_path.display()))?;
    if let Some(trap_path) = &config.paths.entrapment_library {
        let trap = load_library(trap_path).with_context(|| format!("loading {}", trap_path.display()))?;
        library = merge_entrapment(&library, &trap)?;
    }
    let library = generate_decoys(&library)?;
    if config.paths.run.is_empty() {
        bail!("no runs to score; pass --run");
    }

    let mut artifacts = Vec::new();
    for run_path in &config.paths.run {
        let format = RunFormat::from_path(run_path)
            .with_context(|| format!("cannot tell the format of {} from its extension", run_path.display()))?;
        let run = load_run(run_path, format)?;
        let index = RunIndex::new(run)?;
        let extraction = extract_library(&library, &index, &config.extraction, config.workers);
        log::info!(
            "{}: {} groups extracted, {} skipped",
            index.run_id,
            extraction.groups.len(),
            extraction.skipped.len()
        );
        let quantities: HashMap<(String, u8, dia_rescore::Origin), Option<f64>> = extraction
            .groups
            .iter()
            .map(|g| {
                let e = &g.entry;
                ((e.modified_sequence.clone(), e.charge, e.origin), quantify_precursor(g, &config.quant))
            })
            .collect();
        let mut psms = score_candidates(&params, &extraction.groups, config.workers)?;
        for p in &mut psms {
            p.quantity = quantities
                .get(&(p.modified_sequence.clone(), p.charge, p.origin))
                .copied()
                .flatten();
        }
        let qvalues = compute_qvalues(&psms);
        let name = stem(run_path);
        let scored = ScoredRun {
            run_id: index.run_id.clone(),
            name: name.clone(),
            psms,
            qvalues,
            skipped: extraction.skipped.len(),
        };
        let path = out.join(format!("{name}{SCORES_SUFFIX}"));
        write_json(&path, &scored)?;
        artifacts.push(path);
    }
    finish(config, "score", artifacts)
}

/// Scored runs selected by `--run` (by file stem), or every scored run in
/// the output directory.
pub fn scored_runs(config: &PipelineConfig) -> Result<Vec<ScoredRun>> {
    let out = config.out_dir()?;
    let mut paths: Vec<PathBuf> = if config.paths.run.is_empty() {
        std::fs::read_dir(out)
            .with_context(|| format!("listing {}", out.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(SCORES_SUFFIX))
            .collect()
    } else {
        config
            .paths
            .run
            .iter()
            .map(|r| out.join(format!("{}{SCORES_SUFFIX}", stem(r))))
            .collect()
    };
    paths.sort();
    if paths.is_empty() {
        bail!("no scored runs in {}; run `score` first", out.display());
    }
    paths.iter().map(|p| read_json(p)).collect()
}

/// Identified target-like precursors with a quantity, keyed `SEQUENCE/z`.
fn identified_quantities(run: &ScoredRun, fdr: f64) -> Vec<(String, f64)> {
    filter_at_fdr(&run.qvalues, fdr)
        .into_iter()
        .filter_map(|i| {
            let p = &run.psms[i];
            p.quantity.map(|q| (precursor_key(p), q))
        })
        .collect()
}

pub fn precursor_key(p: &ScoredPsm) -> String {
    format!("{}/{}", p.modified_sequence, p.charge)
}

fn protein_groups(run: &ScoredRun, fdr: f64) -> Vec<ProteinGroup> {
    infer_proteins(&run.psms, &run.qvalues.q_by_psm(), fdr)
}

fn protein_quantities(run: &ScoredRun, fdr: f64, config: &PipelineConfig) -> Vec<(String, f64)> {
    let q: HashMap<String, f64> = identified_quantities(run, fdr).into_iter().collect();
    protein_groups(run, fdr)
        .iter()
        .filter(|g| g.identified)
        .filter_map(|g| {
            let values: Vec<f64> = g
                .precursors
                .iter()
                .filter_map(|(seq, z)| q.get(&format!("{seq}/{z}")).copied())
                .collect();
            quantify_protein(&values, &config.quant).map(|v| (g.label(), v))
        })
        .collect()
}

fn tsv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Precursor and protein matrices per condition, CV bins, and the ratio
/// table of the first two conditions.
pub fn quant(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let runs: BTreeMap<String, ScoredRun> =
        scored_runs(config)?.into_iter().map(|r| (r.name.clone(), r)).collect();
    let fdr = config.fdr_threshold;
    let mut artifacts = Vec::new();
    let mut precursor_matrices = Vec::new();
    let mut cv_rows = Vec::new();
    let mut species: HashMap<String, String> = HashMap::new();
    for condition in &config.experiment.conditions {
        let members: Vec<&ScoredRun> =
            condition.run_names().iter().filter_map(|n| runs.get(n)).collect();
        if members.is_empty() {
            log::warn!("condition {} has no scored runs", condition.name);
            continue;
        }
        for r in &members {
            for p in &r.psms {
                species.entry(precursor_key(p)).or_insert_with(|| p.species.clone());
            }
        }
        let precursors = QuantMatrix::from_columns(
            members.iter().map(|r| (r.name.clone(), identified_quantities(r, fdr))).collect(),
        );
        let proteins = QuantMatrix::from_columns(
            members.iter().map(|r| (r.name.clone(), protein_quantities(r, fdr, config))).collect(),
        );
        for (level, m) in [("precursor", &precursors), ("protein", &proteins)] {
            let path = out.join(format!("quant_{level}_{}.tsv", condition.name));
            write_atomic(&path, |w| Ok(m.write_tsv(w)?))?;
            artifacts.push(path);
            for bin in cv_bins(m, &config.quant) {
                cv_rows.push([
                    condition.name.clone(),
                    level.to_string(),
                    bin.threshold.to_string(),
                    bin.count.to_string(),
                ]);
            }
        }
        precursor_matrices.push((condition.name.clone(), precursors));
    }
    if precursor_matrices.is_empty() {
        bail!("none of the configured conditions has a scored run");
    }

    let path = out.join("cv_bins.tsv");
    write_atomic(&path, |w| {
        let mut t = tsv_writer(w);
        t.write_record(["Condition", "Level", "CvBelow", "Count"])?;
        for r in &cv_rows {
            t.write_record(r)?;
        }
        t.flush()?;
        Ok(())
    })?;
    artifacts.push(path);

    if let [(a_name, a), (b_name, b), ..] = precursor_matrices.as_slice() {
        let table = ratio_table(a, b, &species);
        let path = out.join(format!("ratios_{a_name}_vs_{b_name}.tsv"));
        write_atomic(&path, |w| {
            let mut t = tsv_writer(w);
            t.write_record(["Species", "N", "MedianLog2Ratio", "Q1", "Q3"])?;
            for s in &table.species {
                t.write_record([
                    s.species.clone(),
                    s.n.to_string(),
                    s.median.to_string(),
                    s.q1.to_string(),
                    s.q3.to_string(),
                ])?;
            }
            t.flush()?;
            Ok(())
        })?;
        artifacts.push(path);
    }
    finish(config, "quant", artifacts)
}

/// Entrapment proportions at the report thresholds and the full score sweep
/// for every scored run.
pub fn entrap(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let mut artifacts = Vec::new();
    for run in scored_runs(config)? {
        let report = entrapment_report(&run.psms, &run.qvalues);
        let path = out.join(format!("{}.entrapment.tsv", run.name));
        write_atomic(&path, |w| Ok(write_thresholds(&report.thresholds, w)?))?;
        artifacts.push(path);
        let path = out.join(format!("{}.sweep.tsv", run.name));
        write_atomic(&path, |w| Ok(write_sweep(&report.sweep, w)?))?;
        artifacts.push(path);
    }
    finish(config, "entrap", artifacts)
}

/// Identification report and protein groups for every scored run.
pub fn report(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let out = config.out_dir()?;
    let fdr = config.fdr_threshold;
    let mut artifacts = Vec::new();
    for run in scored_runs(config)? {
        let groups = protein_groups(&run, fdr);
        let rows = ReportRow::from_identifications(&run.psms, &run.qvalues, fdr, &groups);
        let path = out.join(format!("{}.report.tsv", run.name));
        write_atomic(&path, |w| Ok(write_report(&rows, w)?))?;
        artifacts.push(path);

        let path = out.join(format!("{}.proteins.tsv", run.name));
        write_atomic(&path, |w| {
            let mut t = tsv_writer(w);
            t.write_record(["ProteinGroup", "Species", "Precursors", "Identified"])?;
            for g in &groups {
                t.write_record([
                    g.label(),
                    g.species.clone(),
                    g.precursors.len().to_string(),
                    g.identified.to_string(),
                ])?;
            }
            t.flush()?;
            Ok(())
        })?;
        artifacts.push(path);
    }
    finish(config, "report", artifacts)
}
