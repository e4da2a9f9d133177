use std::collections::BTreeSet;

use proptest::prelude::*;

use dia_rescore::fdr::{compute_qvalues, filter_at_fdr};
use dia_rescore::library::{pseudo_reverse, Peptide};
use dia_rescore::model::{score, ModelInput};
use dia_rescore::quant::{cv_bins, QuantMatrix};
use dia_rescore::spectra::{Peak, Spectrum};
use dia_rescore::synth::{oracle_extract, oracle_qvalues, synthesize_training_set, SynthConfig, TrainingSetConfig};
use dia_rescore::xic::{condition_peak_group, nearest_peak, TraceRole, XIC_POINTS};
use dia_rescore::{ExtractionConfig, ModelConfig, ModelParameters, Origin, PeakGroup, QuantConfig, ScoredPsm};

fn spectrum(peaks: Vec<(i32, f64)>) -> Spectrum {
    let mut peaks: Vec<Peak> = peaks
        .into_iter()
        .map(|(k, intensity)| Peak {
            mz: 600.0 + k as f64 * 0.003,
            intensity,
        })
        .collect();
    peaks.sort_by(|a, b| a.mz.total_cmp(&b.mz));
    Spectrum {
        ms_level: 1,
        rt_minutes: 0.0,
        isolation_window: None,
        peaks,
    }
}

fn origin() -> impl Strategy<Value = Origin> {
    prop_oneof![Just(Origin::Target), Just(Origin::Decoy), Just(Origin::Entrapment)]
}

fn psms(max: usize) -> impl Strategy<Value = Vec<ScoredPsm>> {
    prop::collection::vec((origin(), 1u32..40), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (origin, level))| ScoredPsm {
                modified_sequence: format!("SEQ{i}K"),
                charge: 2,
                origin,
                score: level as f64 / 41.0,
                quantity: None,
                protein_ids: vec![],
                species: String::new(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn nearest_peak_matches_linear_scan(
        peaks in prop::collection::vec((-300i32..300, 0.0f64..1e4), 0..80),
        query in -310i32..310,
        half in any::<bool>(),
        tol in 1.0f64..50.0,
    ) {
        let s = spectrum(peaks);
        let mz = 600.0 + (query as f64 + if half { 0.5 } else { 0.0 }) * 0.003;
        prop_assert_eq!(nearest_peak(&s.peaks, mz, tol), oracle_extract(&s, mz, tol));
    }

    #[test]
    fn qvalues_match_oracle(list in psms(120)) {
        prop_assert_eq!(compute_qvalues(&list), oracle_qvalues(&list));
    }

    #[test]
    fn qvalues_monotone_down_the_ranking(list in psms(150)) {
        let t = compute_qvalues(&list);
        for w in t.rows.windows(2) {
            prop_assert!(w[0].q_value <= w[1].q_value);
            prop_assert!(w[0].score >= w[1].score);
        }
        for (k, r) in t.rows.iter().enumerate() {
            let block_end = t.rows.get(k + 1).map_or(true, |n| n.score != r.score);
            if block_end {
                prop_assert!(r.q_value <= r.raw_fdr);
            }
            prop_assert!((0.0..=1.0).contains(&r.q_value));
        }
    }

    #[test]
    fn qvalues_ignore_input_order(list in psms(100), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..list.len()).collect();
        // a cheap deterministic shuffle
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let shuffled: Vec<ScoredPsm> = order.iter().map(|&i| list[i].clone()).collect();
        let a = compute_qvalues(&list).q_by_psm();
        let b = compute_qvalues(&shuffled).q_by_psm();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(a[i], b[k]);
        }
    }

    #[test]
    fn filtering_is_monotone_in_threshold(list in psms(150), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let table = compute_qvalues(&list);
        let small: BTreeSet<usize> = filter_at_fdr(&table, lo).into_iter().collect();
        let large: BTreeSet<usize> = filter_at_fdr(&table, hi).into_iter().collect();
        prop_assert!(small.is_subset(&large));
        prop_assert!(large.iter().all(|&i| list[i].origin != Origin::Decoy));
    }

    #[test]
    fn cv_bins_are_cumulative(
        rows in prop::collection::vec(prop::collection::vec(prop::option::of(1.0f64..1e6), 3), 0..40),
        mut thresholds in prop::collection::vec(0.0f64..2.0, 1..6),
    ) {
        thresholds.sort_by(f64::total_cmp);
        let mut m = QuantMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for (i, r) in rows.into_iter().enumerate() {
            m.push_row(format!("P{i}"), r);
        }
        let config = QuantConfig { cv_thresholds: thresholds, ..QuantConfig::default() };
        let bins = cv_bins(&m, &config);
        for w in bins.windows(2) {
            prop_assert!(w[0].count <= w[1].count);
        }
    }

    #[test]
    fn pseudo_reverse_keeps_mass_and_inverts(seq in "[ACDEFGHIKLMNPQRSTVWY]{6,20}") {
        let p = Peptide::from_stripped_with_fixed_cam(&seq).unwrap();
        let d = pseudo_reverse(&p);
        prop_assert!((d.neutral_mass() - p.neutral_mass()).abs() < 1e-9);
        prop_assert_eq!(d.residues().last(), p.residues().last());
        prop_assert_eq!(pseudo_reverse(&d), p);
    }
}

fn training_groups() -> Vec<PeakGroup> {
    synthesize_training_set(&TrainingSetConfig {
        n_pairs: 20,
        synth: SynthConfig {
            gradient_minutes: 8.0,
            seed: 77,
            ..SynthConfig::default()
        },
        ..TrainingSetConfig::default()
    })
    .unwrap()
    .into_iter()
    .map(|p| p.peak_group)
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conditioning_ignores_padded_slots(
        g in 0usize..20,
        keep in 1usize..10,
        junk in prop::collection::vec(0.0f64..1e6, 1..30),
    ) {
        let groups = training_groups();
        let config = ExtractionConfig::default();
        let mut pg = groups[g].clone();
        pg.entry.fragments.truncate(keep);
        for s in keep..pg.fragment_mask.len() {
            pg.fragment_mask[s] = false;
        }
        let clean = {
            let mut p = pg.clone();
            for t in p.fragment_traces.iter_mut().skip(keep) {
                t.raw = Default::default();
            }
            condition_peak_group(&p, &config)
        };
        for t in pg.fragment_traces.iter_mut().skip(keep) {
            t.raw.rts = (0..junk.len()).map(|k| k as f64).collect();
            t.raw.intensities = junk.clone();
            t.raw.ppm_errors = vec![3.0; junk.len()];
        }
        let dirty = condition_peak_group(&pg, &config);
        for (a, b) in clean.traces().zip(dirty.traces()) {
            prop_assert_eq!(a.intensities, b.intensities);
        }
        for t in dirty.fragment_traces.iter().skip(keep) {
            prop_assert_eq!(t.intensities, [0.0; XIC_POINTS]);
            prop_assert!(matches!(t.role, TraceRole::Fragment(_)));
        }

        // the network never sees padded content either
        let model = ModelConfig { dim_model: 8, n_heads: 2, n_encoder_layers: 1, n_decoder_layers: 1, ffn_width: 12, ..ModelConfig::default() };
        let params = ModelParameters::init(&model).unwrap();
        let a = ModelInput::new(&clean, &model).unwrap();
        let b = ModelInput::new(&dirty, &model).unwrap();
        prop_assert_eq!(score(&a, &params).to_bits(), score(&b, &params).to_bits());
    }

    #[test]
    fn conditioned_groups_peak_at_one(g in 0usize..20, c in 1e-3f64..1e3) {
        let groups = training_groups();
        let config = ExtractionConfig::default();
        let mut pg = groups[g].clone();
        for t in pg.precursor_traces.iter_mut().chain(pg.fragment_traces.iter_mut()) {
            t.raw.intensities.iter_mut().for_each(|v| *v *= c);
        }
        let out = condition_peak_group(&pg, &config);
        let max = out.traces().zip(out.slot_mask()).filter(|(_, m)| *m)
            .flat_map(|(t, _)| t.intensities).fold(0.0f64, f64::max);
        prop_assert!(out.empty || max == 1.0);
        for t in out.traces() {
            prop_assert!(t.ppm_errors.iter().all(|e| e.abs() <= config.ppm_tolerance));
        }
    }
}
