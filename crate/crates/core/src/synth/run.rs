use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::prelude::*;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::library::{Library, Origin, C13_C12, TOP_FRAGMENTS};
use crate::spectra::{IsolationWindow, Peak, Spectrum, SpectrumRun};

use super::{random_entry, random_fragments, Result, SynthConfig, SynthError};

/// Peak height of a fragment with relative intensity 1 at abundance 1.
pub const BASE_INTENSITY: f64 = 1e4;
/// Isotope heights relative to the monoisotopic peak at 1000 Da; the
/// heavier isotopes scale linearly with mass.
pub const ISOTOPE_DECAY: [f64; 4] = [1.0, 0.55, 0.20, 0.06];
/// Elution profiles are emitted out to this many sigmas.
const TAIL_SIGMAS: f64 = 5.0;
const FRAGMENT_NOISE_RANGE: (f64, f64) = (100.0, 1800.0);

fn isotope_envelope(neutral_mass: f64) -> [f64; 4] {
    let s = neutral_mass / 1000.0;
    [
        ISOTOPE_DECAY[0],
        ISOTOPE_DECAY[1] * s,
        ISOTOPE_DECAY[2] * s,
        ISOTOPE_DECAY[3] * s,
    ]
}

/// A library entry to plant, with its abundance relative to
/// [`BASE_INTENSITY`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub entry: usize,
    pub abundance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub modified_sequence: String,
    pub charge: u8,
    pub origin: Origin,
    pub species: String,
    pub condition: String,
    pub protein_ids: Vec<String>,
    pub precursor_mz: f64,
    pub apex_rt: f64,
    pub abundance: f64,
    /// Analytic Gaussian area (intensity x minutes) per library fragment,
    /// in library order.
    pub fragment_areas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedRun {
    pub run: SpectrumRun,
    pub truth: Vec<TruthRecord>,
}

/// Contiguous windows of `window_width` Th covering `[mz_min, mz_max)`.
pub fn dia_windows(config: &SynthConfig) -> Vec<IsolationWindow> {
    let mut out = Vec::new();
    let mut lo = config.mz_min;
    let mut k = 0;
    while lo < config.mz_max {
        k += 1;
        let hi = (config.mz_min + k as f64 * config.window_width).min(config.mz_max);
        out.push(IsolationWindow::new(lo, hi));
        lo = hi;
    }
    out
}

/// Every target of `library` with a log-uniform abundance in
/// `[1, dynamic_range]`.
pub fn plant_targets(library: &Library, config: &SynthConfig) -> Vec<Planted> {
    let mut rng = config.rng(4);
    let span = config.dynamic_range.ln();
    library
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.origin == Origin::Target)
        .map(|(entry, _)| Planted {
            entry,
            abundance: (rng.gen::<f64>() * span).exp(),
        })
        .collect()
}

/// Multiplies each planted abundance by the factor of its species; species
/// without a factor keep theirs.
pub fn scale_by_species(
    planted: &[Planted],
    library: &Library,
    factors: &BTreeMap<String, f64>,
) -> Vec<Planted> {
    planted
        .iter()
        .map(|p| {
            let f = library
                .entries
                .get(p.entry)
                .and_then(|e| factors.get(&e.species))
                .copied()
                .unwrap_or(1.0);
            Planted {
                entry: p.entry,
                abundance: p.abundance * f,
            }
        })
        .collect()
}

/// One eluting species, planted or interfering.
struct Emitter {
    apex: f64,
    window: usize,
    /// (m/z, height) pairs for MS1.
    isotopes: Vec<(f64, f64)>,
    /// (m/z, height) pairs for MS2.
    fragments: Vec<(f64, f64)>,
}

struct Schedule {
    n_cycles: usize,
    cycle: f64,
    windows: Vec<IsolationWindow>,
}

impl Schedule {
    fn scans_per_cycle(&self) -> usize {
        self.windows.len() + 1
    }

    /// RT of scan `slot` (0 = MS1, w + 1 = window w) in cycle `k`.
    fn rt(&self, k: usize, slot: usize) -> f64 {
        k as f64 * self.cycle + slot as f64 * self.cycle / self.scans_per_cycle() as f64
    }

    fn index(&self, k: usize, slot: usize) -> usize {
        k * self.scans_per_cycle() + slot
    }

    fn window_of(&self, mz: f64) -> Option<usize> {
        self.windows.iter().position(|w| w.contains_mz(mz))
    }
}

struct Jitter {
    ppm: Option<Normal<f64>>,
}

impl Jitter {
    fn mz(&self, mz: f64, rng: &mut impl Rng) -> f64 {
        match &self.ppm {
            Some(n) => mz * (1.0 + n.sample(rng) * 1e-6),
            None => mz,
        }
    }
}

fn emit(
    e: &Emitter,
    sigma: f64,
    sched: &Schedule,
    peaks: &mut [Vec<Peak>],
    jitter: &Jitter,
    rng: &mut impl Rng,
) {
    let lo = ((e.apex - TAIL_SIGMAS * sigma) / sched.cycle)
        .floor()
        .max(0.0) as usize;
    let hi = (((e.apex + TAIL_SIGMAS * sigma) / sched.cycle).ceil() as usize).min(sched.n_cycles);
    let profile = |t: f64| (-0.5 * ((t - e.apex) / sigma).powi(2)).exp();
    for k in lo..hi {
        let g = profile(sched.rt(k, 0));
        let ms1 = &mut peaks[sched.index(k, 0)];
        for &(mz, h) in &e.isotopes {
            ms1.push(Peak {
                mz: jitter.mz(mz, rng),
                intensity: h * g,
            });
        }
        let g = profile(sched.rt(k, e.window + 1));
        let ms2 = &mut peaks[sched.index(k, e.window + 1)];
        for &(mz, h) in &e.fragments {
            ms2.push(Peak {
                mz: jitter.mz(mz, rng),
                intensity: h * g,
            });
        }
    }
}

/// Simulates one DIA run with `planted` entries of `library` eluting.
///
/// The returned truth has one record per planted entry, in `planted` order.
pub fn synthesize_run(
    library: &Library,
    planted: &[Planted],
    config: &SynthConfig,
) -> Result<SynthesizedRun> {
    config.validate()?;
    let mut rng = config.rng(2);
    let sched = Schedule {
        n_cycles: (config.gradient_minutes * 60.0 / config.cycle_seconds).floor() as usize,
        cycle: config.cycle_seconds / 60.0,
        windows: dia_windows(config),
    };
    let sigma = config.elution_sigma;
    let rt_jitter = (config.rt_jitter > 0.0).then(|| Normal::new(0.0, config.rt_jitter).unwrap());
    let jitter = Jitter {
        ppm: (config.ppm_jitter > 0.0).then(|| Normal::new(0.0, config.ppm_jitter).unwrap()),
    };
    let gaussian_area = sigma * (2.0 * std::f64::consts::PI).sqrt();

    let mut emitters = Vec::new();
    let mut truth = Vec::with_capacity(planted.len());
    let mut taken: HashSet<String> = library
        .entries
        .iter()
        .map(|e| e.stripped_sequence.clone())
        .collect();
    for p in planted {
        let entry = library
            .entries
            .get(p.entry)
            .ok_or(SynthError::UnknownEntry(p.entry))?;
        let window =
            sched
                .window_of(entry.precursor_mz)
                .ok_or_else(|| SynthError::OutsideWindows {
                    sequence: entry.modified_sequence.clone(),
                    mz: entry.precursor_mz,
                })?;
        let apex = entry.calibrated_rt + rt_jitter.map_or(0.0, |n| n.sample(&mut rng));
        let height = BASE_INTENSITY * p.abundance;
        let mass = entry.peptide()?.neutral_mass();
        let z = entry.charge as f64;
        let isotopes = isotope_envelope(mass)
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    entry.precursor_mz + i as f64 * C13_C12 / z,
                    height * config.precursor_scale * r,
                )
            })
            .collect();
        let fragments: Vec<(f64, f64)> = entry
            .fragments
            .iter()
            .map(|f| (f.mz, height * f.relative_intensity))
            .collect();
        truth.push(TruthRecord {
            modified_sequence: entry.modified_sequence.clone(),
            charge: entry.charge,
            origin: entry.origin,
            species: entry.species.clone(),
            condition: config.condition.clone(),
            protein_ids: entry.protein_ids.clone(),
            precursor_mz: entry.precursor_mz,
            apex_rt: apex,
            abundance: p.abundance,
            fragment_areas: fragments.iter().map(|(_, h)| h * gaussian_area).collect(),
        });
        emitters.push(Emitter {
            apex,
            window,
            isotopes,
            fragments,
        });

        if config.interference_rate > 0.0 && rng.gen_bool(config.interference_rate) {
            emitters.push(interferer(
                entry.charge,
                window,
                apex,
                &sched,
                config,
                &mut taken,
                &mut rng,
            )?);
        }
    }

    let mut peaks: Vec<Vec<Peak>> = vec![Vec::new(); sched.n_cycles * sched.scans_per_cycle()];
    for e in &emitters {
        emit(e, sigma, &sched, &mut peaks, &jitter, &mut rng);
    }

    let noise_max = config.noise_level * BASE_INTENSITY;
    let mut spectra = Vec::with_capacity(peaks.len());
    for k in 0..sched.n_cycles {
        for slot in 0..sched.scans_per_cycle() {
            let idx = sched.index(k, slot);
            let mut list = std::mem::take(&mut peaks[idx]);
            let (lo, hi) = if slot == 0 {
                (config.mz_min, config.mz_max)
            } else {
                FRAGMENT_NOISE_RANGE
            };
            if noise_max > 0.0 {
                for _ in 0..config.noise_peaks {
                    list.push(Peak {
                        mz: rng.gen_range(lo..hi),
                        intensity: rng.gen_range(0.0..noise_max),
                    });
                }
            }
            let spectrum = Spectrum {
                ms_level: if slot == 0 { 1 } else { 2 },
                rt_minutes: sched.rt(k, slot),
                isolation_window: (slot > 0).then(|| sched.windows[slot - 1]),
                peaks: list,
            };
            spectra.push(spectrum.normalize(idx)?);
        }
    }

    Ok(SynthesizedRun {
        run: SpectrumRun {
            run_id: format!("synth_{}_{}", config.seed, config.condition),
            spectra,
        },
        truth,
    })
}

/// An unlisted peptide of the same charge eluting near `apex` in `window`.
fn interferer(
    charge: u8,
    window: usize,
    apex: f64,
    sched: &Schedule,
    config: &SynthConfig,
    taken: &mut HashSet<String>,
    rng: &mut impl Rng,
) -> Result<Emitter> {
    let w = sched.windows[window];
    let local = SynthConfig {
        mz_min: w.lower,
        mz_max: w.upper,
        ..config.clone()
    };
    let (peptide, z) = loop {
        let (p, z) = random_entry(rng, &local, taken)?;
        if z == charge {
            break (p, z);
        }
    };
    let mut frags = random_fragments(&peptide, rng)?;
    frags.sort_by(|a, b| b.relative_intensity.total_cmp(&a.relative_intensity));
    frags.truncate(TOP_FRAGMENTS);
    let height = BASE_INTENSITY * (rng.gen::<f64>() * config.dynamic_range.ln()).exp();
    let mono = peptide.precursor_mz(z);
    let shift = rng.gen_range(-2.0..2.0) * config.elution_sigma;
    Ok(Emitter {
        apex: apex + shift,
        window,
        isotopes: isotope_envelope(peptide.neutral_mass())
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    mono + i as f64 * C13_C12 / z as f64,
                    height * config.precursor_scale * r,
                )
            })
            .collect(),
        fragments: frags
            .iter()
            .map(|f| (f.mz, height * f.relative_intensity))
            .collect(),
    })
}

/// Ground-truth sidecar, one JSON record per line.
pub fn write_truth<W: Write>(truth: &[TruthRecord], mut out: W) -> std::io::Result<()> {
    for t in truth {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::super::generate_library;
    use super::*;

    #[test]
    fn windows_tile_the_range() {
        let w = dia_windows(&SynthConfig::default());
        assert_eq!(w.len(), 24);
        assert_eq!(w[0].lower, 400.0);
        assert_eq!(w[23].upper, 1000.0);
        assert!(w.windows(2).all(|p| p[0].upper == p[1].lower));
    }

    #[test]
    fn seeded_runs_repeat() {
        let config = SynthConfig {
            n_peptides: 20,
            gradient_minutes: 6.0,
            ..SynthConfig::default()
        };
        let lib = generate_library(&config).unwrap();
        let planted = plant_targets(&lib, &config);
        let a = synthesize_run(&lib, &planted, &config).unwrap();
        let b = synthesize_run(&lib, &planted, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.len(), 20);
    }

    #[test]
    fn outside_window_is_an_error() {
        let config = SynthConfig {
            n_peptides: 3,
            gradient_minutes: 6.0,
            ..SynthConfig::default()
        };
        let mut lib = generate_library(&config).unwrap();
        lib.entries[1].precursor_mz = 1200.0;
        let planted = plant_targets(&lib, &config);
        assert!(matches!(
            synthesize_run(&lib, &planted, &config),
            Err(SynthError::OutsideWindows { .. })
        ));
    }
}
