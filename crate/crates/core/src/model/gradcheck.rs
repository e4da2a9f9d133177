use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::example_terms;
use super::train::loss_and_gradient;
use super::{Example, ModelParameters};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index of the worst entry.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Every analytic gradient entry was finite.
    pub finite: bool,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.finite && self.max_rel_error < tolerance
    }
}

/// Compares the backpropagated gradient of the batch loss with central
/// differences on `n_samples` parameters drawn with `seed`.
pub fn gradient_check(
    params: &ModelParameters,
    batch: &[Example],
    n_samples: usize,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, params.len(), n_samples.min(params.len())).into_vec();
    indices.sort_unstable();
    let (_, analytic) = loss_and_gradient(batch, params);
    gradient_check_with(params, batch, &indices, &analytic)
}

/// Like [`gradient_check`] but against a caller-supplied gradient and index
/// set.
pub fn gradient_check_with(
    params: &ModelParameters,
    batch: &[Example],
    indices: &[usize],
    analytic: &[f64],
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: indices.len(),
        max_rel_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        finite: analytic.iter().all(|g| g.is_finite()),
    };
    let w = params.config.loss_weights;
    let inv = if batch.is_empty() {
        0.0
    } else {
        1.0 / batch.len() as f64
    };
    let mut probe = params.clone();
    for &i in indices {
        let orig = probe.values[i];
        probe.values[i] = orig + FD_STEP;
        let up = terms(batch, &probe);
        probe.values[i] = orig - FD_STEP;
        let down = terms(batch, &probe);
        probe.values[i] = orig;
        // difference each term before summing so that rounding of the
        // O(1) totals does not swamp small derivatives
        let diff: f64 = up
            .iter()
            .zip(&down)
            .map(|(u, d)| (w.alignment * (u.0 - d.0) + w.bce * (u.1 - d.1)) * inv)
            .sum();
        let numeric = diff / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}

fn terms(batch: &[Example], params: &ModelParameters) -> Vec<(f64, f64)> {
    batch.iter().map(|ex| example_terms(ex, params)).collect()
}
