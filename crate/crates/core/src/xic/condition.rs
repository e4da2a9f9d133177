use super::{ExtractionConfig, PeakGroup, XIC_POINTS};

/// Resamples `(rts, values)` onto 12 equally spaced times spanning the first
/// and last RT, by linear interpolation. Endpoints are reproduced exactly.
pub fn interpolate_uniform(rts: &[f64], values: &[f64]) -> [f64; XIC_POINTS] {
    debug_assert_eq!(rts.len(), values.len());
    let mut out = [0.0; XIC_POINTS];
    match values.len() {
        0 => return out,
        1 => return [values[0]; XIC_POINTS],
        _ => {}
    }
    let first = rts[0];
    let last = rts[rts.len() - 1];
    let span = last - first;
    out[0] = values[0];
    out[XIC_POINTS - 1] = values[values.len() - 1];
    if span <= 0.0 {
        out.iter_mut().for_each(|v| *v = values[0]);
        return out;
    }
    let mut seg = 0;
    for (k, slot) in out.iter_mut().enumerate().take(XIC_POINTS - 1).skip(1) {
        let t = first + span * k as f64 / (XIC_POINTS - 1) as f64;
        while seg + 2 < rts.len() && rts[seg + 1] < t {
            seg += 1;
        }
        let (t0, t1) = (rts[seg], rts[seg + 1]);
        let (y0, y1) = (values[seg], values[seg + 1]);
        *slot = if t1 > t0 {
            y0 + (y1 - y0) * ((t - t0) / (t1 - t0))
        } else {
            y1
        };
    }
    out
}

/// Normalised discrete Gaussian over `taps` samples centred on zero.
pub fn gaussian_kernel(sigma: f64, taps: usize) -> Vec<f64> {
    if sigma <= 0.0 || taps <= 1 {
        return vec![1.0];
    }
    let half = (taps / 2) as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Convolves with `kernel`; at the edges the truncated kernel is
/// renormalised to unit sum.
pub fn smooth(values: &[f64; XIC_POINTS], kernel: &[f64]) -> [f64; XIC_POINTS] {
    if kernel.len() <= 1 {
        return *values;
    }
    let half = (kernel.len() / 2) as isize;
    let mut out = [0.0; XIC_POINTS];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut weight = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let j = i as isize + k as isize - half;
            if (0..XIC_POINTS as isize).contains(&j) {
                acc += w * values[j as usize];
                weight += w;
            }
        }
        *slot = acc / weight;
    }
    out
}

/// Interpolate, smooth, then normalise the whole group by its largest
/// conditioned intensity. ppm-error traces are interpolated and clamped, not
/// smoothed. Padded fragment slots stay all-zero and do not take part in the
/// normalisation.
pub fn condition_peak_group(pg: &PeakGroup, config: &ExtractionConfig) -> PeakGroup {
    let kernel = gaussian_kernel(config.smoothing_sigma, config.smoothing_taps);
    let tol = config.ppm_tolerance;
    let mask = pg.slot_mask();
    let mut out = pg.clone();

    for (trace, real) in out.traces_mut().zip(mask) {
        if !real {
            trace.intensities = [0.0; XIC_POINTS];
            trace.ppm_errors = [0.0; XIC_POINTS];
            continue;
        }
        let resampled = interpolate_uniform(&trace.raw.rts, &trace.raw.intensities);
        trace.intensities = smooth(&resampled, &kernel);
        let ppm = interpolate_uniform(&trace.raw.rts, &trace.raw.ppm_errors);
        trace.ppm_errors = ppm.map(|e| e.clamp(-tol, tol));
    }

    let max = out
        .traces()
        .zip(mask)
        .filter(|(_, real)| *real)
        .flat_map(|(t, _)| t.intensities)
        .fold(0.0f64, f64::max);
    out.empty = !(max > 0.0);
    let scale = if out.empty { 1.0 } else { max };
    for trace in out.traces_mut() {
        trace.intensities = trace.intensities.map(|v| v / scale);
    }
    out.conditioned = true;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_weights() {
        let k = gaussian_kernel(1.0, 5);
        let raw = [0.135_335, 0.606_531, 1.0, 0.606_531, 0.135_335];
        let total: f64 = raw.iter().sum();
        for (a, b) in k.iter().zip(raw) {
            assert_abs_diff_eq!(*a, b / total, epsilon = 1e-6);
        }
    }

    #[test]
    fn impulse_center() {
        let mut x = [0.0; XIC_POINTS];
        x[6] = 1.0;
        let y = smooth(&x, &gaussian_kernel(1.0, 5));
        assert_abs_diff_eq!(y[6], 0.40262, epsilon = 1e-4);
        let sum: f64 = y.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_without_smoothing() {
        let rts: Vec<f64> = (0..XIC_POINTS).map(|i| i as f64 * 0.5).collect();
        let vals: Vec<f64> = (0..XIC_POINTS).map(|i| (i * i) as f64).collect();
        let r = interpolate_uniform(&rts, &vals);
        for (a, b) in r.iter().zip(&vals) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
        assert_eq!(smooth(&r, &gaussian_kernel(0.0, 5)), r);
    }

    #[test]
    fn edge_renormalisation_keeps_constants() {
        let x = [3.0; XIC_POINTS];
        let y = smooth(&x, &gaussian_kernel(1.0, 5));
        for v in y {
            assert_abs_diff_eq!(v, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints_exact() {
        let rts = [0.1, 0.37, 0.52, 0.9, 1.3];
        let vals = [0.3, 5.0, 2.0, 9.0, 0.7];
        let r = interpolate_uniform(&rts, &vals);
        assert_eq!(r[0], 0.3);
        assert_eq!(r[XIC_POINTS - 1], 0.7);
    }
}
