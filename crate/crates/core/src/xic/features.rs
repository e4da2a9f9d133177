use super::{PeakGroup, RawTrace, TRACE_SLOTS, XIC_POINTS};

pub type PccMatrix = [[f64; TRACE_SLOTS]; TRACE_SLOTS];

pub const PCC_UPPER_LEN: usize = TRACE_SLOTS * (TRACE_SLOTS - 1) / 2;

fn pearson(a: &[f64; XIC_POINTS], b: &[f64; XIC_POINTS]) -> f64 {
    let n = XIC_POINTS as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

fn is_constant(a: &[f64; XIC_POINTS]) -> bool {
    a.iter().all(|&v| v == a[0])
}

/// Pairwise Pearson correlation of the conditioned intensity traces.
///
/// Padded slots and zero-variance traces correlate 0 with every other trace
/// and 1 with themselves.
pub fn pcc_matrix(pg: &PeakGroup) -> PccMatrix {
    let mask = pg.slot_mask();
    let traces: Vec<&[f64; XIC_POINTS]> = pg.traces().map(|t| &t.intensities).collect();
    let flat: Vec<bool> = traces
        .iter()
        .zip(mask)
        .map(|(t, real)| !real || is_constant(t))
        .collect();
    let mut m = [[0.0; TRACE_SLOTS]; TRACE_SLOTS];
    for i in 0..TRACE_SLOTS {
        m[i][i] = 1.0;
        for j in (i + 1)..TRACE_SLOTS {
            let r = if flat[i] || flat[j] {
                0.0
            } else {
                pearson(traces[i], traces[j])
            };
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    m
}

/// Row-major strict upper triangle (91 values for 14 slots).
pub fn pcc_upper_triangle(m: &PccMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(PCC_UPPER_LEN);
    for (i, row) in m.iter().enumerate() {
        out.extend_from_slice(&row[i + 1..]);
    }
    out
}

/// Trapezoidal area of the raw (unnormalised, unsmoothed) trace in
/// intensity x minutes.
pub fn trace_area(raw: &RawTrace) -> f64 {
    if raw.rts.len() < 2 {
        return 0.0;
    }
    raw.rts
        .windows(2)
        .zip(raw.intensities.windows(2))
        .map(|(t, y)| 0.5 * (y[0] + y[1]) * (t[1] - t[0]))
        .sum()
}
