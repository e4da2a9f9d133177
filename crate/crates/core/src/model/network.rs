use crate::library::PrecursorEntry;
use crate::xic::{PRECURSOR_TRACES, TRACE_SLOTS};

use super::params::{Attention, DecoderLayer, EncoderLayer, Linear, Norm, T};
use super::tape::{Mat, Tape, Var};
use super::{tokenize, Example, ModelInput, ModelParameters, Result, SPECTRUM_FEATURES};

/// Row `pos` of the sinusoidal position table.
fn positional_row(pos: usize, d: usize, out: &mut [f64]) {
    for i in 0..d / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = (pos as f64 * freq).sin();
        out[2 * i + 1] = (pos as f64 * freq).cos();
    }
    if d % 2 == 1 {
        let freq = 1.0 / 10_000f64.powf((d - 1) as f64 / d as f64);
        out[d - 1] = (pos as f64 * freq).sin();
    }
}

fn positions(slots: impl Iterator<Item = usize>, d: usize) -> Mat {
    let mut data = Vec::new();
    let mut rows = 0;
    for pos in slots {
        let start = data.len();
        data.resize(start + d, 0.0);
        positional_row(pos, d, &mut data[start..]);
        rows += 1;
    }
    Mat::from_vec(rows, d, data)
}

/// Spectrum-encoder key mask: precursor and fragment branches followed by
/// the group branch, each masked by slot.
fn spectrum_mask(slot_mask: &[bool; TRACE_SLOTS]) -> Vec<bool> {
    slot_mask.iter().chain(slot_mask.iter()).copied().collect()
}

pub(crate) struct Ctx<'a> {
    pub tape: Tape,
    params: &'a ModelParameters,
    cache: Vec<Option<Var>>,
    track: bool,
}

/// Tape handles of one candidate's forward pass.
pub(crate) struct Nodes {
    pub cosine: Var,
    pub score: Var,
    pub degenerate: bool,
    pub precursor: Var,
    pub spectrum: Var,
}

impl<'a> Ctx<'a> {
    /// `track` records parameters as differentiable leaves.
    pub fn new(params: &'a ModelParameters, track: bool) -> Self {
        Self {
            tape: Tape::new(),
            params,
            cache: vec![None; params.specs.len()],
            track,
        }
    }

    fn p(&mut self, t: T) -> Var {
        if let Some(v) = self.cache[t.0] {
            return v;
        }
        let (spec, data) = self.params.slice(t);
        let m = Mat::from_vec(spec.rows, spec.cols, data.to_vec());
        let v = if self.track {
            self.tape.param(m, spec.offset)
        } else {
            self.tape.constant(m)
        };
        self.cache[t.0] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, l: Linear) -> Var {
        let w = self.p(l.w);
        let y = self.tape.matmul(x, w);
        match l.b {
            Some(b) => {
                let b = self.p(b);
                self.tape.add_row(y, b)
            }
            None => y,
        }
    }

    fn norm(&mut self, x: Var, n: Norm) -> Var {
        let g = self.p(n.gain);
        let b = self.p(n.bias);
        self.tape.layer_norm(x, g, b)
    }

    fn attention(&mut self, a: &Attention, xq: Var, xkv: Var, mask: Option<&[bool]>) -> Var {
        let c = &self.params.config;
        let (heads, dh) = (c.n_heads, c.dim_model / c.n_heads);
        let q = self.linear(xq, a.q);
        let k = self.linear(xkv, a.k);
        let v = self.linear(xkv, a.v);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.cols(q, h * dh, dh);
            let kh = self.tape.cols(k, h * dh, dh);
            let vh = self.tape.cols(v, h * dh, dh);
            let s = self.tape.matmul_t(qh, kh);
            let s = self.tape.scale(s, scale);
            let w = self.tape.softmax_rows(s, mask);
            outs.push(self.tape.matmul(w, vh));
        }
        let o = if heads == 1 {
            outs[0]
        } else {
            self.tape.concat_cols(&outs)
        };
        self.linear(o, a.o)
    }

    fn feed_forward(&mut self, x: Var, ff1: Linear, ff2: Linear) -> Var {
        let h = self.linear(x, ff1);
        let h = self.tape.gelu(h);
        self.linear(h, ff2)
    }

    fn encoder_layer(&mut self, l: &EncoderLayer, x: Var, mask: Option<&[bool]>) -> Var {
        let h = self.norm(x, l.ln_attn);
        let a = self.attention(&l.attn, h, h, mask);
        let x = self.tape.add(x, a);
        let h = self.norm(x, l.ln_ffn);
        let f = self.feed_forward(h, l.ff1, l.ff2);
        self.tape.add(x, f)
    }

    fn decoder_layer(&mut self, l: &DecoderLayer, x: Var, memory: Var, mask: &[bool]) -> Var {
        let h = self.norm(x, l.ln_self);
        let a = self.attention(&l.self_attn, h, h, None);
        let x = self.tape.add(x, a);
        let h = self.norm(x, l.ln_cross);
        let a = self.attention(&l.cross_attn, h, memory, Some(mask));
        let x = self.tape.add(x, a);
        let h = self.norm(x, l.ln_ffn);
        let f = self.feed_forward(h, l.ff1, l.ff2);
        self.tape.add(x, f)
    }

    /// Per-token features, `(len + 2) x d`.
    pub fn precursor(&mut self, tokens: &[usize]) -> Var {
        let arch = self.params.arch.clone();
        let d = self.params.config.dim_model;
        let table = self.p(arch.token_embedding);
        let emb = self.tape.gather_rows(table, tokens);
        let pe = self.tape.constant(positions(0..tokens.len(), d));
        let mut x = self.tape.add(emb, pe);
        for l in &arch.precursor_layers {
            x = self.encoder_layer(l, x, None);
        }
        self.norm(x, arch.precursor_norm)
    }

    /// Per-trace features, `28 x d`: precursor branch (4 rows), fragment
    /// branch (10 rows), then the group branch over all 14 slots.
    pub fn spectrum(&mut self, input: &ModelInput) -> Var {
        let arch = self.params.arch.clone();
        let d = self.params.config.dim_model;
        let split = PRECURSOR_TRACES * SPECTRUM_FEATURES;
        let pre = self.tape.constant(Mat::from_vec(
            PRECURSOR_TRACES,
            SPECTRUM_FEATURES,
            input.traces[..split].to_vec(),
        ));
        let frag = self.tape.constant(Mat::from_vec(
            TRACE_SLOTS - PRECURSOR_TRACES,
            SPECTRUM_FEATURES,
            input.traces[split..].to_vec(),
        ));
        let all = self.tape.constant(Mat::from_vec(
            TRACE_SLOTS,
            SPECTRUM_FEATURES,
            input.traces.clone(),
        ));
        let bp = self.linear(pre, arch.branch_precursor);
        let bf = self.linear(frag, arch.branch_fragment);
        let bg = self.linear(all, arch.branch_group);
        let marker = self.p(arch.group_marker);
        let bg = self.tape.add_row(bg, marker);
        let x = self.tape.concat_rows(&[bp, bf, bg]);
        let pe = self
            .tape
            .constant(positions((0..TRACE_SLOTS).chain(0..TRACE_SLOTS), d));
        let mut x = self.tape.add(x, pe);
        let mask = spectrum_mask(&input.slot_mask);
        for l in &arch.spectrum_layers {
            x = self.encoder_layer(l, x, Some(&mask));
        }
        self.norm(x, arch.spectrum_norm)
    }

    /// Masked mean over real trace rows.
    pub fn pool_spectrum(&mut self, per_trace: Var, slot_mask: &[bool; TRACE_SLOTS]) -> Var {
        let mask = spectrum_mask(slot_mask);
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let w = mask
            .iter()
            .map(|&m| if m { 1.0 / n } else { 0.0 })
            .collect();
        let pool = self.tape.constant(Mat::from_vec(1, mask.len(), w));
        self.tape.matmul(pool, per_trace)
    }

    pub fn decode(
        &mut self,
        per_token: Var,
        per_trace: Var,
        slot_mask: &[bool; TRACE_SLOTS],
        pcc: &[f64],
    ) -> Var {
        let arch = self.params.arch.clone();
        let mask = spectrum_mask(slot_mask);
        let mut x = per_token;
        for l in &arch.decoder_layers {
            x = self.decoder_layer(l, x, per_trace, &mask);
        }
        let x = self.norm(x, arch.decoder_norm);
        let decoded = self.tape.row(x, 0);

        let pc = self
            .tape
            .constant(Mat::from_vec(1, pcc.len(), pcc.to_vec()));
        let z = self.feed_forward(pc, arch.pcc1, arch.pcc2);
        let fused = self.tape.add(decoded, z);
        let logit = self.feed_forward(fused, arch.head1, arch.head2);
        self.tape.sigmoid(logit)
    }

    pub fn forward(&mut self, input: &ModelInput) -> Nodes {
        let per_token = self.precursor(&input.tokens);
        let precursor = self.tape.row(per_token, 0);
        let per_trace = self.spectrum(input);
        let spectrum = self.pool_spectrum(per_trace, &input.slot_mask);
        let (cosine, degenerate) = self.tape.cosine(precursor, spectrum);
        let score = self.decode(per_token, per_trace, &input.slot_mask, &input.pcc);
        Nodes {
            cosine,
            score,
            degenerate,
            precursor,
            spectrum,
        }
    }

    /// Adds `(w_align * align + w_bce * bce) * weight` for one example and
    /// returns (loss node, alignment term, bce term).
    pub fn example_loss(&mut self, ex: &Example, weight: f64) -> (Var, f64, f64) {
        let c = &self.params.config;
        let (wa, wb, margin) = (c.loss_weights.alignment, c.loss_weights.bce, c.margin);
        let n = self.forward(&ex.input);
        let align = self.tape.alignment(n.cosine, ex.label, margin);
        let bce = self.tape.bce(n.score, ex.label);
        let loss = self
            .tape
            .weighted_sum(&[(align, wa * weight), (bce, wb * weight)]);
        let a = self.tape.value(align).scalar();
        let b = self.tape.value(bce).scalar();
        (loss, a, b)
    }
}

/// Summary-token embedding and per-token features of a precursor.
pub fn encode_precursor(
    entry: &PrecursorEntry,
    params: &ModelParameters,
) -> Result<(Vec<f64>, Mat)> {
    let tokens = tokenize(entry, params.config.max_seq_len)?;
    let mut ctx = Ctx::new(params, false);
    let per_token = ctx.precursor(&tokens);
    let m = ctx.tape.value(per_token).clone();
    Ok((m.row(0).to_vec(), m))
}

/// Masked-mean embedding and per-trace features of a conditioned group.
pub fn encode_spectrum(input: &ModelInput, params: &ModelParameters) -> (Vec<f64>, Mat) {
    let mut ctx = Ctx::new(params, false);
    let per_trace = ctx.spectrum(input);
    let pooled = ctx.pool_spectrum(per_trace, &input.slot_mask);
    (
        ctx.tape.value(pooled).data.clone(),
        ctx.tape.value(per_trace).clone(),
    )
}

/// Score from already-encoded features.
pub fn decode_score(
    per_token: &Mat,
    per_trace: &Mat,
    slot_mask: &[bool; TRACE_SLOTS],
    pcc: &[f64],
    params: &ModelParameters,
) -> f64 {
    let mut ctx = Ctx::new(params, false);
    let t = ctx.tape.constant(per_token.clone());
    let s = ctx.tape.constant(per_trace.clone());
    let out = ctx.decode(t, s, slot_mask, pcc);
    ctx.tape.value(out).scalar()
}

/// Everything one forward pass produces for a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub precursor_embedding: Vec<f64>,
    pub spectrum_embedding: Vec<f64>,
    pub cosine: f64,
    /// Either embedding had zero norm; `cosine` is then 0.
    pub degenerate: bool,
    pub score: f64,
}

pub fn forward(input: &ModelInput, params: &ModelParameters) -> Forward {
    let mut ctx = Ctx::new(params, false);
    let n = ctx.forward(input);
    let t = &ctx.tape;
    Forward {
        precursor_embedding: t.value(n.precursor).data.clone(),
        spectrum_embedding: t.value(n.spectrum).data.clone(),
        cosine: t.value(n.cosine).scalar(),
        degenerate: n.degenerate,
        score: t.value(n.score).scalar(),
    }
}

/// Candidate score, kept strictly inside (0, 1) even when the sigmoid
/// saturates in floating point.
pub fn score(input: &ModelInput, params: &ModelParameters) -> f64 {
    let mut ctx = Ctx::new(params, false);
    let per_token = ctx.precursor(&input.tokens);
    let per_trace = ctx.spectrum(input);
    let s = ctx.decode(per_token, per_trace, &input.slot_mask, &input.pcc);
    ctx.tape
        .value(s)
        .scalar()
        .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Mean of `y (1 - cos) + (1 - y) max(0, cos - margin)` over the batch.
/// Zero-norm embeddings count as cosine 0.
pub fn alignment_loss(p: &[Vec<f64>], s: &[Vec<f64>], labels: &[f64], margin: f64) -> f64 {
    assert!(
        p.len() == s.len() && p.len() == labels.len(),
        "batch shapes differ"
    );
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .iter()
        .zip(s)
        .zip(labels)
        .map(|((a, b), &y)| {
            let mut tape = Tape::new();
            let va = tape.constant(Mat::from_vec(1, a.len(), a.clone()));
            let vb = tape.constant(Mat::from_vec(1, b.len(), b.clone()));
            let (c, _) = tape.cosine(va, vb);
            let l = tape.alignment(c, y, margin);
            tape.value(l).scalar()
        })
        .sum();
    total / p.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `w_align * alignment + w_bce * bce`
    pub total: f64,
    pub alignment: f64,
    pub bce: f64,
}

/// Unweighted (alignment, bce) terms of one example.
pub(crate) fn example_terms(ex: &Example, params: &ModelParameters) -> (f64, f64) {
    let mut ctx = Ctx::new(params, false);
    let (_, a, b) = ctx.example_loss(ex, 1.0);
    (a, b)
}

/// Batch-mean loss without gradients.
pub fn total_loss(batch: &[Example], params: &ModelParameters) -> LossBreakdown {
    if batch.is_empty() {
        return LossBreakdown::default();
    }
    let inv = 1.0 / batch.len() as f64;
    let mut out = LossBreakdown::default();
    for ex in batch {
        let mut ctx = Ctx::new(params, false);
        let (loss, a, b) = ctx.example_loss(ex, inv);
        out.total += ctx.tape.value(loss).scalar();
        out.alignment += a * inv;
        out.bce += b * inv;
    }
    out
}
