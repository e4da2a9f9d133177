use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Result, SPECTRUM_FEATURES, VOCAB_SIZE};
use crate::xic::PCC_UPPER_LEN;

/// Name and shape of one parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// `U(-1/sqrt(rows), 1/sqrt(rows))`
    FanIn,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct T(pub usize);

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: T,
    pub b: Option<T>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: T,
    pub bias: T,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    pub ln_attn: Norm,
    pub attn: Attention,
    pub ln_ffn: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderLayer {
    pub ln_self: Norm,
    pub self_attn: Attention,
    pub ln_cross: Norm,
    pub cross_attn: Attention,
    pub ln_ffn: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Typed handles into the tensor list.
#[derive(Debug, Clone)]
pub(crate) struct Architecture {
    pub token_embedding: T,
    pub precursor_layers: Vec<EncoderLayer>,
    pub precursor_norm: Norm,
    pub branch_precursor: Linear,
    pub branch_fragment: Linear,
    pub branch_group: Linear,
    pub group_marker: T,
    pub spectrum_layers: Vec<EncoderLayer>,
    pub spectrum_norm: Norm,
    pub decoder_layers: Vec<DecoderLayer>,
    pub decoder_norm: Norm,
    pub pcc1: Linear,
    pub pcc2: Linear,
    pub head1: Linear,
    pub head2: Linear,
}

struct Builder {
    specs: Vec<TensorSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> T {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            offset: self.total,
        });
        self.inits.push(init);
        self.total += rows * cols;
        T(self.specs.len() - 1)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.weight"), fan_in, fan_out, Init::FanIn),
            b: Some(self.tensor(format!("{name}.bias"), 1, fan_out, Init::Zeros)),
        }
    }

    fn linear_no_bias(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.weight"), fan_in, fan_out, Init::FanIn),
            b: None,
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.tensor(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.tensor(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            // a key bias shifts every score in a row equally, so softmax
            // ignores it and its gradient is identically zero
            k: self.linear_no_bias(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn encoder_layer(&mut self, name: &str, c: &ModelConfig) -> EncoderLayer {
        let d = c.dim_model;
        EncoderLayer {
            ln_attn: self.norm(&format!("{name}.ln_attn"), d),
            attn: self.attention(&format!("{name}.attn"), d),
            ln_ffn: self.norm(&format!("{name}.ln_ffn"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, c.ffn_width),
            ff2: self.linear(&format!("{name}.ff2"), c.ffn_width, d),
        }
    }

    fn decoder_layer(&mut self, name: &str, c: &ModelConfig) -> DecoderLayer {
        let d = c.dim_model;
        DecoderLayer {
            ln_self: self.norm(&format!("{name}.ln_self"), d),
            self_attn: self.attention(&format!("{name}.self_attn"), d),
            ln_cross: self.norm(&format!("{name}.ln_cross"), d),
            cross_attn: self.attention(&format!("{name}.cross_attn"), d),
            ln_ffn: self.norm(&format!("{name}.ln_ffn"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, c.ffn_width),
            ff2: self.linear(&format!("{name}.ff2"), c.ffn_width, d),
        }
    }
}

fn build(config: &ModelConfig) -> (Architecture, Builder) {
    let d = config.dim_model;
    let mut b = Builder {
        specs: Vec::new(),
        inits: Vec::new(),
        total: 0,
    };
    // embeddings have fan-in 1, so FanIn gives U(-1, 1)
    let token_embedding = b.tensor(
        "precursor.token_embedding".into(),
        VOCAB_SIZE,
        d,
        Init::FanIn,
    );
    let precursor_layers = (0..config.n_encoder_layers)
        .map(|i| b.encoder_layer(&format!("precursor.layer{i}"), config))
        .collect();
    let precursor_norm = b.norm("precursor.norm", d);
    let branch_precursor = b.linear("spectrum.branch_precursor", SPECTRUM_FEATURES, d);
    let branch_fragment = b.linear("spectrum.branch_fragment", SPECTRUM_FEATURES, d);
    let branch_group = b.linear("spectrum.branch_group", SPECTRUM_FEATURES, d);
    let group_marker = b.tensor("spectrum.group_marker".into(), 1, d, Init::FanIn);
    let spectrum_layers = (0..config.n_encoder_layers)
        .map(|i| b.encoder_layer(&format!("spectrum.layer{i}"), config))
        .collect();
    let spectrum_norm = b.norm("spectrum.norm", d);
    let decoder_layers = (0..config.n_decoder_layers)
        .map(|i| b.decoder_layer(&format!("decoder.layer{i}"), config))
        .collect();
    let decoder_norm = b.norm("decoder.norm", d);
    let pcc1 = b.linear("pcc.fc1", PCC_UPPER_LEN, d);
    let pcc2 = b.linear("pcc.fc2", d, d);
    let head1 = b.linear("head.fc1", d, d);
    let head2 = b.linear("head.fc2", d, 1);
    let arch = Architecture {
        token_embedding,
        precursor_layers,
        precursor_norm,
        branch_precursor,
        branch_fragment,
        branch_group,
        group_marker,
        spectrum_layers,
        spectrum_norm,
        decoder_layers,
        decoder_norm,
        pcc1,
        pcc2,
        head1,
        head2,
    };
    (arch, b)
}

/// Every trainable weight of the network, stored as one flat vector.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub specs: Vec<TensorSpec>,
    pub values: Vec<f64>,
    pub(crate) arch: Architecture,
}

impl PartialEq for ModelParameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.specs == other.specs && self.values == other.values
    }
}

impl ModelParameters {
    /// Fresh parameters drawn from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (arch, b) = build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = Vec::with_capacity(b.total);
        for (spec, init) in b.specs.iter().zip(&b.inits) {
            match init {
                Init::Zeros => values.extend(std::iter::repeat(0.0).take(spec.len())),
                Init::Ones => values.extend(std::iter::repeat(1.0).take(spec.len())),
                Init::FanIn => {
                    let bound = 1.0 / (spec.rows as f64).sqrt();
                    values.extend((0..spec.len()).map(|_| rng.gen_range(-bound..bound)));
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            specs: b.specs,
            values,
            arch,
        })
    }

    /// Rebuilds parameters from named arrays, checking them against the
    /// layout implied by `config`.
    pub fn from_named(config: &ModelConfig, arrays: Vec<(String, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        let (arch, b) = build(config);
        if arrays.len() != b.specs.len() {
            return Err(ModelError::Layout(format!(
                "expected {} tensors, found {}",
                b.specs.len(),
                arrays.len()
            )));
        }
        let mut values = Vec::with_capacity(b.total);
        for (spec, (name, data)) in b.specs.iter().zip(arrays) {
            if spec.name != name || spec.len() != data.len() {
                return Err(ModelError::Layout(format!(
                    "tensor {name} ({} values) does not match {} ({}x{})",
                    data.len(),
                    spec.name,
                    spec.rows,
                    spec.cols
                )));
            }
            values.extend(data);
        }
        Ok(Self {
            config: config.clone(),
            specs: b.specs,
            values,
            arch,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.spec(name)?.range();
        Some(&mut self.values[range])
    }

    pub(crate) fn slice(&self, t: T) -> (&TensorSpec, &[f64]) {
        let spec = &self.specs[t.0];
        (spec, &self.values[spec.range()])
    }
}
