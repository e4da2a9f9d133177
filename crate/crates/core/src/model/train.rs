use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{total_loss, Ctx, LossBreakdown};
use super::{Example, ModelConfig, ModelError, ModelParameters, Result, TrainingPair};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &ModelConfig) -> f64 {
    if total_steps == 0 {
        return config.lr_max;
    }
    let frac = (step.min(total_steps) as f64) / total_steps as f64;
    config.lr_min
        + 0.5 * (config.lr_max - config.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Batch-mean loss and its gradient with respect to `params.values`.
pub fn loss_and_gradient(batch: &[Example], params: &ModelParameters) -> (LossBreakdown, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut out = LossBreakdown::default();
    if batch.is_empty() {
        return (out, grad);
    }
    let inv = 1.0 / batch.len() as f64;
    for ex in batch {
        let mut ctx = Ctx::new(params, true);
        let (loss, a, b) = ctx.example_loss(ex, inv);
        out.total += ctx.tape.value(loss).scalar();
        out.alignment += a * inv;
        out.bce += b * inv;
        ctx.tape.backward(loss, &mut grad);
    }
    (out, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_alignment: f64,
    pub val_bce: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p -= lr * (update + weight_decay * *p);
        }
    }
}

/// Featurises `pairs` and trains on them.
pub fn train(
    pairs: &[TrainingPair],
    config: &ModelConfig,
) -> Result<(ModelParameters, TrainingHistory)> {
    let examples = pairs
        .iter()
        .map(|p| Example::from_pair(p, config))
        .collect::<Result<Vec<_>>>()?;
    train_examples(examples, config)
}

pub fn train_examples(
    examples: Vec<Example>,
    config: &ModelConfig,
) -> Result<(ModelParameters, TrainingHistory)> {
    config.validate()?;
    let n = examples.len();
    if n < 2 {
        return Err(ModelError::Data(format!("need at least 2 pairs, got {n}")));
    }
    let positives = examples.iter().filter(|e| e.label == 1.0).count();
    if positives == 0 || positives == n {
        return Err(ModelError::Data("both labels must be present".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 1);
    let val: Vec<Example> = order[..n_val]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let mut train_set: Vec<Example> = order[n_val..]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    drop(examples);

    let mut params = ModelParameters::init(config)?;
    let mut best = params.clone();
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;

    let initial_val = total_loss(&val, &params);
    let initial_train = total_loss(&train_set, &params);
    let mut history = TrainingHistory {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss: initial_train.total,
            val_loss: initial_val.total,
            val_alignment: initial_val.alignment,
            val_bce: initial_val.bce,
            lr: lr_at(0, total_steps, config),
        }],
        best_epoch: 0,
        n_train: train_set.len(),
        n_val,
    };
    let mut best_val = initial_val.total;
    log::info!(
        "training on {} pairs ({} validation), {} steps",
        train_set.len(),
        n_val,
        total_steps
    );

    let mut opt = AdamW::new(params.len());
    let mut step = 0;
    for epoch in 1..=config.epochs {
        train_set.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = config.lr_max;
        for batch in train_set.chunks(config.batch_size) {
            let (loss, grad) = loss_and_gradient(batch, &params);
            epoch_loss += loss.total * batch.len() as f64;
            lr = lr_at(step, total_steps, config);
            opt.step(&mut params.values, &grad, lr, config.weight_decay);
            step += 1;
        }
        let v = total_loss(&val, &params);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss: v.total,
            val_alignment: v.alignment,
            val_bce: v.bce,
            lr,
        });
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5}",
            epoch_loss / train_set.len() as f64,
            v.total
        );
        if v.total < best_val {
            best_val = v.total;
            best = params.clone();
            history.best_epoch = epoch;
        }
    }
    Ok((best, history))
}
