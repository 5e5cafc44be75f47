//! Decoder-only transformer behavioral policy.
//!
//! A [`PolicyModel`] maps a token prefix to a distribution over the next
//! token. Action sets are decoded autoregressively in ascending token
//! order and closed by `SEP`, so a model trained on order-set pairs
//! estimates the next-action-set policy one token at a time.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{OrderSetPair, Token, BOS, PAD, SEP};
use crate::scalar::Scalar;
use crate::seeding::{domain, stream};
use crate::tensor::{self, Tape, Tensor, TensorError, Var};

pub const INIT_SD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;
pub const FINETUNE_LR_FACTOR: f64 = 0.1;
const FORMAT: &str = "lcbm-decoder-v1";

#[derive(Debug, Error)]
pub enum LcbmError {
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("non-finite loss at step {step} (batch encounters {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<u64> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHyperparams {
    /// Attention heads.
    pub h: usize,
    /// Per-head width.
    pub m: usize,
    /// Embedding width, `h * m`.
    pub d: usize,
    /// Feed-forward hidden width.
    pub r: usize,
    pub layers: usize,
    pub context: usize,
    pub vocab_size: usize,
}

impl ModelHyperparams {
    /// Desk-scale defaults for a given vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        ModelHyperparams { h: 4, m: 16, d: 64, r: 128, layers: 2, context: 64, vocab_size }
    }

    pub fn validate(&self) -> Result<(), LcbmError> {
        let all_positive = [self.h, self.m, self.d, self.r, self.layers, self.vocab_size].iter().all(|&x| x > 0);
        if !all_positive {
            return Err(LcbmError::Config(format!("all sizes must be positive: {self:?}")));
        }
        if self.d != self.h * self.m {
            return Err(LcbmError::Config(format!("d={} but h*m={}", self.d, self.h * self.m)));
        }
        if self.context < 2 {
            return Err(LcbmError::Config(format!("context={} must be at least 2", self.context)));
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (d, r, v) = (self.d, self.r, self.vocab_size);
        let attention = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let ffn = d * r + r + r * d + d;
        v * d + self.layers * (attention + norms + ffn) + 2 * d + d * v + v
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, r, v) = (self.d, self.r, self.vocab_size);
        let mut out = vec![("tok_embed".to_string(), vec![v, d])];
        for b in 0..self.layers {
            let p = |n: &str| format!("block{b}.{n}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.bq"), vec![d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.bk"), vec![d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.bv"), vec![d]),
                (p("attn.wo"), vec![d, d]),
                (p("attn.bo"), vec![d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.w1"), vec![d, r]),
                (p("ffn.b1"), vec![r]),
                (p("ffn.w2"), vec![r, d]),
                (p("ffn.b2"), vec![d]),
            ]);
        }
        out.extend([
            ("ln_f.gamma".to_string(), vec![d]),
            ("ln_f.beta".to_string(), vec![d]),
            ("out.w".to_string(), vec![d, v]),
            ("out.b".to_string(), vec![v]),
        ]);
        out
    }
}

const PER_BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.1, batch_size: 16, epochs: 10, seed: 0, mode: TrainMode::Pretrain }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LcbmError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LcbmError::Config(format!("learning_rate={} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(LcbmError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Fine-tuning counterpart: same schedule, learning rate scaled down.
    pub fn for_finetune(&self) -> Self {
        TrainConfig { learning_rate: self.learning_rate * FINETUNE_LR_FACTOR, mode: TrainMode::Finetune, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Greedy,
    Ancestral,
}

fn sinusoidal<T: Scalar>(context: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(context * d);
    for pos in 0..context {
        for i in 0..d {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            data.push(T::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![context, d], data).expect("positional table shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel<T: Scalar> {
    hp: ModelHyperparams,
    params: Vec<Tensor<T>>,
    pos: Tensor<T>,
}

impl<T: Scalar> PolicyModel<T> {
    /// Gaussian init with sd [`INIT_SD`]; biases zero, norms identity.
    pub fn init(hp: ModelHyperparams, seed: u64) -> Result<Self, LcbmError> {
        Self::init_scaled(hp, seed, INIT_SD)
    }

    /// [`PolicyModel::init`] with a custom weight scale.
    pub fn init_scaled(hp: ModelHyperparams, seed: u64, sd: f64) -> Result<Self, LcbmError> {
        hp.validate()?;
        let mut rng = stream(seed, domain::INIT, 0);
        let params = hp
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with("gamma") {
                    vec![T::one(); n]
                } else if shape.len() == 1 {
                    vec![T::zero(); n]
                } else {
                    (0..n).map(|_| T::from_f64_lossy(sd * rng.sample::<f64, _>(StandardNormal))).collect()
                };
                Tensor::new(shape, data).expect("layout shape").with_grad()
            })
            .collect();
        Ok(PolicyModel { hp, params, pos: sinusoidal(hp.context, hp.d) })
    }

    pub fn hyperparams(&self) -> &ModelHyperparams {
        &self.hp
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.hp.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    /// Same architecture with new weights; shapes must match the layout.
    pub fn with_params(&self, params: Vec<Tensor<T>>) -> Result<Self, LcbmError> {
        check_layout(&self.hp, params.iter().map(|p| p.shape().to_vec()))?;
        let params = params.into_iter().map(Tensor::with_grad).collect();
        Ok(PolicyModel { hp: self.hp, params, pos: self.pos.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> PolicyModel<U> {
        PolicyModel {
            hp: self.hp,
            params: self.params.iter().map(|p| p.cast()).collect(),
            pos: self.pos.cast(),
        }
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<(), LcbmError> {
        if tokens.is_empty() {
            return Err(LcbmError::Usage("empty token sequence".into()));
        }
        if tokens.len() > self.hp.context {
            return Err(LcbmError::Usage(format!("sequence of {} tokens exceeds context {}", tokens.len(), self.hp.context)));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.hp.vocab_size) {
            return Err(LcbmError::Usage(format!("token {t} outside vocabulary of {}", self.hp.vocab_size)));
        }
        Ok(())
    }

    /// Logits `[tokens.len(), vocab]` built on `tape` from parameter vars in
    /// layout order.
    pub fn logits_on<'a>(&self, tape: &mut Tape<'a, T>, vars: &[Var], tokens: &[Token]) -> Result<Var, LcbmError> {
        self.check_tokens(tokens)?;
        let hp = &self.hp;
        let n = tokens.len();
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let emb = tape.embedding(vars[0], &ids)?;
        let pos = Tensor::new(vec![n, hp.d], self.pos.data()[..n * hp.d].to_vec())?;
        let pos = tape.constant(pos);
        let mut x = tape.add(emb, pos)?;

        let mut mask = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                mask.data_mut()[i * n + j] = T::neg_infinity();
            }
        }
        let mask = tape.constant(mask);
        let eps = T::from_f64_lossy(LN_EPS);
        let inv_sqrt_m = T::from_f64_lossy(1.0 / (hp.m as f64).sqrt());

        let affine = |tape: &mut Tape<'a, T>, x: Var, g: Var, b: Var| -> Result<Var, TensorError> {
            let ln = tape.layer_norm(x, 1, eps)?;
            let scaled = tape.mul_row(ln, g)?;
            tape.add_row(scaled, b)
        };
        let linear = |tape: &mut Tape<'a, T>, x: Var, w: Var, b: Var| -> Result<Var, TensorError> {
            let y = tape.matmul(x, w)?;
            tape.add_row(y, b)
        };

        for b in 0..hp.layers {
            let p = &vars[1 + b * PER_BLOCK..1 + (b + 1) * PER_BLOCK];
            let a = affine(tape, x, p[0], p[1])?;
            let q = linear(tape, a, p[2], p[3])?;
            let k = linear(tape, a, p[4], p[5])?;
            let v = linear(tape, a, p[6], p[7])?;
            let mut heads = Vec::with_capacity(hp.h);
            for head in 0..hp.h {
                let qh = tape.slice(q, 1, head * hp.m, hp.m)?;
                let kh = tape.slice(k, 1, head * hp.m, hp.m)?;
                let vh = tape.slice(v, 1, head * hp.m, hp.m)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, inv_sqrt_m);
                let scores = tape.add(scores, mask)?;
                let attn = tape.softmax(scores, 1)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let cat = tape.concat(&heads, 1)?;
            let o = linear(tape, cat, p[8], p[9])?;
            x = tape.add(x, o)?;

            let f = affine(tape, x, p[10], p[11])?;
            let f = linear(tape, f, p[12], p[13])?;
            let f = tape.gelu(f);
            let f = linear(tape, f, p[14], p[15])?;
            x = tape.add(x, f)?;
        }
        let tail = 1 + hp.layers * PER_BLOCK;
        let x = affine(tape, x, vars[tail], vars[tail + 1])?;
        Ok(linear(tape, x, vars[tail + 2], vars[tail + 3])?)
    }

    fn leaves<'a>(&'a self, tape: &mut Tape<'a, T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    /// Logits at every position of `tokens`.
    pub fn logits(&self, tokens: &[Token]) -> Result<Tensor<T>, LcbmError> {
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let out = self.logits_on(&mut tape, &vars, tokens)?;
        Ok(tape.value(out).clone())
    }

    /// Next-token distribution after `prefix`, over the full vocabulary.
    pub fn next_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>, LcbmError> {
        let logits = self.logits(prefix)?;
        let v = self.hp.vocab_size;
        let last: Vec<f64> = logits.data()[(prefix.len() - 1) * v..].iter().map(|x| x.to_f64_lossy()).collect();
        let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = last.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / total).collect())
    }

    /// [`PolicyModel::next_distribution`] over many prefixes, in parallel.
    pub fn next_distributions(&self, prefixes: &[&[Token]]) -> Result<Vec<Vec<f64>>, LcbmError> {
        prefixes.par_iter().map(|p| self.next_distribution(p)).collect()
    }

    /// Token-summed cross-entropy of a pair on `tape`, with its token count.
    pub fn pair_loss_on<'a>(&self, tape: &mut Tape<'a, T>, vars: &[Var], pair: &OrderSetPair) -> Result<(Var, usize), LcbmError> {
        let (inputs, targets) = teacher_forcing(pair, self.hp.context)?;
        let logits = self.logits_on(tape, vars, &inputs)?;
        let first = inputs.len() - targets.len();
        let rows = tape.slice(logits, 0, first, targets.len())?;
        let ids: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        let mean = tape.cross_entropy(rows, &ids)?;
        let total = tape.scale(mean, T::from_count(targets.len()));
        Ok((total, targets.len()))
    }

    /// Token-mean cross-entropy over `pairs`.
    pub fn mean_loss(&self, pairs: &[OrderSetPair]) -> Result<f64, LcbmError> {
        let parts: Vec<(f64, usize)> = pairs
            .par_iter()
            .map(|p| {
                let mut tape = Tape::new();
                let vars = self.leaves(&mut tape);
                let (loss, n) = self.pair_loss_on(&mut tape, &vars, p)?;
                Ok((tape.value(loss).item().to_f64_lossy(), n))
            })
            .collect::<Result<_, LcbmError>>()?;
        let (sum, n) = parts.iter().fold((0.0, 0), |(s, c), (l, k)| (s + l, c + k));
        if n == 0 {
            return Err(LcbmError::Usage("no pairs to score".into()));
        }
        Ok(sum / n as f64)
    }

    /// Loss sum, token count and per-parameter gradients of one pair.
    fn pair_gradients(&self, pair: &OrderSetPair) -> Result<(f64, usize, Vec<Tensor<T>>), LcbmError> {
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let (loss, n) = self.pair_loss_on(&mut tape, &vars, pair)?;
        let mut grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((tape.value(loss).item().to_f64_lossy(), n, g))
    }

    /// One SGD step on a batch. Returns the pre-update loss sum and token count.
    fn sgd_step(&mut self, batch: &[&OrderSetPair], lr: f64, step: usize) -> Result<(f64, usize), LcbmError> {
        let parts: Vec<(f64, usize, Vec<Tensor<T>>)> =
            batch.par_iter().map(|p| self.pair_gradients(p)).collect::<Result<_, _>>()?;
        let mut loss = 0.0;
        let mut count = 0;
        let mut total: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        for (l, n, grads) in parts {
            loss += l;
            count += n;
            for (acc, g) in total.iter_mut().zip(grads) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
        }
        let finite = loss.is_finite() && total.iter().all(Tensor::all_finite);
        if !finite {
            return Err(LcbmError::NonFiniteLoss { step, batch: batch.iter().map(|p| p.encounter_id).collect() });
        }
        let scale = T::from_f64_lossy(lr / count as f64);
        for (p, g) in self.params.iter_mut().zip(&total) {
            p.data_mut().iter_mut().zip(g.data()).for_each(|(w, &d)| *w -= scale * d);
        }
        Ok((loss, count))
    }

    fn validate_pairs(&self, pairs: &[OrderSetPair]) -> Result<(), LcbmError> {
        for p in pairs {
            if p.target.is_empty() {
                return Err(LcbmError::Usage(format!("encounter {} has an empty target", p.encounter_id)));
            }
            let max = p.prefix.iter().chain(&p.target).copied().max().unwrap_or(0);
            if max as usize >= self.hp.vocab_size {
                return Err(LcbmError::Usage(format!(
                    "encounter {}: token {max} outside vocabulary of {}",
                    p.encounter_id, self.hp.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Plain SGD over shuffled mini-batches. Returns the token-mean training
    /// loss of each epoch, measured before each batch's update.
    pub fn fit(&mut self, pairs: &[OrderSetPair], cfg: &TrainConfig) -> Result<Vec<f64>, LcbmError> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(LcbmError::Usage("no training pairs".into()));
        }
        self.validate_pairs(pairs)?;
        let mut trace = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            order.sort_unstable();
            order.shuffle(&mut stream(cfg.seed, domain::SHUFFLE, epoch as u64));
            let (mut loss, mut count) = (0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&OrderSetPair> = chunk.iter().map(|&i| &pairs[i]).collect();
                let (l, n) = self.sgd_step(&batch, cfg.learning_rate, step)?;
                loss += l;
                count += n;
                step += 1;
            }
            trace.push(loss / count as f64);
        }
        Ok(trace)
    }

    /// Greedy or seeded ancestral decoding of up to `z` tokens after
    /// `prefix`. `PAD` and `BOS` are never emitted; decoding stops after a
    /// `SEP`, which is kept as the last token.
    pub fn sample_action_path(&self, prefix: &[Token], z: usize, mode: SampleMode, seed: u64) -> Result<Vec<Token>, LcbmError> {
        if z == 0 {
            return Err(LcbmError::Usage("z must be at least 1".into()));
        }
        let mut rng = stream(seed, domain::SAMPLE, 0);
        let mut seq = prefix.to_vec();
        let mut out = Vec::with_capacity(z);
        while out.len() < z {
            let start = seq.len().saturating_sub(self.hp.context);
            let mut dist = self.next_distribution(&seq[start..])?;
            dist[PAD as usize] = 0.0;
            dist[BOS as usize] = 0.0;
            let token = match mode {
                SampleMode::Greedy => argmax(&dist),
                SampleMode::Ancestral => {
                    let total: f64 = dist.iter().sum();
                    let u = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = argmax(&dist);
                    for (i, &p) in dist.iter().enumerate() {
                        acc += p;
                        if p > 0.0 && u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            } as Token;
            out.push(token);
            seq.push(token);
            if token == SEP {
                break;
            }
        }
        Ok(out)
    }

    /// Writes `manifest.json` and `weights.bin` (little-endian `f32`).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), LcbmError> {
        let names = self.param_names();
        let entries: Vec<(&str, &Tensor<T>)> = names.iter().map(String::as_str).zip(&self.params).collect();
        let meta = serde_json::json!({ "format": FORMAT, "hyperparams": self.hp });
        tensor::save_tensors(dir, &entries, meta)?;
        Ok(())
    }

    /// Loads a checkpoint, checking every tensor against the layout implied
    /// by the stored hyperparameters.
    pub fn load_checkpoint(dir: &Path) -> Result<Self, LcbmError> {
        let (meta, tensors) = tensor::load_tensors::<T>(dir).map_err(|e| LcbmError::Checkpoint(e.to_string()))?;
        if meta["format"] != FORMAT {
            return Err(LcbmError::Checkpoint(format!("unknown format {}", meta["format"])));
        }
        let hp: ModelHyperparams = serde_json::from_value(meta["hyperparams"].clone())
            .map_err(|e| LcbmError::Checkpoint(format!("hyperparams: {e}")))?;
        hp.validate().map_err(|e| LcbmError::Checkpoint(e.to_string()))?;
        let layout = hp.layout();
        if layout.len() != tensors.len() {
            return Err(LcbmError::Checkpoint(format!("expected {} tensors, found {}", layout.len(), tensors.len())));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(LcbmError::Checkpoint(format!(
                    "tensor {got_name} {:?} does not match {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(PolicyModel {
            hp,
            params: tensors.into_iter().map(|(_, t)| t.with_grad()).collect(),
            pos: sinusoidal(hp.context, hp.d),
        })
    }
}

fn check_layout(hp: &ModelHyperparams, shapes: impl Iterator<Item = Vec<usize>>) -> Result<(), LcbmError> {
    let expected: Vec<Vec<usize>> = hp.layout().into_iter().map(|(_, s)| s).collect();
    let got: Vec<Vec<usize>> = shapes.collect();
    if expected != got {
        return Err(LcbmError::Config(format!("parameter shapes {got:?} do not match layout {expected:?}")));
    }
    Ok(())
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Input tokens and next-token targets for one pair: the model reads
/// `prefix ++ target` and predicts each target token and the closing `SEP`
/// from the last prefix position on. Over-long inputs keep their most
/// recent tokens.
pub fn teacher_forcing(pair: &OrderSetPair, context: usize) -> Result<(Vec<Token>, Vec<Token>), LcbmError> {
    if pair.prefix.is_empty() || pair.target.is_empty() {
        return Err(LcbmError::Usage(format!("encounter {}: empty prefix or target", pair.encounter_id)));
    }
    let mut seq = pair.prefix.clone();
    seq.extend_from_slice(&pair.target);
    seq.push(SEP);
    let n_pred = pair.target.len() + 1;
    let inputs_full = &seq[..seq.len() - 1];
    let start = inputs_full.len().saturating_sub(context);
    let inputs = inputs_full[start..].to_vec();
    let n_pred = n_pred.min(inputs.len());
    let targets = seq[seq.len() - n_pred..].to_vec();
    Ok((inputs, targets))
}

/// Fresh model trained on `pairs`.
pub fn train<T: Scalar>(model: &PolicyModel<T>, pairs: &[OrderSetPair], cfg: &TrainConfig) -> Result<(PolicyModel<T>, Vec<f64>), LcbmError> {
    let mut out = model.clone();
    let trace = out.fit(pairs, cfg)?;
    Ok((out, trace))
}

/// Provider-specific copy of `pretrained` trained on one provider's pairs.
/// An empty set returns the pretrained weights unchanged.
pub fn finetune<T: Scalar>(
    pretrained: &PolicyModel<T>,
    pairs_j: &[OrderSetPair],
    cfg: &TrainConfig,
) -> Result<(PolicyModel<T>, Vec<f64>), LcbmError> {
    if let Some(first) = pairs_j.first() {
        if let Some(other) = pairs_j.iter().find(|p| p.provider != first.provider) {
            return Err(LcbmError::Usage(format!(
                "fine-tuning pairs mix providers {} and {}",
                first.provider, other.provider
            )));
        }
    } else {
        return Ok((pretrained.clone(), Vec::new()));
    }
    train(pretrained, pairs_j, cfg)
}
