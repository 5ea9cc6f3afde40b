//! Next-item training with Adam, gradient clipping and early stopping on
//! validation NDCG@10.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{leave_one_out_split, Dataset, Event};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, EvalSplit, RankingMetrics};
use crate::model::Model;
use crate::parallel::map_chunks;

/// Examples per work unit; gradients are summed inside a unit and then
/// across units in order, independent of the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    FullSoftmax,
    /// Target against this many uniformly drawn non-padding items.
    Sampled(usize),
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::FullSoftmax => f.write_str("full"),
            LossKind::Sampled(n) => write!(f, "sampled:{n}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s, "full" | "full_softmax" | "softmax") {
            return Ok(LossKind::FullSoftmax);
        }
        if let Some(n) = s.strip_prefix("sampled:") {
            if let Ok(n) = n.parse::<usize>() {
                if n > 0 {
                    return Ok(LossKind::Sampled(n));
                }
            }
        }
        Err(Error::config(format!("unknown loss '{s}' (full | sampled:N)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub clip_norm: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            loss: LossKind::FullSoftmax,
            clip_norm: 5.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Adam first and second moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        AdamState { m, v, step: 0 }
    }

    pub fn for_model(model: &Model) -> Self {
        AdamState::new(model.params().iter().map(|p| p.tensor.numel()))
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: Vec<&mut [f64]>, grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.into_iter().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::dim(format!("adam_step: tensor {i} size mismatch")));
        }
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Shifted next-item example: predict `targets[p]` after `input[..=p]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<Event>,
    pub targets: Vec<usize>,
}

/// One example per user from the training part of its split, truncated to
/// the most recent `max_len` positions. Users with a single training event
/// contribute nothing.
pub fn training_examples(ds: &Dataset, max_len: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for s in &ds.sequences {
        let train = leave_one_out_split(s)?.train;
        if train.len() < 2 {
            continue;
        }
        let tail = &train[train.len().saturating_sub(max_len + 1)..];
        out.push(Example {
            input: tail[..tail.len() - 1].to_vec(),
            targets: tail[1..].iter().map(|e| e.item).collect(),
        });
    }
    Ok(out)
}

/// Summed loss and gradients of a group of examples. `weight` multiplies
/// every position's cross-entropy.
pub fn batch_gradients(
    model: &Model,
    examples: &[&Example],
    loss: LossKind,
    weight: f64,
    rngs: &mut [ChaCha8Rng],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
    let mut total = 0.0;
    let max_len = model.config().max_len;
    let vocab = model.config().vocab_size;
    for (ex, rng) in examples.iter().zip(rngs.iter_mut()) {
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let slot = max_len - ex.input.len();
        let h = model.encode(&mut tape, &vars, &ex.input, slot, Some(rng), None)?;
        let l = match loss {
            LossKind::FullSoftmax => {
                let logits = model.logits_on_tape(&mut tape, &vars, h)?;
                tape.cross_entropy_weighted(logits, &ex.targets, Some(0), weight)?
            }
            LossKind::Sampled(n) => {
                let groups = n + 1;
                let mut ids = Vec::with_capacity(ex.targets.len() * groups);
                for &t in &ex.targets {
                    ids.push(t);
                    for _ in 0..n {
                        ids.push(rng.random_range(1..vocab.max(2)));
                    }
                }
                let cand = tape.gather(vars.all()[0], &ids)?;
                let logits = tape.group_dot(h, cand, groups)?;
                tape.cross_entropy_weighted(logits, &vec![0; ex.targets.len()], None, weight)?
            }
        };
        total += tape.scalar(l);
        let g = tape.backward(l)?;
        for (acc, &v) in grads.iter_mut().zip(vars.all()) {
            if let Some(gv) = g.get(v) {
                acc.iter_mut().zip(gv).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: RankingMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Not part of the TSV so that reports stay byte-reproducible.
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tvalid_recall@5\tvalid_recall@10\tvalid_ndcg@5\tvalid_ndcg@10\tbest\n");
        let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\n",
                e.epoch,
                e.train_loss,
                f(e.valid.recall_at(5)),
                f(e.valid.recall_at(10)),
                f(e.valid.ndcg_at(5)),
                f(e.valid.ndcg_at(10)),
                u8::from(e.epoch == self.best_epoch)
            ));
        }
        s
    }
}

pub fn train(model: Model, ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with(model, ds, cfg, |_| {})
}

/// Like [`train`], calling `progress` after every epoch.
pub fn train_with<F: FnMut(&EpochRecord)>(
    mut model: Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if ds.vocab_size() != model.config().vocab_size {
        return Err(Error::Mismatch {
            what: "vocab_size",
            expected: model.config().vocab_size.to_string(),
            found: ds.vocab_size().to_string(),
        });
    }
    let examples = training_examples(ds, model.config().max_len)?;
    if examples.is_empty() {
        return Err(Error::Domain("no user has two or more training events".into()));
    }
    let started = Instant::now();
    let eval_opts = EvalOptions {
        threads: cfg.threads,
        ..Default::default()
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut adam = AdamState::for_model(&model);
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_improved = 0;
    let mut drawn: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut positions = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let n_pos: usize = idx.iter().map(|&i| examples[i].targets.len()).sum();
            let weight = 1.0 / n_pos as f64;
            let jobs: Vec<(usize, u64)> = idx
                .iter()
                .enumerate()
                .map(|(j, &i)| (i, drawn + j as u64))
                .collect();
            drawn += idx.len() as u64;
            let parts = map_chunks(&jobs, GRAD_CHUNK, cfg.threads, |chunk| {
                let exs: Vec<&Example> = chunk.iter().map(|&(i, _)| &examples[i]).collect();
                let mut rngs: Vec<ChaCha8Rng> = chunk
                    .iter()
                    .map(|&(_, stream)| {
                        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
                        r.set_stream(stream);
                        r
                    })
                    .collect();
                batch_gradients(&model, &exs, cfg.loss, weight, &mut rngs)
            });
            let mut grads: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for part in parts {
                let (l, g) = part?;
                batch_loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y)),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            let d = model.config().d_model;
            grads[0][..d].fill(0.0);
            clip_global_norm(&mut grads, cfg.clip_norm);
            let params: Vec<&mut [f64]> = model.param_tensors_mut().map(|t| t.data_mut()).collect();
            adam_step(params, &grads, &mut adam, cfg)?;
            model.zero_padding_row();
            loss_sum += batch_loss * n_pos as f64;
            positions += n_pos;
        }
        let valid = evaluate(&model, ds, EvalSplit::Valid, &eval_opts)?;
        let ndcg = valid.ndcg_at(10).unwrap_or(0.0);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / positions as f64,
            valid,
        };
        progress(&record);
        records.push(record);
        match &best {
            Some((b, _, _)) if ndcg < *b => since_improved += 1,
            Some((b, _, _)) => {
                if ndcg > *b {
                    since_improved = 0;
                } else {
                    since_improved += 1;
                }
                best = Some((ndcg, epoch, model.clone()));
            }
            None => best = Some((ndcg, epoch, model.clone())),
        }
        if cfg.patience > 0 && since_improved >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainReport {
            epochs: records,
            best_epoch,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}
