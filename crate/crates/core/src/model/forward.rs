use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::params::LAYER_PARAMS;
use super::{Model, LAYER_NORM_EPS};
use crate::autodiff::{Mask, Tape, Tensor, Var};
use crate::data::{Event, SequenceBatch};
use crate::error::{Error, Result};

// Offsets inside one layer's parameter block.
const ATTN_NORM_GAIN: usize = 0;
const ATTN_NORM_BIAS: usize = 1;
const W_Q: usize = 2;
const B_Q: usize = 3;
const W_K: usize = 4;
const B_K: usize = 5;
const W_V: usize = 6;
const B_V: usize = 7;
const W_O: usize = 8;
const B_O: usize = 9;
const FFN_NORM_GAIN: usize = 10;
const FFN_NORM_BIAS: usize = 11;
const FFN_W1: usize = 12;
const FFN_B1: usize = 13;
const FFN_W2: usize = 14;
const FFN_B2: usize = 15;

/// Tape handles for every parameter, parallel to [`Model::params`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    vars: Vec<Var>,
    layer_offset: usize,
    positional: bool,
}

impl ModelVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    fn item_embedding(&self) -> Var {
        self.vars[0]
    }

    fn position_embedding(&self) -> Option<Var> {
        self.positional.then(|| self.vars[1])
    }

    fn layer(&self, l: usize, k: usize) -> Var {
        self.vars[self.layer_offset + l * LAYER_PARAMS + k]
    }

    fn final_norm(&self) -> (Var, Var) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }
}

/// Collects pre-softmax attention logits, indexed `[layer][head]`.
#[derive(Debug, Clone, Default)]
pub struct AttentionProbe {
    pub scores: Vec<Vec<Tensor>>,
}

impl Model {
    /// Register every parameter as a trainable leaf borrowing model storage.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p>) -> ModelVars {
        ModelVars {
            vars: self.params().iter().map(|p| tape.param(&p.tensor)).collect(),
            layer_offset: self.layer_offset(),
            positional: !self.config().mode.is_rotary(),
        }
    }

    /// Wrap externally created leaves, one per parameter in [`Model::params`]
    /// order, so the forward pass can run over arbitrary tensors.
    pub fn vars_from(&self, vars: Vec<Var>) -> Result<ModelVars> {
        if vars.len() != self.params().len() {
            return Err(Error::Mismatch {
                what: "parameter count",
                expected: self.params().len().to_string(),
                found: vars.len().to_string(),
            });
        }
        Ok(ModelVars {
            vars,
            layer_offset: self.layer_offset(),
            positional: !self.config().mode.is_rotary(),
        })
    }

    /// Per-pair rotary coefficients for a run of events, rows concatenated.
    pub fn rotary_table(&self, events: &[Event]) -> Result<Option<Rc<Vec<[f64; 2]>>>> {
        let Some(fused) = self.rotary() else {
            return Ok(None);
        };
        let mode = self.config().mode;
        let mut table = Vec::with_capacity(events.len() * fused.head_dim() / 2);
        for e in events {
            table.extend(fused.coefficients(&mode.level_values(e.time, e.ts))?);
        }
        Ok(Some(Rc::new(table)))
    }

    /// Hidden states `[len, d_model]` for the non-padding tail of a window.
    ///
    /// `first_slot` is the window position of `events[0]`; with left padding it
    /// is `max_len - events.len()`. Padding slots are never materialized, which
    /// is exactly equivalent to masking them out as keys. Dropout is active
    /// only when `rng` is given.
    pub fn encode<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &ModelVars,
        events: &[Event],
        first_slot: usize,
        mut rng: Option<&mut ChaCha8Rng>,
        mut probe: Option<&mut AttentionProbe>,
    ) -> Result<Var> {
        let cfg = self.config();
        let len = events.len();
        if len == 0 {
            return Err(Error::dim("cannot encode an empty sequence"));
        }
        if first_slot + len > cfg.max_len {
            return Err(Error::dim(format!(
                "{len} events from slot {first_slot} exceed max_len {}",
                cfg.max_len
            )));
        }
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let rate = cfg.dropout_rate;
        let mut dropout = |tape: &mut Tape<'p>, v: Var| -> Result<Var> {
            match rng.as_deref_mut() {
                Some(r) => tape.dropout(v, rate, r),
                None => Ok(v),
            }
        };

        let ids: Vec<usize> = events.iter().map(|e| e.item).collect();
        let emb = tape.gather(vars.item_embedding(), &ids)?;
        let mut x = tape.scale(emb, (d as f64).sqrt());
        if let Some(pos) = vars.position_embedding() {
            let slots: Vec<usize> = (first_slot..first_slot + len).collect();
            let p = tape.gather(pos, &slots)?;
            x = tape.add(x, p)?;
        }
        x = dropout(tape, x)?;

        let table = self.rotary_table(events)?;
        let inv_sqrt = 1.0 / (hd as f64).sqrt();

        for l in 0..cfg.n_layers {
            let h = tape.layer_norm(
                x,
                vars.layer(l, ATTN_NORM_GAIN),
                vars.layer(l, ATTN_NORM_BIAS),
                LAYER_NORM_EPS,
            )?;
            let proj = |tape: &mut Tape<'p>, w: usize, b: usize| -> Result<Var> {
                let m = tape.matmul(h, vars.layer(l, w))?;
                tape.add_row(m, vars.layer(l, b))
            };
            let q = proj(tape, W_Q, B_Q)?;
            let k = proj(tape, W_K, B_K)?;
            let v = proj(tape, W_V, B_V)?;

            let mut layer_scores = Vec::new();
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let mut qh = tape.slice_cols(q, head * hd, hd)?;
                let mut kh = tape.slice_cols(k, head * hd, hd)?;
                let vh = tape.slice_cols(v, head * hd, hd)?;
                if let Some(t) = &table {
                    qh = tape.rotary(qh, Rc::clone(t))?;
                    kh = tape.rotary(kh, Rc::clone(t))?;
                }
                let raw = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(raw, inv_sqrt);
                if probe.is_some() {
                    layer_scores.push(tape.tensor(scores));
                }
                let attn = tape.softmax(scores, &Mask::Causal)?;
                let attn = dropout(tape, attn)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            if let Some(p) = probe.as_deref_mut() {
                p.scores.push(layer_scores);
            }
            let ctx = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let o = tape.matmul(ctx, vars.layer(l, W_O))?;
            let o = tape.add_row(o, vars.layer(l, B_O))?;
            let o = dropout(tape, o)?;
            x = tape.add(x, o)?;

            let h2 = tape.layer_norm(
                x,
                vars.layer(l, FFN_NORM_GAIN),
                vars.layer(l, FFN_NORM_BIAS),
                LAYER_NORM_EPS,
            )?;
            let f = tape.matmul(h2, vars.layer(l, FFN_W1))?;
            let f = tape.add_row(f, vars.layer(l, FFN_B1))?;
            let f = tape.gelu(f);
            let f = dropout(tape, f)?;
            let f = tape.matmul(f, vars.layer(l, FFN_W2))?;
            let f = tape.add_row(f, vars.layer(l, FFN_B2))?;
            let f = dropout(tape, f)?;
            x = tape.add(x, f)?;
        }
        let (g, b) = vars.final_norm();
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    /// Scores against every item embedding row, `[len, vocab]`.
    pub fn logits_on_tape(&self, tape: &mut Tape<'_>, vars: &ModelVars, hidden: Var) -> Result<Var> {
        tape.matmul_nt(hidden, vars.item_embedding())
    }

    /// Most recent `max_len` events and the window slot of the first one.
    pub fn window<'e>(&self, events: &'e [Event]) -> (&'e [Event], usize) {
        let max_len = self.config().max_len;
        let tail = &events[events.len().saturating_sub(max_len)..];
        (tail, max_len - tail.len())
    }

    /// Logits `[len, vocab]` at every position of a history (last `max_len`
    /// events), without dropout.
    pub fn sequence_logits(&self, events: &[Event]) -> Result<Tensor> {
        let (tail, slot) = self.window(events);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let h = self.encode(&mut tape, &vars, tail, slot, None, None)?;
        let logits = self.logits_on_tape(&mut tape, &vars, h)?;
        Ok(tape.tensor(logits))
    }

    /// Final-position hidden state for a history, without dropout.
    pub fn final_hidden(&self, events: &[Event]) -> Result<Vec<f64>> {
        let (tail, slot) = self.window(events);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let h = self.encode(&mut tape, &vars, tail, slot, None, None)?;
        let d = self.config().d_model;
        let v = tape.value(h);
        Ok(v[v.len() - d..].to_vec())
    }

    /// Dot product with every item row; the padding id scores `-inf`.
    pub fn score_items(&self, hidden: &[f64]) -> Vec<f64> {
        let table = self.item_embedding();
        let mut scores: Vec<f64> = (0..table.rows())
            .map(|i| crate::autodiff::dot(hidden, table.row(i)))
            .collect();
        scores[0] = f64::NEG_INFINITY;
        scores
    }

    /// Scores for the item following `history`.
    pub fn score_next(&self, history: &[Event]) -> Result<Vec<f64>> {
        Ok(self.score_items(&self.final_hidden(history)?))
    }

    /// Pre-softmax attention logits for every layer and head.
    pub fn attention_scores(&self, events: &[Event]) -> Result<AttentionProbe> {
        let (tail, slot) = self.window(events);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let mut probe = AttentionProbe::default();
        self.encode(&mut tape, &vars, tail, slot, None, Some(&mut probe))?;
        Ok(probe)
    }

    /// Logits `[batch, max_len, vocab]`; padding slots are left at zero.
    pub fn forward(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let cfg = self.config();
        if batch.max_len != cfg.max_len {
            return Err(Error::Mismatch {
                what: "max_len",
                expected: cfg.max_len.to_string(),
                found: batch.max_len.to_string(),
            });
        }
        let needs_time = cfg.mode.is_rotary();
        if needs_time && (batch.triplets.is_none() || batch.timestamps.is_none()) {
            return Err(Error::config(format!(
                "mode {} needs per-position timestamps and triplets",
                cfg.mode
            )));
        }
        let v = cfg.vocab_size;
        let mut out = vec![0.0; batch.rows() * cfg.max_len * v];
        for r in 0..batch.rows() {
            let events = batch.row_events(r)?;
            if events.is_empty() {
                continue;
            }
            let slot = cfg.max_len - events.len();
            let mut tape = Tape::new();
            let vars = self.register(&mut tape);
            let h = self.encode(&mut tape, &vars, &events, slot, None, None)?;
            let logits = self.logits_on_tape(&mut tape, &vars, h)?;
            let base = (r * cfg.max_len + slot) * v;
            out[base..base + events.len() * v].copy_from_slice(tape.value(logits));
        }
        Tensor::new(vec![batch.rows(), cfg.max_len, v], out)
    }
}
