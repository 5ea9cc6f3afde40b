//! Parameter counts, analytic FLOP estimates and forward latency.

use std::time::Instant;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

/// Printed with every FLOP report.
pub const FLOP_CONVENTION: &str = "multiply-add = 2 FLOPs; elementwise add/mul/exp/sin/cos = 1 FLOP; \
one batch row at max_len; dense (unmasked) attention; rotary = levels*4*d_model + fusion adds per \
position per layer, sin/cos tabulated once per forward";

// Per-element costs of the non-matmul pieces.
const LAYER_NORM_PER_ELEM: u64 = 8;
const SOFTMAX_PER_ELEM: u64 = 5;
const GELU_PER_ELEM: u64 = 8;

pub fn count_params(model: &Model) -> usize {
    model.num_params()
}

/// Parameter count implied by a config alone.
pub fn params_for_config(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let per_layer = 4 * (d * d + d) + 2 * (d * d + d) + 2 * 2 * d;
    let positional = if cfg.mode.is_rotary() { 0 } else { cfg.max_len * d };
    cfg.vocab_size * d + positional + cfg.n_layers * per_layer + 2 * d
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    /// Named components in forward order; they sum to `total`.
    pub breakdown: Vec<(&'static str, u64)>,
    pub total: u64,
}

impl FlopReport {
    pub fn component(&self, name: &str) -> u64 {
        self.breakdown.iter().filter(|(n, _)| *n == name).map(|(_, v)| v).sum()
    }

    /// Rotary share of the total.
    pub fn rotary_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.component("rotary") as f64 / self.total as f64
        }
    }
}

/// Analytic FLOPs of one forward pass over a full `max_len` row.
pub fn estimate_flops(cfg: &ModelConfig) -> FlopReport {
    let l = cfg.max_len as u64;
    let d = cfg.d_model as u64;
    let h = cfg.n_heads as u64;
    let v = cfg.vocab_size as u64;
    let levels = cfg.mode.active_levels() as u64;
    let hd = cfg.head_dim() as u64;
    let mut b: Vec<(&'static str, u64)> = Vec::new();

    let mut embed = l * d;
    if !cfg.mode.is_rotary() {
        embed += l * d;
    }
    b.push(("embedding", embed));
    if levels > 0 {
        // angle products plus one sin and one cos per pair and level
        b.push(("rotary", l * levels * (hd / 2) * 3));
    }
    for _ in 0..cfg.n_layers {
        b.push(("layer_norm", LAYER_NORM_PER_ELEM * l * d));
        b.push(("qkv_projection", 3 * (2 * l * d * d + l * d)));
        if levels > 0 {
            let rotations = levels * 4 * d;
            let fusion = 2 * (levels - 1) * d;
            b.push(("rotary", l * (rotations + fusion)));
        }
        b.push(("attention_scores", 2 * l * l * d + h * l * l));
        b.push(("softmax", SOFTMAX_PER_ELEM * h * l * l));
        b.push(("attention_context", 2 * l * l * d));
        b.push(("output_projection", 2 * l * d * d + l * d + l * d));
        b.push(("layer_norm", LAYER_NORM_PER_ELEM * l * d));
        b.push(("ffn", 2 * (2 * l * d * d + l * d) + GELU_PER_ELEM * l * d + l * d));
    }
    b.push(("layer_norm", LAYER_NORM_PER_ELEM * l * d));
    b.push(("scoring", 2 * l * v * d));
    let total = b.iter().map(|(_, x)| x).sum();
    FlopReport { breakdown: b, total }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub reps: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Wall-clock milliseconds per `forward` after `warmup` untimed calls.
pub fn measure_latency(model: &Model, batch: &SequenceBatch, warmup: usize, reps: usize) -> Result<LatencyStats> {
    if reps < 10 {
        return Err(Error::config(format!("latency needs at least 10 repetitions, got {reps}")));
    }
    for _ in 0..warmup {
        model.forward(batch)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let out = model.forward(batch)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean_ms = times.iter().sum::<f64>() / reps as f64;
    times.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        mean_ms,
        p50_ms: percentile(&times, 0.5),
        p95_ms: percentile(&times, 0.95),
        reps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub method: String,
    pub params: usize,
    pub flops: u64,
    pub latency: Option<LatencyStats>,
}

impl EfficiencyReport {
    pub const TSV_HEADER: &'static str = "method\tparams\tflops\tlatency_ms_p50";

    pub fn tsv_row(&self) -> String {
        let lat = self.latency.map_or("NA".to_string(), |l| format!("{:.4}", l.p50_ms));
        format!("{}\t{}\t{}\t{}\n", self.method, self.params, self.flops, lat)
    }
}

/// TSV table with the counting convention as a leading comment.
pub fn efficiency_tsv(rows: &[EfficiencyReport]) -> String {
    let mut s = format!("# {FLOP_CONVENTION}\n{}\n", EfficiencyReport::TSV_HEADER);
    for r in rows {
        s.push_str(&r.tsv_row());
    }
    s
}
