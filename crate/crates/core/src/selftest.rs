//! Built-in invariant checks run by `rote selftest`. Every check draws from a
//! fixed-seed generator, so the report is identical from run to run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Mask, Tensor};
use crate::calendar::{decompose_timestamp, TemporalTriplet};
use crate::data::{
    build_sequences, k_core_filter, leave_one_out_split, synth_seasonal, window, Event, Interaction, SynthConfig,
};
use crate::error::Result;
use crate::metrics::{ndcg_at_k, rank_of_target, recall_at_k};
use crate::model::{EncodingMode, Model, ModelConfig};
use crate::profile::{estimate_flops, params_for_config};
use crate::rotary::{apply_rotary, fuse_levels, inverse_frequencies, rotate_half, RoteConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }

    fn from(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(name, passed, detail),
            Err(e) => Check::new(name, false, format!("error: {e}")),
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag}\t{}\t{}", self.name, self.detail)
    }
}

const HEAD_DIMS: [usize; 4] = [2, 4, 32, 64];
const TRIALS_PER_DIM: usize = 250;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn angles(pos: f64, inv: &[f64]) -> Vec<f64> {
    inv.iter().map(|w| pos * w).collect()
}

/// Walks whole years and then whole days from 1970-01-01.
fn day_walk(seconds: i64) -> TemporalTriplet {
    let mut days = seconds / 86_400;
    let total_days = days;
    let leap = |y: i64| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let mut year = 1970;
    loop {
        let len = if leap(year) { 366 } else { 365 };
        if days < len {
            break;
        }
        days -= len;
        year += 1;
    }
    let lens = [31, if leap(year) { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut month = 0;
    while days >= lens[month] {
        days -= lens[month];
        month += 1;
    }
    let y = (year - 1970) as u64;
    TemporalTriplet::new(y, 12 * y + month as u64, total_days as u64)
}

fn calendar_checks(out: &mut Vec<Check>) {
    let anchors = decompose_timestamp(0).ok() == Some(TemporalTriplet::ZERO)
        && decompose_timestamp(31_536_000).ok() == Some(TemporalTriplet::new(1, 12, 365));
    out.push(Check::new("calendar_anchors", anchors, "0 and 31536000".into()));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..1000 {
        let s = rng.random_range(0..=2_000_000_000i64);
        if decompose_timestamp(s).ok() != Some(day_walk(s)) {
            bad += 1;
        }
    }
    out.push(Check::new("calendar_day_walk", bad == 0, format!("mismatches={bad}/1000")));
}

fn rotary_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut e_norm, mut e_shift, mut e_comp, mut e_inv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut spectrum_ok = true;
    let r: Result<()> = (|| {
        for &hd in &HEAD_DIMS {
            let inv = inverse_frequencies(1e4, hd)?;
            let w = inv.as_slice();
            spectrum_ok &= w[0] == 1.0 && w.windows(2).all(|p| p[1] < p[0]);
            for _ in 0..TRIALS_PER_DIM {
                let x = gaussian_vec(&mut rng, hd);
                let y = gaussian_vec(&mut rng, hd);
                let a = rng.random_range(0.0..2e4);
                let b = rng.random_range(0.0..2e4);
                let s = rng.random_range(-1e3..1e3);

                e_norm = e_norm.max(rel(norm(&apply_rotary(&x, &angles(a, w))?), norm(&x)));

                let base = dot(&apply_rotary(&x, &angles(a, w))?, &apply_rotary(&y, &angles(b, w))?);
                let shifted = dot(
                    &apply_rotary(&x, &angles(a + s, w))?,
                    &apply_rotary(&y, &angles(b + s, w))?,
                );
                let scale = norm(&x) * norm(&y);
                e_shift = e_shift.max((base - shifted).abs() / scale.max(1e-12));

                let twice = apply_rotary(&apply_rotary(&x, &angles(a, w))?, &angles(b, w))?;
                e_comp = e_comp.max(vec_rel(&twice, &apply_rotary(&x, &angles(a + b, w))?));

                let back: Vec<f64> = rotate_half(&rotate_half(&x)?)?.iter().map(|v| -v).collect();
                e_inv = e_inv.max(vec_rel(&back, &x));
            }
        }
        Ok(())
    })();
    let trials = HEAD_DIMS.len() * TRIALS_PER_DIM;
    if let Err(e) = r {
        out.push(Check::new("rotary_algebra", false, format!("error: {e}")));
        return;
    }
    out.push(Check::new("rotary_norm", e_norm <= 1e-6, format!("max_rel={e_norm:.3e} trials={trials}")));
    out.push(Check::new("rotary_relative_shift", e_shift <= 1e-6, format!("max_rel={e_shift:.3e} trials={trials}")));
    out.push(Check::new("rotary_composition", e_comp <= 1e-8, format!("max_rel={e_comp:.3e} trials={trials}")));
    out.push(Check::new("rotate_half_involution", e_inv == 0.0, format!("max_rel={e_inv:.3e}")));
    out.push(Check::new("spectrum_shape", spectrum_ok, "leading 1, strictly decreasing".into()));

    let r = (|| -> Result<(bool, String)> {
        let mut worst = 0.0f64;
        let mut gain = 0.0f64;
        for &hd in &HEAD_DIMS {
            let cfg = RoteConfig::with_head_dim(hd);
            for _ in 0..TRIALS_PER_DIM / 5 {
                let x = gaussian_vec(&mut rng, hd);
                let y = gaussian_vec(&mut rng, hd);
                let (p, q) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let ts = rng.random_range(0..2_000_000_000i64);
                let t = decompose_timestamp(ts)?;
                let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| p * a + q * b).collect();
                let lhs = fuse_levels(&mix, t, &cfg)?;
                let fx = fuse_levels(&x, t, &cfg)?;
                let fy = fuse_levels(&y, t, &cfg)?;
                let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| p * a + q * b).collect();
                worst = worst.max(vec_rel(&lhs, &rhs));
                let z = fuse_levels(&x, TemporalTriplet::ZERO, &cfg)?;
                let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
                gain = gain.max(vec_rel(&z, &scaled));
            }
        }
        Ok((
            worst <= 1e-9 && gain <= 1e-12,
            format!("linearity max_rel={worst:.3e} zero_time_gain max_rel={gain:.3e}"),
        ))
    })();
    out.push(Check::from("fuse_levels", r));
}

fn small(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), gaussian_vec(rng, n)).expect("shape matches data")
}

fn autodiff_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (eps, tol) = (1e-3, 1e-4);
    let a = small(&mut rng, &[3, 4]);
    let b = small(&mut rng, &[4, 2]);
    let c = small(&mut rng, &[5, 4]);
    let g = small(&mut rng, &[4]);
    let h = small(&mut rng, &[4]);
    let coeffs = std::rc::Rc::new((0..6).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect::<Vec<_>>());

    let cases: Vec<(&'static str, Result<crate::autodiff::GradCheckReport>)> = vec![
        (
            "matmul",
            grad_check(|t, v| { let m = t.matmul(v[0], v[1])?; let s = t.mul(m, m)?; Ok(t.sum(s)) }, &[a.clone(), b.clone()], eps, tol),
        ),
        (
            "matmul_nt",
            grad_check(|t, v| { let m = t.matmul_nt(v[0], v[1])?; let s = t.mul(m, m)?; Ok(t.sum(s)) }, &[a.clone(), c.clone()], eps, tol),
        ),
        (
            "softmax_causal",
            grad_check(
                |t, v| {
                    let m = t.matmul_nt(v[0], v[0])?;
                    let p = t.softmax(m, &Mask::Causal)?;
                    let w = t.mul(p, m)?;
                    Ok(t.sum(w))
                },
                &[a.clone()],
                eps,
                tol,
            ),
        ),
        (
            "layer_norm",
            grad_check(
                |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    let s = t.mul(y, v[0])?;
                    Ok(t.sum(s))
                },
                &[a.clone(), g.clone(), h.clone()],
                eps,
                tol,
            ),
        ),
        (
            "gelu",
            grad_check(|t, v| { let y = t.gelu(v[0]); let s = t.mul(y, y)?; Ok(t.sum(s)) }, &[a.clone()], eps, tol),
        ),
        (
            "gather_cross_entropy",
            grad_check(
                |t, v| {
                    let e = t.gather(v[0], &[1, 3, 3])?;
                    let l = t.matmul_nt(e, v[0])?;
                    t.cross_entropy(l, &[2, 0, 4])
                },
                &[c.clone()],
                eps,
                tol,
            ),
        ),
        (
            "rotary",
            grad_check(
                |t, v| {
                    let r = t.rotary(v[0], coeffs.clone())?;
                    let s = t.mul(r, v[0])?;
                    let s = t.mul(s, r)?;
                    Ok(t.sum(s))
                },
                &[a.clone()],
                eps,
                tol,
            ),
        ),
    ];
    for (name, r) in cases {
        let passed = matches!(&r, Ok(rep) if rep.passed);
        let detail = match r {
            Ok(rep) => format!("{name} max_rel={:.3e} n={}", rep.max_rel_error, rep.n_checked),
            Err(e) => format!("{name} error: {e}"),
        };
        out.push(Check::new("gradcheck_op", passed, detail));
    }
}

fn toy_events(n: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Event>> {
    let mut ts = 1_500_000_000i64;
    (0..n)
        .map(|_| {
            ts += rng.random_range(3_600..90 * 86_400);
            Event::new(rng.random_range(1..vocab), ts)
        })
        .collect()
}

fn backbone_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in EncodingMode::ALL {
        let r = (|| -> Result<(bool, String)> {
            let mut cfg = ModelConfig::new(7, mode);
            cfg.d_model = 4;
            cfg.n_heads = 1;
            cfg.n_layers = 1;
            cfg.max_len = 4;
            cfg.dropout_rate = 0.0;
            cfg.sync_head_dim();
            let model = Model::init_with_std(cfg, 11, 0.5)?;
            let events = toy_events(4, 7, &mut rng)?;
            let targets: Vec<usize> = (0..3).map(|_| rng.random_range(1..7)).collect();
            let inputs: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
            let rep = grad_check(
                |t, v| {
                    let vars = model.vars_from(v.to_vec())?;
                    let h = model.encode(t, &vars, &events[..3], 1, None, None)?;
                    let l = model.logits_on_tape(t, &vars, h)?;
                    t.cross_entropy(l, &targets)
                },
                &inputs,
                1e-3,
                1e-4,
            )?;
            Ok((rep.passed, format!("{mode} max_rel={:.3e} n={}", rep.max_rel_error, rep.n_checked)))
        })();
        out.push(Check::from("gradcheck_backbone", r));
    }

    let r = (|| -> Result<(bool, String)> {
        let mut cfg = ModelConfig::new(9, EncodingMode::YearMonthDay);
        cfg.max_len = 6;
        cfg.dropout_rate = 0.0;
        let model = Model::init(cfg, 3)?;
        let events = toy_events(6, 9, &mut rng)?;
        let full = model.sequence_logits(&events)?;
        let mut worst = 0.0f64;
        for cut in 1..events.len() {
            let prefix = model.sequence_logits(&events[..cut])?;
            for (i, v) in prefix.data().iter().enumerate() {
                worst = worst.max((v - full.data()[i]).abs());
            }
        }
        Ok((worst <= 1e-12, format!("prefix max_abs={worst:.3e}")))
    })();
    out.push(Check::from("causality", r));
}

fn profile_checks(out: &mut Vec<Check>) {
    let mut ok = true;
    let mut n = 0;
    for vocab in [1, 50, 601] {
        for d in [4, 32, 64] {
            for layers in [0, 1, 3] {
                for max_len in [1, 50] {
                    let mut pe = ModelConfig::new(vocab, EncodingMode::PositionalEmbedding);
                    pe.d_model = d;
                    pe.n_layers = layers;
                    pe.max_len = max_len;
                    let mut ro = pe.clone();
                    ro.mode = EncodingMode::YearMonthDay;
                    ok &= params_for_config(&ro) + max_len * d == params_for_config(&pe);
                    n += 1;
                }
            }
        }
    }
    let built = [EncodingMode::PositionalEmbedding, EncodingMode::YearMonthDay].map(|m| {
        Model::init(ModelConfig::new(100, m), 0).map(|x| x.num_params())
    });
    if let [Ok(pe), Ok(ro)] = built {
        ok &= pe - ro == 50 * 32;
    } else {
        ok = false;
    }
    out.push(Check::new("parameter_law", ok, format!("configs={n}")));

    let rep = estimate_flops(&ModelConfig::new(601, EncodingMode::YearMonthDay));
    let frac = rep.rotary_fraction();
    out.push(Check::new(
        "flop_overhead",
        frac <= 0.03,
        format!("rotary={} total={} fraction={frac:.4}", rep.component("rotary"), rep.total),
    ));
}

fn metric_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for _ in 0..2000 {
        let n = rng.random_range(2..40);
        // a coarse grid forces plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
        let target = rng.random_range(1..n);
        let mut order: Vec<usize> = (1..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let want = order.iter().position(|&i| i == target).map(|p| p + 1);
        if rank_of_target(&scores, target, &[]).ok() != want {
            bad += 1;
        }
    }
    let exact = ndcg_at_k(3, 5) == 0.5 && recall_at_k(5, 5) == 1.0 && recall_at_k(6, 5) == 0.0;
    out.push(Check::new("ranking_oracle", bad == 0 && exact, format!("mismatches={bad}/2000")));
}

fn data_checks(out: &mut Vec<Check>) {
    let r = (|| -> Result<(bool, String)> {
        let syn = synth_seasonal(&SynthConfig {
            n_users: 200,
            n_items: 120,
            seed: 9,
            ..SynthConfig::default()
        })?;
        let kept = k_core_filter(&syn.interactions, 5)?;
        let again = k_core_filter(&kept, 5)?;
        let fixpoint = again == kept && min_counts(&kept) >= 5;
        let ds = build_sequences(&kept)?;
        let mut leak = 0;
        let mut masks = true;
        for s in &ds.sequences {
            let sp = leave_one_out_split(s)?;
            if sp.valid_input().len() + 2 != s.events.len() || sp.test_input().len() + 1 != s.events.len() {
                leak += 1;
            }
            if sp.test_input().last() != Some(&sp.valid) {
                leak += 1;
            }
            let w = window(sp.test_input(), 10);
            let pad = w.padding();
            masks &= w.mask.iter().take(pad).all(|&m| m)
                && w.mask.iter().skip(pad).all(|&m| !m)
                && w.items.iter().take(pad).all(|&i| i == 0)
                && w.items.iter().skip(pad).all(|&i| i >= 1);
        }
        Ok((
            fixpoint && leak == 0 && masks,
            format!("interactions={} users={} leaks={leak}", kept.len(), ds.sequences.len()),
        ))
    })();
    out.push(Check::from("data_pipeline", r));
}

fn min_counts(xs: &[Interaction]) -> usize {
    use std::collections::HashMap;
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    for x in xs {
        *users.entry(&x.user).or_default() += 1;
        *items.entry(&x.item).or_default() += 1;
    }
    users.values().chain(items.values()).copied().min().unwrap_or(usize::MAX)
}

/// Run every check in a fixed order.
pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    calendar_checks(&mut out);
    rotary_checks(&mut out);
    autodiff_checks(&mut out);
    backbone_checks(&mut out);
    profile_checks(&mut out);
    metric_checks(&mut out);
    data_checks(&mut out);
    out
}

pub fn report(checks: &[Check]) -> String {
    let mut s: String = checks.iter().map(|c| c.line() + "\n").collect();
    let failed = checks.iter().filter(|c| !c.passed).count();
    s.push_str(&format!("{} checks, {failed} failed\n", checks.len()));
    s
}
