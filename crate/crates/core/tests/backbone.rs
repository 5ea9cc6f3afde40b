use rote::calendar::{days_from_civil, TemporalTriplet};
use rote::data::{Event, SequenceBatch};
use rote::model::{EncodingMode, Model, ModelConfig};
use rote::Error;

const SEC_PER_DAY: i64 = 86_400;

fn config(vocab: usize, mode: EncodingMode) -> ModelConfig {
    let mut c = ModelConfig::new(vocab, mode);
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.max_len = 6;
    c.dropout_rate = 0.0;
    c.sync_head_dim();
    c
}

fn model(mode: EncodingMode, seed: u64) -> Model {
    Model::init_with_std(config(11, mode), seed, 0.4).unwrap()
}

fn ts_of(y: i64, m: u32, d: u32) -> i64 {
    days_from_civil(y, m, d) * SEC_PER_DAY + 3_600
}

fn history() -> Vec<Event> {
    [
        (3, ts_of(2003, 2, 11)),
        (7, ts_of(2008, 12, 30)),
        (1, ts_of(2009, 1, 2)),
        (10, ts_of(2015, 6, 1)),
    ]
    .into_iter()
    .map(|(i, t)| Event::new(i, t).unwrap())
    .collect()
}

// ---------- independent loop reference ----------

type Mat = Vec<Vec<f64>>;

fn mat(m: &Model, name: &str) -> Mat {
    let t = m.param(name).unwrap_or_else(|| panic!("{name} missing"));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn vector(m: &Model, name: &str) -> Vec<f64> {
    m.param(name).unwrap().data().to_vec()
}

fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().zip(w).map(|(xi, wr)| xi * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g[j] + b[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Per-pair complex coefficient `sum_l w_l exp(i v_l base_l^(-2p/hd))`.
fn coefficient(levels: &[(f64, f64, f64)], p: usize, hd: usize) -> (f64, f64) {
    levels.iter().fold((0.0, 0.0), |(re, im), &(w, base, v)| {
        let theta = v * base.powf(-2.0 * p as f64 / hd as f64);
        (re + w * theta.cos(), im + w * theta.sin())
    })
}

fn levels_for(cfg: &ModelConfig, e: &Event) -> Vec<(f64, f64, f64)> {
    let r = &cfg.rote;
    let t = e.time;
    match cfg.mode {
        EncodingMode::PositionalEmbedding => vec![],
        EncodingMode::PureTimestamp => vec![(1.0, 1e4, e.ts as f64)],
        EncodingMode::YearOnly => vec![(r.alpha_year, r.base_year, t.year as f64)],
        EncodingMode::YearMonth => vec![
            (r.alpha_year, r.base_year, t.year as f64),
            (r.alpha_month, r.base_month, t.month as f64),
        ],
        EncodingMode::YearMonthDay => vec![
            (r.alpha_year, r.base_year, t.year as f64),
            (r.alpha_month, r.base_month, t.month as f64),
            (r.alpha_day, r.base_day, t.day as f64),
        ],
    }
}

/// Rotates one head slice. `modulus_only` keeps |c| and drops the phase.
fn rotate(x: &[f64], levels: &[(f64, f64, f64)], modulus_only: bool) -> Vec<f64> {
    let hd = x.len();
    let mut out = vec![0.0; hd];
    for p in 0..hd / 2 {
        let (mut re, mut im) = coefficient(levels, p, hd);
        if modulus_only {
            re = re.hypot(im);
            im = 0.0;
        }
        out[2 * p] = re * x[2 * p] - im * x[2 * p + 1];
        out[2 * p + 1] = im * x[2 * p] + re * x[2 * p + 1];
    }
    out
}

/// Logits for every position of a history, written with explicit loops.
fn reference_logits(m: &Model, events: &[Event], modulus_only: bool) -> Mat {
    let cfg = m.config();
    let (d, hd) = (cfg.d_model, cfg.head_dim());
    let slot0 = cfg.max_len - events.len();
    let emb = mat(m, "item_embedding");
    let mut x: Mat = events
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let mut row: Vec<f64> = emb[e.item].iter().map(|v| v * (d as f64).sqrt()).collect();
            if !cfg.mode.is_rotary() {
                let pos = mat(m, "position_embedding");
                for (r, p) in row.iter_mut().zip(&pos[slot0 + t]) {
                    *r += p;
                }
            }
            row
        })
        .collect();
    let levels: Vec<_> = events.iter().map(|e| levels_for(cfg, e)).collect();
    let n = events.len();
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        let h = norm(&x, &vector(m, &p("attn_norm.gain")), &vector(m, &p("attn_norm.bias")));
        let q = affine(&h, &mat(m, &p("attn.w_q")), &vector(m, &p("attn.b_q")));
        let k = affine(&h, &mat(m, &p("attn.w_k")), &vector(m, &p("attn.b_k")));
        let v = affine(&h, &mat(m, &p("attn.w_v")), &vector(m, &p("attn.b_v")));
        let mut ctx = vec![vec![0.0; d]; n];
        for head in 0..cfg.n_heads {
            let cols = head * hd..(head + 1) * hd;
            let slice = |a: &Mat, t: usize| -> Vec<f64> {
                let s = a[t][cols.clone()].to_vec();
                if cfg.mode.is_rotary() {
                    rotate(&s, &levels[t], modulus_only)
                } else {
                    s
                }
            };
            for i in 0..n {
                let qi = slice(&q, i);
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        let kj = slice(&k, j);
                        qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let a = (s - mx).exp() / z;
                    for c in cols.clone() {
                        ctx[i][c] += a * v[j][c];
                    }
                }
            }
        }
        let o = affine(&ctx, &mat(m, &p("attn.w_o")), &vector(m, &p("attn.b_o")));
        for (xr, or) in x.iter_mut().zip(&o) {
            for (a, b) in xr.iter_mut().zip(or) {
                *a += b;
            }
        }
        let h2 = norm(&x, &vector(m, &p("ffn_norm.gain")), &vector(m, &p("ffn_norm.bias")));
        let mut f = affine(&h2, &mat(m, &p("ffn.w1")), &vector(m, &p("ffn.b1")));
        f.iter_mut().flatten().for_each(|v| *v = gelu(*v));
        let f = affine(&f, &mat(m, &p("ffn.w2")), &vector(m, &p("ffn.b2")));
        for (xr, fr) in x.iter_mut().zip(&f) {
            for (a, b) in xr.iter_mut().zip(fr) {
                *a += b;
            }
        }
    }
    let x = norm(&x, &vector(m, "final_norm.gain"), &vector(m, "final_norm.bias"));
    x.iter()
        .map(|row| emb.iter().map(|e| row.iter().zip(e).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{what}[{i}]: {x} vs {y}");
    }
}

#[test]
fn forward_matches_loop_reference_in_every_mode() {
    let h = history();
    for mode in EncodingMode::ALL {
        let m = model(mode, 5);
        let want = reference_logits(&m, &h, false);
        let batch = SequenceBatch::from_histories(&[&h], vec![2], 6).unwrap();
        let got = m.forward(&batch).unwrap();
        let v = m.config().vocab_size;
        assert_eq!(got.shape(), &[1, 6, v]);
        let data = got.data();
        // padding slots stay zero
        assert!(data[..2 * v].iter().all(|&x| x == 0.0));
        for (t, row) in want.iter().enumerate() {
            let at = (2 + t) * v;
            assert_close(&data[at..at + v], row, 1e-10, mode.as_str());
        }
        let seq = m.sequence_logits(&h).unwrap();
        assert_close(seq.data(), &data[2 * v..], 0.0, "sequence_logits");
    }
}

#[test]
fn future_events_do_not_change_past_outputs() {
    let h = history();
    for mode in EncodingMode::ALL {
        let m = model(mode, 9);
        let v = m.config().vocab_size;
        let full = m.sequence_logits(&h).unwrap();
        let mut altered = h.clone();
        altered[3] = Event::new(4, ts_of(2030, 3, 3)).unwrap();
        let other = m.sequence_logits(&altered).unwrap();
        // Rotary modes have no slot dependence, so a prefix is its own sequence.
        if mode.is_rotary() {
            let prefix = m.sequence_logits(&h[..3]).unwrap();
            assert_close(prefix.data(), &full.data()[..3 * v], 1e-12, "prefix");
        }
        assert_eq!(&full.data()[..3 * v], &other.data()[..3 * v], "{mode}");
        assert_ne!(&full.data()[3 * v..], &other.data()[3 * v..]);
    }
}

#[test]
fn padding_slot_contents_are_ignored() {
    let h = history();
    for mode in EncodingMode::ALL {
        let m = model(mode, 2);
        let clean = SequenceBatch::from_histories(&[&h], vec![1], 6).unwrap();
        let mut noisy = clean.clone();
        for p in 0..2 {
            noisy.triplets.as_mut().unwrap()[p] = TemporalTriplet::new(40, 487, 14_000);
            noisy.timestamps.as_mut().unwrap()[p] = 1_234_567_890;
        }
        assert_eq!(m.forward(&clean).unwrap(), m.forward(&noisy).unwrap(), "{mode}");
        // An unmasked padding id is a malformed batch.
        let mut bad = clean.clone();
        bad.mask[0] = false;
        assert!(matches!(m.forward(&bad), Err(Error::Domain(_))));
    }
}

#[test]
fn positional_mode_ignores_time_and_rotary_modes_need_it() {
    let h = history();
    let shifted: Vec<Event> = h.iter().map(|e| Event::new(e.item, e.ts + 777_777).unwrap()).collect();
    let pe = model(EncodingMode::PositionalEmbedding, 1);
    assert_eq!(pe.sequence_logits(&h).unwrap(), pe.sequence_logits(&shifted).unwrap());
    let batch = SequenceBatch::from_histories(&[&h], vec![1], 6).unwrap().without_time();
    assert!(pe.forward(&batch).is_ok());
    let ymd = model(EncodingMode::YearMonthDay, 1);
    assert!(matches!(ymd.forward(&batch), Err(Error::Config(_))));
    let wrong_len = SequenceBatch::from_histories(&[&h], vec![1], 5).unwrap();
    assert!(matches!(ymd.forward(&wrong_len), Err(Error::Mismatch { .. })));
}

#[test]
fn equal_times_collapse_to_the_time_free_model_for_single_level_modes() {
    // With one level of weight w, equal times give q.k scaled by w^2 for every
    // pair, which is the same as all-zero times.
    for mode in [EncodingMode::YearOnly, EncodingMode::PureTimestamp] {
        let m = model(mode, 4);
        let t = ts_of(2012, 8, 19);
        let same: Vec<Event> = [2, 5, 8, 9].iter().map(|&i| Event::new(i, t).unwrap()).collect();
        let zero: Vec<Event> = [2, 5, 8, 9].iter().map(|&i| Event::new(i, 0).unwrap()).collect();
        assert_close(
            m.sequence_logits(&same).unwrap().data(),
            m.sequence_logits(&zero).unwrap().data(),
            1e-9,
            mode.as_str(),
        );
    }
}

#[test]
fn equal_times_in_fused_mode_scale_each_pair_by_coefficient_modulus() {
    let m = model(EncodingMode::YearMonthDay, 4);
    let t = ts_of(2012, 8, 19);
    let same: Vec<Event> = [2, 5, 8, 9].iter().map(|&i| Event::new(i, t).unwrap()).collect();
    let got = m.sequence_logits(&same).unwrap();
    let want: Vec<f64> = reference_logits(&m, &same, true).into_iter().flatten().collect();
    assert_close(got.data(), &want, 1e-10, "modulus");
    // Cross-level phases make this differ from the all-zero-time model.
    let zero: Vec<Event> = [2, 5, 8, 9].iter().map(|&i| Event::new(i, 0).unwrap()).collect();
    let at_zero = m.sequence_logits(&zero).unwrap();
    let gap = got
        .data()
        .iter()
        .zip(at_zero.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap > 1e-6, "gap {gap}");
}

fn shift_years(e: &Event, years: i64) -> Event {
    let days = e.ts.div_euclid(SEC_PER_DAY);
    let (y, mo, d) = rote::calendar::civil_from_days(days);
    let moved = days_from_civil(y + years, mo, d) * SEC_PER_DAY + e.ts.rem_euclid(SEC_PER_DAY);
    Event::new(e.item, moved).unwrap()
}

fn max_score_gap(m: &Model, a: &[Event], b: &[Event]) -> f64 {
    let pa = m.attention_scores(a).unwrap();
    let pb = m.attention_scores(b).unwrap();
    let mut worst: f64 = 0.0;
    for (la, lb) in pa.scores.iter().zip(&pb.scores) {
        for (ha, hb) in la.iter().zip(lb) {
            for (x, y) in ha.data().iter().zip(hb.data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

#[test]
fn attention_depends_on_time_differences_only_for_single_level_modes() {
    let h = history();
    let y = model(EncodingMode::YearOnly, 6);
    let later: Vec<Event> = h.iter().map(|e| shift_years(e, 4)).collect();
    assert!(later.iter().zip(&h).all(|(a, b)| a.time.year == b.time.year + 4));
    assert!(max_score_gap(&y, &h, &later) < 1e-9);

    let ts = model(EncodingMode::PureTimestamp, 6);
    let moved: Vec<Event> = h.iter().map(|e| Event::new(e.item, e.ts + 12_345_678).unwrap()).collect();
    // Angles reach ~1e9 rad, so phase rounding is ~1e-7.
    assert!(max_score_gap(&ts, &h, &moved) < 1e-5);

    // Shifting the year by 4 shifts months by 48; in the fused mode the
    // cross-level terms see different phase offsets and the scores move.
    let ym = model(EncodingMode::YearMonth, 6);
    assert!(max_score_gap(&ym, &h, &later) > 1e-6);
}

#[test]
fn score_items_is_a_dot_product_with_item_rows() {
    let m = Model::init_with_std(config(5, EncodingMode::YearOnly), 3, 0.5).unwrap();
    let hidden = [0.3, -1.0, 0.25, 2.0, 0.0, 0.5, -0.5, 1.5];
    let s = m.score_items(&hidden);
    assert_eq!(s[0], f64::NEG_INFINITY);
    let emb = mat(&m, "item_embedding");
    for i in 1..5 {
        let want: f64 = hidden.iter().zip(&emb[i]).map(|(a, b)| a * b).sum();
        assert!((s[i] - want).abs() < 1e-12);
    }
    assert!(m.score_items(&[0.0; 8])[1..].iter().all(|&x| x == 0.0));

    let h: Vec<Event> = history().iter().map(|e| Event::new(1 + e.item % 4, e.ts).unwrap()).collect();
    let next = m.score_next(&h).unwrap();
    let last = m.sequence_logits(&h).unwrap();
    assert_close(&next[1..], &last.row(3)[1..], 1e-12, "score_next");
}

#[test]
fn init_is_seeded_and_padding_row_is_zero() {
    for mode in EncodingMode::ALL {
        let a = Model::init(config(11, mode), 42).unwrap();
        let b = Model::init(config(11, mode), 42).unwrap();
        let c = Model::init(config(11, mode), 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert!(a.item_embedding().row(0).iter().all(|&x| x == 0.0));
        // truncated at two standard deviations of 0.02
        let emb = a.item_embedding().data();
        assert!(emb.iter().all(|x| x.abs() <= 0.04));
        assert!(emb[8..].iter().any(|&x| x != 0.0));
    }
}

#[test]
fn parameter_count_matches_hand_count() {
    for mode in EncodingMode::ALL {
        for (v, d, heads, layers, len) in [(11, 8, 2, 2, 6), (101, 32, 4, 3, 50), (2, 4, 1, 0, 3)] {
            let mut c = config(v, mode);
            c.d_model = d;
            c.n_heads = heads;
            c.n_layers = layers;
            c.max_len = len;
            c.sync_head_dim();
            let m = Model::init(c, 0).unwrap();
            let per_layer = 6 * d * d + 10 * d;
            let pos = if mode.is_rotary() { 0 } else { len * d };
            let want = v * d + pos + layers * per_layer + 2 * d;
            assert_eq!(m.num_params(), want, "{mode} {v} {d} {heads} {layers} {len}");
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = config(11, EncodingMode::YearMonthDay);
    c.n_heads = 3;
    assert!(matches!(Model::init(c, 0), Err(Error::Config(_))));
    let mut c = config(11, EncodingMode::YearMonthDay);
    c.rote.head_dim = 2;
    assert!(matches!(Model::init(c, 0), Err(Error::Config(_))));
    let mut c = config(11, EncodingMode::YearMonthDay);
    c.dropout_rate = 1.0;
    assert!(Model::init(c, 0).is_err());
    let m = model(EncodingMode::YearMonthDay, 0);
    assert!(m.sequence_logits(&[]).is_err());
}
