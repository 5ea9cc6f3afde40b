//! Command implementations behind the `rote` binary. Every artifact lands in
//! the configured output directory next to a copy of the resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{
    build_sequences, k_core_filter, load_interactions, processed, read_processed, window, write_processed, Dataset,
    DatasetStats, Event, SequenceBatch,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, EvalSplit, RankingMetrics};
use crate::model::{EncodingMode, Model};
use crate::parallel::threads_from_env;
use crate::profile::{count_params, estimate_flops, measure_latency, EfficiencyReport};
use crate::train::{train_with, TrainReport};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const ABLATION_FILE: &str = "ablation.tsv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.tsv";
pub const PROFILE_FILE: &str = "profile.tsv";

fn write(path: PathBuf, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        ks: cfg.ks.clone(),
        exclude_history: cfg.exclude_history,
        threads: threads_from_env(),
    }
}

/// Load, k-core filter and index the raw log; write the processed dataset.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<DatasetStats> {
    cfg.validate()?;
    let raw = load_interactions(&cfg.input)?;
    let kept = k_core_filter(&raw, cfg.k_core)?;
    let ds = build_sequences(&kept)?;
    if ds.sequences.is_empty() {
        return Err(Error::Domain(format!(
            "no users left after {}-core filtering of {} ({} interactions read)",
            cfg.k_core,
            cfg.input.display(),
            raw.len()
        )));
    }
    write_processed(&cfg.out, &ds)?;
    cfg.echo_into(&cfg.out)?;
    Ok(DatasetStats::of(&ds))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    read_processed(&cfg.data)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub valid: RankingMetrics,
    pub test: RankingMetrics,
}

/// Header plus the rows of each metrics block.
pub fn metrics_tsv(parts: &[&RankingMetrics]) -> String {
    let mut s = format!("{}\n", RankingMetrics::TSV_HEADER);
    for m in parts {
        s.push_str(&m.tsv_rows());
    }
    s
}

/// Train one `(mode, seed)` cell on `ds` and write its artifacts under `out`.
pub fn train_cell(cfg: &RunConfig, ds: &Dataset, mode: EncodingMode, seed: u64, out: &Path) -> Result<TrainOutcome> {
    let mut cell = cfg.clone();
    cell.mode = mode;
    cell.seed = seed;
    cell.out = out.to_path_buf();
    cell.validate()?;
    let model = Model::init(cell.model_config(ds.vocab_size(), mode), seed)?;
    let tag = format!("{mode} seed {seed}");
    let (model, report) = train_with(model, ds, &cell.train_config(), |e| {
        eprintln!(
            "[{tag}] epoch {} loss {:.4} valid ndcg@10 {}",
            e.epoch,
            e.train_loss,
            e.valid.ndcg_at(10).map_or("-".into(), |v| format!("{v:.4}"))
        )
    })?;
    let opts = eval_options(&cell);
    let valid = evaluate(&model, ds, EvalSplit::Valid, &opts)?;
    let test = evaluate(&model, ds, EvalSplit::Test, &opts)?;
    model.save(out.join(CHECKPOINT_FILE))?;
    write(out.join(TRAIN_REPORT_FILE), &report.to_tsv())?;
    write(out.join(METRICS_FILE), &metrics_tsv(&[&valid, &test]))?;
    cell.echo_into(out)?;
    Ok(TrainOutcome {
        model,
        report,
        valid,
        test,
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    train_cell(cfg, &ds, cfg.mode, cfg.seed, &cfg.out)
}

/// Evaluate a saved checkpoint (default: the one in the output directory).
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<RankingMetrics> {
    cfg.validate()?;
    let path = checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf);
    let model = Model::load(&path)?;
    let ds = load_dataset(cfg)?;
    let metrics = evaluate(&model, &ds, cfg.split, &eval_options(cfg))?;
    write(cfg.out.join(format!("metrics_{}.tsv", cfg.split)), &metrics.to_tsv())?;
    cfg.echo_into(&cfg.out)?;
    Ok(metrics)
}

/// Seed-level results of one ablation row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: EncodingMode,
    pub seeds: Vec<u64>,
    pub recall10: Vec<f64>,
    pub ndcg10: Vec<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn recall10_mean_std(&self) -> (f64, f64) {
        mean_std(&self.recall10)
    }

    pub fn ndcg10_mean_std(&self) -> (f64, f64) {
        mean_std(&self.ndcg10)
    }
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("method\tR@10\tN@10\tn_seeds\n");
    for r in rows {
        let (rm, rs) = r.recall10_mean_std();
        let (nm, ns) = r.ndcg10_mean_std();
        s.push_str(&format!("{}\t{rm:.4} ± {rs:.4}\t{nm:.4} ± {ns:.4}\t{}\n", r.mode, r.seeds.len()));
    }
    s
}

fn ablation_runs_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("method\tseed\ttest_recall@10\ttest_ndcg@10\n");
    for r in rows {
        for (i, seed) in r.seeds.iter().enumerate() {
            s.push_str(&format!("{}\t{seed}\t{:.6}\t{:.6}\n", r.mode, r.recall10[i], r.ndcg10[i]));
        }
    }
    s
}

/// Output directory of one ablation cell.
pub fn cell_dir(out: &Path, mode: EncodingMode, seed: u64) -> PathBuf {
    out.join(mode.as_str()).join(format!("seed_{seed}"))
}

/// Train and test every `(mode, seed)` pair from scratch.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if !cfg.ks.contains(&10) {
        return Err(Error::config("the ablation table reports @10; add 10 to ks"));
    }
    let ds = load_dataset(cfg)?;
    let mut rows = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let mut row = AblationRow {
            mode,
            seeds: Vec::new(),
            recall10: Vec::new(),
            ndcg10: Vec::new(),
        };
        for &seed in &cfg.seeds {
            let run = train_cell(cfg, &ds, mode, seed, &cell_dir(&cfg.out, mode, seed)).map_err(|e| Error::Run {
                cell: format!("{mode} seed {seed}"),
                source: Box::new(e),
            })?;
            row.seeds.push(seed);
            row.recall10.extend(run.test.recall_at(10));
            row.ndcg10.extend(run.test.ndcg_at(10));
        }
        rows.push(row);
    }
    write(cfg.out.join(ABLATION_FILE), &ablation_tsv(&rows))?;
    write(cfg.out.join(ABLATION_RUNS_FILE), &ablation_runs_tsv(&rows))?;
    cfg.echo_into(&cfg.out)?;
    Ok(rows)
}

/// One full-length row with daily-spaced timestamps, used for timing.
pub fn profiling_batch(vocab_size: usize, max_len: usize) -> Result<SequenceBatch> {
    if vocab_size < 2 {
        return Err(Error::config("profiling needs at least one item besides padding"));
    }
    let events = (0..max_len)
        .map(|i| Event::new(1 + i % (vocab_size - 1), 1_600_000_000 + 86_400 * i as i64))
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::from_windows(&[window(&events, max_len)], vec![1], max_len)
}

/// Parameters, analytic FLOPs and forward latency for every configured mode.
/// The vocabulary comes from the dataset when one is present.
pub fn cmd_profile(cfg: &RunConfig, measure: bool) -> Result<Vec<EfficiencyReport>> {
    cfg.validate()?;
    let vocab = if cfg.data.join(processed::ITEMS_FILE).exists() {
        load_dataset(cfg)?.vocab_size()
    } else {
        cfg.vocab_size
    };
    let batch = profiling_batch(vocab, cfg.max_len)?;
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let mc = cfg.model_config(vocab, mode);
        let model = Model::init(mc.clone(), cfg.seed)?;
        let latency = if measure {
            Some(measure_latency(&model, &batch, cfg.warmup, cfg.reps)?)
        } else {
            None
        };
        rows.push(EfficiencyReport {
            method: mode.to_string(),
            params: count_params(&model),
            flops: estimate_flops(&mc).total,
            latency,
        });
    }
    write(cfg.out.join(PROFILE_FILE), &crate::profile::efficiency_tsv(&rows))?;
    cfg.echo_into(&cfg.out)?;
    Ok(rows)
}
