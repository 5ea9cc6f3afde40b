//! Flat `key = value` run configuration. Defaults are overridden by a file,
//! which is overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::EvalSplit;
use crate::model::{EncodingMode, ModelConfig};
use crate::parallel::threads_from_env;
use crate::rotary::RoteConfig;
use crate::train::{LossKind, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Raw interaction log read by `prepare`.
    pub input: PathBuf,
    /// Processed dataset directory.
    pub data: PathBuf,
    pub out: PathBuf,
    pub k_core: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub mode: EncodingMode,
    pub modes: Vec<EncodingMode>,
    pub rote: RoteConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub clip_norm: f64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub split: EvalSplit,
    pub ks: Vec<usize>,
    pub exclude_history: bool,
    /// Only used by `profile` when no dataset is available.
    pub vocab_size: usize,
    pub warmup: usize,
    pub reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            input: PathBuf::from("interactions.tsv"),
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            k_core: 5,
            max_len: 50,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            dropout: 0.2,
            mode: EncodingMode::YearMonthDay,
            modes: EncodingMode::ALL.to_vec(),
            rote: RoteConfig::with_head_dim(16),
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            loss: train.loss,
            clip_norm: train.clip_norm,
            seed: 0,
            seeds: vec![1, 2, 3],
            split: EvalSplit::Test,
            ks: vec![5, 10],
            exclude_history: false,
            vocab_size: 601,
            warmup: 5,
            reps: 20,
        }
    }
}

fn list<T>(v: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::config(format!("{key}: expected {what}, got '{v}'"));
        let int = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let real = || v.parse::<f64>().map_err(|_| bad("a number"));
        let seed = |s: &str| s.parse::<u64>().map_err(|_| bad("integer seeds"));
        match key.trim() {
            "input" => self.input = PathBuf::from(v),
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "k_core" => self.k_core = int()?,
            "max_len" => self.max_len = int()?,
            "d_model" => self.d_model = int()?,
            "n_heads" => self.n_heads = int()?,
            "n_layers" => self.n_layers = int()?,
            "dropout" => self.dropout = real()?,
            "mode" => self.mode = v.parse()?,
            "modes" => self.modes = list(v, |s| s.parse())?,
            "base_y" => self.rote.base_year = real()?,
            "base_m" => self.rote.base_month = real()?,
            "base_d" => self.rote.base_day = real()?,
            "alpha_y" => self.rote.alpha_year = real()?,
            "alpha_m" => self.rote.alpha_month = real()?,
            "alpha_d" => self.rote.alpha_day = real()?,
            "learning_rate" | "lr" => self.learning_rate = real()?,
            "batch_size" => self.batch_size = int()?,
            "max_epochs" => self.max_epochs = int()?,
            "patience" => self.patience = int()?,
            "loss" => self.loss = v.parse()?,
            "clip_norm" => self.clip_norm = real()?,
            "seed" => self.seed = seed(v)?,
            "seeds" => self.seeds = list(v, seed)?,
            "split" => self.split = v.parse()?,
            "ks" => self.ks = list(v, |s| s.parse::<usize>().map_err(|_| bad("integer cutoffs")))?,
            "exclude_history" => {
                self.exclude_history = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(bad("true or false")),
                }
            }
            "vocab_size" => self.vocab_size = int()?,
            "warmup" => self.warmup = int()?,
            "reps" => self.reps = int()?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Apply every line of a config file body. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            self.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_core == 0 || self.max_len == 0 {
            return Err(Error::config("k_core and max_len must be positive"));
        }
        if self.modes.is_empty() || self.seeds.is_empty() || self.ks.is_empty() {
            return Err(Error::config("modes, seeds and ks need at least one entry"));
        }
        if self.ks.contains(&0) {
            return Err(Error::config("cutoffs must be >= 1"));
        }
        self.train_config().validate()?;
        self.model_config(self.vocab_size.max(1), self.mode).validate()
    }

    pub fn model_config(&self, vocab_size: usize, mode: EncodingMode) -> ModelConfig {
        let mut c = ModelConfig::new(vocab_size, mode);
        c.d_model = self.d_model;
        c.n_heads = self.n_heads;
        c.n_layers = self.n_layers;
        c.max_len = self.max_len;
        c.dropout_rate = self.dropout;
        c.rote = self.rote.clone();
        c.sync_head_dim();
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            // a patience longer than the run only means "never stop early"
            patience: self.patience.min(self.max_epochs),
            seed: self.seed,
            loss: self.loss,
            clip_norm: self.clip_norm,
            threads: threads_from_env(),
            ..TrainConfig::default()
        }
    }

    /// Every setting as `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let r = &self.rote;
        let lines = [
            ("input", self.input.display().to_string()),
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
            ("k_core", self.k_core.to_string()),
            ("max_len", self.max_len.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("mode", self.mode.to_string()),
            ("modes", join(&self.modes)),
            ("base_y", r.base_year.to_string()),
            ("base_m", r.base_month.to_string()),
            ("base_d", r.base_day.to_string()),
            ("alpha_y", r.alpha_year.to_string()),
            ("alpha_m", r.alpha_month.to_string()),
            ("alpha_d", r.alpha_day.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("loss", self.loss.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", join(&self.seeds)),
            ("split", self.split.to_string()),
            ("ks", join(&self.ks)),
            ("exclude_history", self.exclude_history.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("warmup", self.warmup.to_string()),
            ("reps", self.reps.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Write the resolved settings into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
