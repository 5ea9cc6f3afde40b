//! SASRec-style causal transformer with switchable temporal encodings.

mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use crate::calendar::TemporalTriplet;
use crate::error::{Error, Result};
use crate::rotary::{inverse_frequencies, FusedRotary, RoteConfig, RotaryLevel};

pub use forward::{AttentionProbe, ModelVars};
pub use params::{Model, Param};

/// Base of the single rotary level used over raw Unix seconds.
pub const PURE_TIMESTAMP_BASE: f64 = 1e4;
pub const PURE_TIMESTAMP_WEIGHT: f64 = 1.0;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// How order or time enters attention. One variant per ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncodingMode {
    /// Learned per-slot position table added to item embeddings.
    PositionalEmbedding,
    /// One rotary level driven by raw Unix seconds.
    PureTimestamp,
    YearOnly,
    YearMonth,
    YearMonthDay,
}

impl EncodingMode {
    pub const ALL: [EncodingMode; 5] = [
        EncodingMode::PositionalEmbedding,
        EncodingMode::PureTimestamp,
        EncodingMode::YearOnly,
        EncodingMode::YearMonth,
        EncodingMode::YearMonthDay,
    ];

    pub fn is_rotary(self) -> bool {
        self != EncodingMode::PositionalEmbedding
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::PositionalEmbedding => "positional",
            EncodingMode::PureTimestamp => "timestamp",
            EncodingMode::YearOnly => "y",
            EncodingMode::YearMonth => "y+m",
            EncodingMode::YearMonthDay => "y+m+d",
        }
    }

    /// Number of rotary levels applied to queries and keys.
    pub fn active_levels(self) -> usize {
        match self {
            EncodingMode::PositionalEmbedding => 0,
            EncodingMode::PureTimestamp | EncodingMode::YearOnly => 1,
            EncodingMode::YearMonth => 2,
            EncodingMode::YearMonthDay => 3,
        }
    }

    /// Rotary levels for this mode. Inactive calendar levels are dropped,
    /// active ones keep their configured weight.
    pub fn rotary(self, rote: &RoteConfig) -> Result<Option<FusedRotary>> {
        rote.validate()?;
        let level = |weight: f64, base: f64| -> Result<RotaryLevel> {
            Ok(RotaryLevel {
                weight,
                spectrum: inverse_frequencies(base, rote.head_dim)?,
            })
        };
        let levels = match self {
            EncodingMode::PositionalEmbedding => return Ok(None),
            EncodingMode::PureTimestamp => {
                vec![level(PURE_TIMESTAMP_WEIGHT, PURE_TIMESTAMP_BASE)?]
            }
            EncodingMode::YearOnly => vec![level(rote.alpha_year, rote.base_year)?],
            EncodingMode::YearMonth => vec![
                level(rote.alpha_year, rote.base_year)?,
                level(rote.alpha_month, rote.base_month)?,
            ],
            EncodingMode::YearMonthDay => vec![
                level(rote.alpha_year, rote.base_year)?,
                level(rote.alpha_month, rote.base_month)?,
                level(rote.alpha_day, rote.base_day)?,
            ],
        };
        FusedRotary::new(levels, rote.head_dim).map(Some)
    }

    /// Per-level scalar values fed to [`EncodingMode::rotary`]'s levels.
    pub fn level_values(self, time: TemporalTriplet, seconds: i64) -> Vec<u64> {
        match self {
            EncodingMode::PositionalEmbedding => vec![],
            EncodingMode::PureTimestamp => vec![seconds.max(0) as u64],
            EncodingMode::YearOnly => vec![time.year],
            EncodingMode::YearMonth => vec![time.year, time.month],
            EncodingMode::YearMonthDay => vec![time.year, time.month, time.day],
        }
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', '-', ' '], "");
        Ok(match key.as_str() {
            "positional" | "positionalembedding" | "pe" | "backbone" => {
                EncodingMode::PositionalEmbedding
            }
            "timestamp" | "puretimestamp" | "ts" => EncodingMode::PureTimestamp,
            "y" | "year" | "yearonly" => EncodingMode::YearOnly,
            "y+m" | "ym" | "yearmonth" => EncodingMode::YearMonth,
            "y+m+d" | "ymd" | "yearmonthday" | "rote" => EncodingMode::YearMonthDay,
            _ => return Err(Error::config(format!("unknown encoding mode '{s}'"))),
        })
    }
}

/// Backbone hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of items plus one padding id (0).
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub mode: EncodingMode,
    pub rote: RoteConfig,
}

impl ModelConfig {
    /// Desk-scale defaults: d_model 32, two heads, two layers, max_len 50.
    pub fn new(vocab_size: usize, mode: EncodingMode) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            max_len: 50,
            dropout_rate: 0.2,
            mode,
            rote: RoteConfig::with_head_dim(16),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Keeps `rote.head_dim` in step after `d_model` or `n_heads` change.
    pub fn sync_head_dim(&mut self) {
        self.rote.head_dim = self.head_dim();
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(Error::config("vocab_size must be >= 1"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(Error::config("d_model, n_heads and max_len must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.rote.head_dim != self.head_dim() {
            return Err(Error::config(format!(
                "rote.head_dim {} != d_model / n_heads = {}",
                self.rote.head_dim,
                self.head_dim()
            )));
        }
        if self.mode.is_rotary() {
            self.rote.validate()?;
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let r = &self.rote;
        format!(
            "vocab_size = {}\nd_model = {}\nn_heads = {}\nn_layers = {}\nmax_len = {}\n\
             dropout = {}\nmode = {}\nbase_y = {}\nbase_m = {}\nbase_d = {}\n\
             alpha_y = {}\nalpha_m = {}\nalpha_d = {}\n",
            self.vocab_size,
            self.d_model,
            self.n_heads,
            self.n_layers,
            self.max_len,
            self.dropout_rate,
            self.mode,
            r.base_year,
            r.base_month,
            r.base_day,
            r.alpha_year,
            r.alpha_month,
            r.alpha_day,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(1, EncodingMode::YearMonthDay);
        let mut seen_vocab = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || -> Result<usize> {
                v.parse().map_err(|_| Error::config(format!("{k}: not an integer: '{v}'")))
            };
            let real = || -> Result<f64> {
                v.parse().map_err(|_| Error::config(format!("{k}: not a number: '{v}'")))
            };
            match k {
                "vocab_size" => {
                    cfg.vocab_size = int()?;
                    seen_vocab = true;
                }
                "d_model" => cfg.d_model = int()?,
                "n_heads" => cfg.n_heads = int()?,
                "n_layers" => cfg.n_layers = int()?,
                "max_len" => cfg.max_len = int()?,
                "dropout" => cfg.dropout_rate = real()?,
                "mode" => cfg.mode = v.parse()?,
                "base_y" => cfg.rote.base_year = real()?,
                "base_m" => cfg.rote.base_month = real()?,
                "base_d" => cfg.rote.base_day = real()?,
                "alpha_y" => cfg.rote.alpha_year = real()?,
                "alpha_m" => cfg.rote.alpha_month = real()?,
                "alpha_d" => cfg.rote.alpha_day = real()?,
                _ => return Err(Error::config(format!("unknown model key '{k}'"))),
            }
        }
        if !seen_vocab {
            return Err(Error::config("model config is missing vocab_size"));
        }
        cfg.sync_head_dim();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in EncodingMode::ALL {
            assert_eq!(m.as_str().parse::<EncodingMode>().unwrap(), m);
        }
        assert_eq!("RoTE".parse::<EncodingMode>().unwrap(), EncodingMode::YearMonthDay);
        assert!("hourly".parse::<EncodingMode>().is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = ModelConfig::new(123, EncodingMode::YearMonth);
        cfg.rote.alpha_day = 0.25;
        cfg.dropout_rate = 0.1;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(10, EncodingMode::YearMonthDay);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(10, EncodingMode::YearMonthDay);
        cfg.d_model = 6;
        cfg.n_heads = 2;
        cfg.sync_head_dim();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "odd head_dim");
        cfg.mode = EncodingMode::PositionalEmbedding;
        assert!(cfg.validate().is_ok(), "odd head_dim is fine without rotary");
    }

    #[test]
    fn mode_levels() {
        let rote = RoteConfig::with_head_dim(4);
        assert!(EncodingMode::PositionalEmbedding.rotary(&rote).unwrap().is_none());
        for m in EncodingMode::ALL.into_iter().skip(1) {
            let f = m.rotary(&rote).unwrap().unwrap();
            assert_eq!(f.levels().len(), m.active_levels());
            let t = TemporalTriplet::new(1, 12, 365);
            assert_eq!(m.level_values(t, 31_536_000).len(), m.active_levels());
        }
    }
}
