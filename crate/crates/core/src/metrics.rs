//! Leave-one-out ranking over the full item vocabulary.

use std::fmt;
use std::str::FromStr;

use crate::data::{leave_one_out_split, Dataset, Event};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::parallel::map_chunks;

pub const DEFAULT_KS: [usize; 2] = [5, 10];
const EVAL_CHUNK: usize = 32;

/// 1-based rank of `target`. Items with a strictly higher score rank ahead,
/// and so do tied items with a smaller index. Index 0 (padding) and
/// `exclusions` never count.
pub fn rank_of_target(scores: &[f64], target: usize, exclusions: &[usize]) -> Result<usize> {
    if target == 0 || target >= scores.len() {
        return Err(Error::Index {
            index: target,
            len: scores.len(),
        });
    }
    if exclusions.contains(&target) {
        return Err(Error::Domain(format!("target {target} is excluded from ranking")));
    }
    let t = scores[target];
    if t.is_nan() {
        return Err(Error::Domain(format!("target {target} has a NaN score")));
    }
    let mut excluded = vec![false; scores.len()];
    excluded[0] = true;
    for &e in exclusions {
        if let Some(x) = excluded.get_mut(e) {
            *x = true;
        }
    }
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| !excluded[j] && j != target && (s > t || (s == t && j < target)))
        .count();
    Ok(1 + ahead)
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    Valid,
    Test,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        })
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "valid" | "validation" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            _ => Err(Error::config(format!("unknown split '{s}' (valid|test)"))),
        }
    }
}

/// Mean Recall@K and NDCG@K, one entry per cutoff in `ks`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub split: EvalSplit,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users: usize,
}

impl RankingMetrics {
    pub fn from_ranks(split: EvalSplit, ranks: &[usize], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Domain(format!("{split} split is empty")));
        }
        let n = ranks.len() as f64;
        let mean = |f: fn(usize, usize) -> f64, k: usize| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
        Ok(RankingMetrics {
            split,
            ks: ks.to_vec(),
            recall: ks.iter().map(|&k| mean(recall_at_k, k)).collect(),
            ndcg: ks.iter().map(|&k| mean(ndcg_at_k, k)).collect(),
            n_users: ranks.len(),
        })
    }

    fn position(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|i| self.ndcg[i])
    }

    pub const TSV_HEADER: &'static str = "split\tK\trecall\tndcg\tn_users";

    /// Rows without the header.
    pub fn tsv_rows(&self) -> String {
        let mut s = String::new();
        for (i, k) in self.ks.iter().enumerate() {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\n",
                self.split, k, self.recall[i], self.ndcg[i], self.n_users
            ));
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        format!("{}\n{}", Self::TSV_HEADER, self.tsv_rows())
    }
}

/// One user's ranking problem: score items after `input`, find `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalCase<'a> {
    pub user: usize,
    pub input: &'a [Event],
    pub target: usize,
}

/// Validation cases see only training events; test cases add the validation
/// event.
pub fn eval_cases(ds: &Dataset, split: EvalSplit) -> Result<Vec<EvalCase<'_>>> {
    ds.sequences
        .iter()
        .map(|s| {
            let sp = leave_one_out_split(s)?;
            Ok(match split {
                EvalSplit::Valid => EvalCase {
                    user: s.user_index,
                    input: sp.valid_input(),
                    target: sp.valid.item,
                },
                EvalSplit::Test => EvalCase {
                    user: s.user_index,
                    input: sp.test_input(),
                    target: sp.test.item,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Remove items already in the input from the candidates.
    pub exclude_history: bool,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            exclude_history: false,
            threads: 1,
        }
    }
}

/// Ranks every case with an arbitrary scorer over its input history.
pub fn evaluate_with<F>(split: EvalSplit, cases: &[EvalCase<'_>], opts: &EvalOptions, score: F) -> Result<RankingMetrics>
where
    F: Fn(&[Event]) -> Result<Vec<f64>> + Sync,
{
    let per_chunk = map_chunks(cases, EVAL_CHUNK, opts.threads, |chunk| {
        chunk
            .iter()
            .map(|c| {
                let scores = score(c.input)?;
                let mut excl: Vec<usize> = Vec::new();
                if opts.exclude_history {
                    excl = c.input.iter().map(|e| e.item).filter(|&i| i != c.target).collect();
                }
                rank_of_target(&scores, c.target, &excl)
            })
            .collect::<Result<Vec<usize>>>()
    });
    let mut ranks = Vec::with_capacity(cases.len());
    for r in per_chunk {
        ranks.extend(r?);
    }
    RankingMetrics::from_ranks(split, &ranks, &opts.ks)
}

pub fn evaluate(model: &Model, ds: &Dataset, split: EvalSplit, opts: &EvalOptions) -> Result<RankingMetrics> {
    if ds.vocab_size() != model.config().vocab_size {
        return Err(Error::Mismatch {
            what: "vocab_size",
            expected: model.config().vocab_size.to_string(),
            found: ds.vocab_size().to_string(),
        });
    }
    let cases = eval_cases(ds, split)?;
    evaluate_with(split, &cases, opts, |h| model.score_next(h))
}
