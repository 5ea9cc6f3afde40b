//! Interaction logs, k-core filtering, per-user sequences, leave-one-out
//! splits and fixed-length windows.

pub mod processed;
mod synth;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::calendar::{decompose_timestamp, TemporalTriplet};
use crate::error::{Error, Result};

pub use processed::{read_processed, write_processed, DatasetStats};
pub use synth::{synth_seasonal, DrawSource, SynthConfig, SynthData};

/// One raw `(user, item, timestamp)` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, ts: i64) -> Self {
        Interaction {
            user: user.into(),
            item: item.into(),
            ts,
        }
    }
}

/// A reindexed interaction inside a user sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub item: usize,
    pub time: TemporalTriplet,
    pub ts: i64,
}

impl Event {
    pub fn new(item: usize, ts: i64) -> Result<Self> {
        Ok(Event {
            item,
            time: decompose_timestamp(ts)?,
            ts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user_index: usize,
    pub events: Vec<Event>,
}

/// Bidirectional map between external string ids and dense indices that
/// start at `first`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    first: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new(first: usize) -> Self {
        IdMap {
            first,
            ..Default::default()
        }
    }

    /// Index for `id`, allocating the next one on first sight.
    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.first + self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(self.first)
            .and_then(|i| self.ids.get(i))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn first(&self) -> usize {
        self.first
    }

    /// `(index, id)` pairs in index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, s)| (self.first + i, s.as_str()))
    }
}

/// Reindexed sequences plus the id maps. Item index 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub users: IdMap,
    pub items: IdMap,
    pub sequences: Vec<UserSequence>,
    /// Users discarded for having fewer than three events.
    pub dropped_users: usize,
}

impl Dataset {
    /// Item count plus the padding id.
    pub fn vocab_size(&self) -> usize {
        self.items.len() + 1
    }

    pub fn n_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.events.len()).sum()
    }
}

/// Parse `user<TAB>item<TAB>seconds` lines; `#` lines and blank lines are
/// skipped.
pub fn parse_interactions(text: &str, path: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let ts: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("timestamp is not an integer: '{}'", fields[2])))?;
        if ts < 0 {
            return Err(err(format!("negative timestamp {ts}")));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty user or item id".to_string()));
        }
        out.push(Interaction::new(fields[0], fields[1], ts));
    }
    Ok(out)
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path)
}

pub fn write_interactions(path: impl AsRef<Path>, interactions: &[Interaction]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# user\titem\tunix_seconds\n");
    for i in interactions {
        text.push_str(&format!("{}\t{}\t{}\n", i.user, i.item, i.ts));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Repeatedly drop users and items with fewer than `k` interactions until
/// nothing changes. Surviving records keep their order.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Result<Vec<Interaction>> {
    if k == 0 {
        return Err(Error::config("k-core threshold must be >= 1"));
    }
    let mut current = interactions.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for i in &current {
            *users.entry(&i.user).or_default() += 1;
            *items.entry(&i.item).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|i| users[i.user.as_str()] >= k && items[i.item.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            return Ok(current);
        }
        let mut flags = keep.into_iter();
        current.retain(|_| flags.next().unwrap_or(false));
    }
}

/// Reindex and group by user. Users are numbered from 0 and items from 1 in
/// order of first appearance among users that keep at least three events.
/// Each sequence is stably sorted by timestamp.
pub fn build_sequences(interactions: &[Interaction]) -> Result<Dataset> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&Interaction>> = HashMap::new();
    for i in interactions {
        let e = grouped.entry(&i.user).or_default();
        if e.is_empty() {
            order.push(&i.user);
        }
        e.push(i);
    }
    let mut kept: Vec<&str> = Vec::new();
    let mut dropped_users = 0;
    for u in order {
        if grouped[u].len() < 3 {
            dropped_users += 1;
        } else {
            kept.push(u);
        }
    }
    let kept_set: std::collections::HashSet<&str> = kept.iter().copied().collect();
    let mut items = IdMap::new(1);
    for i in interactions {
        if kept_set.contains(i.user.as_str()) {
            items.insert(&i.item);
        }
    }
    let mut users = IdMap::new(0);
    let mut sequences = Vec::with_capacity(kept.len());
    for u in kept {
        let user_index = users.insert(u);
        let mut events = grouped[u]
            .iter()
            .map(|i| Event::new(items.index_of(&i.item).expect("item indexed above"), i.ts))
            .collect::<Result<Vec<_>>>()?;
        events.sort_by_key(|e| e.ts);
        sequences.push(UserSequence { user_index, events });
    }
    Ok(Dataset {
        users,
        items,
        sequences,
        dropped_users,
    })
}

/// Leave-one-out split of one user's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split<'a> {
    pub train: &'a [Event],
    pub valid: Event,
    pub test: Event,
    events: &'a [Event],
}

impl<'a> Split<'a> {
    /// Model input when predicting the validation target.
    pub fn valid_input(&self) -> &'a [Event] {
        self.train
    }

    /// Model input when predicting the test target.
    pub fn test_input(&self) -> &'a [Event] {
        &self.events[..self.events.len() - 1]
    }
}

pub fn leave_one_out_split(seq: &UserSequence) -> Result<Split<'_>> {
    let n = seq.events.len();
    if n < 3 {
        return Err(Error::Domain(format!(
            "user {} has {n} events; leave-one-out needs at least 3",
            seq.user_index
        )));
    }
    Ok(Split {
        train: &seq.events[..n - 2],
        valid: seq.events[n - 2],
        test: seq.events[n - 1],
        events: &seq.events,
    })
}

/// One fixed-length, left-padded row. `mask[p]` is true on padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub items: Vec<usize>,
    pub triplets: Vec<TemporalTriplet>,
    pub timestamps: Vec<i64>,
    pub mask: Vec<bool>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of padding slots at the front.
    pub fn padding(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }
}

/// Keep the most recent `max_len` events and left-pad with id 0 and the
/// zero triplet.
pub fn window(events: &[Event], max_len: usize) -> Window {
    let tail = &events[events.len().saturating_sub(max_len)..];
    let pad = max_len - tail.len();
    let mut w = Window {
        items: vec![0; pad],
        triplets: vec![TemporalTriplet::ZERO; pad],
        timestamps: vec![0; pad],
        mask: vec![true; pad],
    };
    for e in tail {
        w.items.push(e.item);
        w.triplets.push(e.time);
        w.timestamps.push(e.ts);
        w.mask.push(false);
    }
    w
}

/// Row-major `[rows, max_len]` window batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub max_len: usize,
    pub items: Vec<usize>,
    pub triplets: Option<Vec<TemporalTriplet>>,
    pub timestamps: Option<Vec<i64>>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn from_windows(windows: &[Window], targets: Vec<usize>, max_len: usize) -> Result<Self> {
        if windows.len() != targets.len() {
            return Err(Error::dim(format!(
                "{} windows but {} targets",
                windows.len(),
                targets.len()
            )));
        }
        let mut b = SequenceBatch {
            max_len,
            items: Vec::with_capacity(windows.len() * max_len),
            triplets: Some(Vec::with_capacity(windows.len() * max_len)),
            timestamps: Some(Vec::with_capacity(windows.len() * max_len)),
            targets,
            mask: Vec::with_capacity(windows.len() * max_len),
        };
        for w in windows {
            if w.len() != max_len {
                return Err(Error::dim(format!("window of length {} in a max_len {max_len} batch", w.len())));
            }
            b.items.extend(&w.items);
            b.triplets.as_mut().unwrap().extend(&w.triplets);
            b.timestamps.as_mut().unwrap().extend(&w.timestamps);
            b.mask.extend(&w.mask);
        }
        Ok(b)
    }

    /// Batch of windows over the given histories, each followed by `targets`.
    pub fn from_histories(histories: &[&[Event]], targets: Vec<usize>, max_len: usize) -> Result<Self> {
        let windows: Vec<Window> = histories.iter().map(|h| window(h, max_len)).collect();
        SequenceBatch::from_windows(&windows, targets, max_len)
    }

    /// Drop time information, as a positional-only pipeline would.
    pub fn without_time(mut self) -> Self {
        self.triplets = None;
        self.timestamps = None;
        self
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    /// Non-padding events of row `r`, in window order. Rows must be a padding
    /// prefix followed by ids >= 1.
    pub fn row_events(&self, r: usize) -> Result<Vec<Event>> {
        let lo = r * self.max_len;
        let hi = lo + self.max_len;
        if hi > self.items.len() || hi > self.mask.len() {
            return Err(Error::Index {
                index: r,
                len: self.items.len() / self.max_len.max(1),
            });
        }
        let mask = &self.mask[lo..hi];
        let pad = mask.iter().take_while(|&&m| m).count();
        if mask[pad..].iter().any(|&m| m) {
            return Err(Error::Domain(format!("row {r}: padding is not a prefix")));
        }
        let mut out = Vec::with_capacity(self.max_len - pad);
        for p in lo + pad..hi {
            let item = self.items[p];
            if item == 0 {
                return Err(Error::Domain(format!("row {r}: padding id at unmasked slot {}", p - lo)));
            }
            let (time, ts) = match (&self.triplets, &self.timestamps) {
                (Some(t), Some(s)) => (t[p], s[p]),
                _ => (TemporalTriplet::ZERO, 0),
            };
            out.push(Event { item, time, ts });
        }
        Ok(out)
    }
}
