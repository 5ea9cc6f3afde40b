use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_interactions, Interaction};
use crate::calendar::{decompose_timestamp, SECONDS_PER_DAY};
use crate::error::{Error, Result};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const GENERATOR_FILE: &str = "generator.json";

/// Parameters of the seasonal generator.
///
/// A fraction `group_fraction` of the items is split round-robin into twelve
/// month-of-year groups; the rest is an ungrouped tail. Each event draws from
/// the current month's group with `p_season`, re-picks an item the user saw
/// within `recent_days` with `p_recent`, and otherwise draws uniformly. Gaps
/// are short (half a day to a day and a half) with `p_short`, otherwise
/// `long_gap_days`, so event index and elapsed time drift apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub horizon_days: u64,
    pub seed: u64,
    pub p_season: f64,
    pub p_recent: f64,
    pub p_short: f64,
    pub long_gap_days: (f64, f64),
    pub recent_days: f64,
    pub group_fraction: f64,
    pub min_events: usize,
    pub max_events: usize,
    /// Unix seconds of the earliest possible event.
    pub start: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_items: 600,
            horizon_days: 3 * 365,
            seed: 0,
            p_season: 0.6,
            p_recent: 0.2,
            p_short: 0.9,
            long_gap_days: (30.0, 90.0),
            recent_days: 7.0,
            group_fraction: 0.8,
            min_events: 8,
            max_events: 30,
            // 2015-01-01T00:00:00Z
            start: 1_420_070_400,
        }
    }
}

pub const N_GROUPS: usize = 12;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let p = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        p("p_season", self.p_season)?;
        p("p_recent", self.p_recent)?;
        p("p_short", self.p_short)?;
        p("group_fraction", self.group_fraction)?;
        if self.p_season + self.p_recent > 1.0 + 1e-12 {
            return Err(Error::config("p_season + p_recent exceeds 1"));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::config("n_users and n_items must be positive"));
        }
        if self.grouped_items() < N_GROUPS {
            return Err(Error::config(format!(
                "need at least {N_GROUPS} grouped items, have {}",
                self.grouped_items()
            )));
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return Err(Error::config("need 1 <= min_events <= max_events"));
        }
        if self.start < 0 || !(self.long_gap_days.0 <= self.long_gap_days.1) {
            return Err(Error::config("invalid start or long gap range"));
        }
        Ok(())
    }

    pub fn grouped_items(&self) -> usize {
        (self.n_items as f64 * self.group_fraction).round() as usize
    }

    /// Month-of-year group of a 0-based item number, `None` for the tail.
    pub fn group_of(&self, item: usize) -> Option<usize> {
        (item < self.grouped_items()).then_some(item % N_GROUPS)
    }

    pub fn group_size(&self, group: usize) -> usize {
        let g = self.grouped_items();
        g / N_GROUPS + usize::from(group < g % N_GROUPS)
    }

    /// Flat JSON object with every parameter.
    pub fn to_json(&self) -> String {
        format!(
            "{{\n  \"generator\": \"synth_seasonal\",\n  \"n_users\": {},\n  \"n_items\": {},\n  \
             \"horizon_days\": {},\n  \"seed\": {},\n  \"p_season\": {},\n  \"p_recent\": {},\n  \
             \"p_short\": {},\n  \"long_gap_days_min\": {},\n  \"long_gap_days_max\": {},\n  \
             \"recent_days\": {},\n  \"group_fraction\": {},\n  \"n_groups\": {},\n  \
             \"min_events\": {},\n  \"max_events\": {},\n  \"start\": {}\n}}\n",
            self.n_users,
            self.n_items,
            self.horizon_days,
            self.seed,
            self.p_season,
            self.p_recent,
            self.p_short,
            self.long_gap_days.0,
            self.long_gap_days.1,
            self.recent_days,
            self.group_fraction,
            N_GROUPS,
            self.min_events,
            self.max_events,
            self.start,
        )
    }
}

/// Which branch of the generator produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DrawSource {
    Season,
    Recent,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub config: SynthConfig,
    pub interactions: Vec<Interaction>,
    /// Parallel to `interactions`.
    pub sources: Vec<DrawSource>,
    /// 0-based item number of each interaction.
    pub item_numbers: Vec<usize>,
}

impl SynthData {
    /// Write `interactions.tsv` and the `generator.json` sidecar.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_interactions(dir.join(INTERACTIONS_FILE), &self.interactions)?;
        let side = dir.join(GENERATOR_FILE);
        fs::write(&side, self.config.to_json()).map_err(|e| Error::io(side, e))
    }
}

pub fn item_id(n: usize) -> String {
    format!("i{}", n + 1)
}

pub fn synth_seasonal(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); N_GROUPS];
    for item in 0..cfg.grouped_items() {
        groups[item % N_GROUPS].push(item);
    }
    let day = SECONDS_PER_DAY as f64;
    let recent_window = (cfg.recent_days * day) as i64;
    let first_half = (cfg.horizon_days as f64 * day / 2.0) as i64;

    let mut out = SynthData {
        config: cfg.clone(),
        interactions: Vec::new(),
        sources: Vec::new(),
        item_numbers: Vec::new(),
    };
    for u in 0..cfg.n_users {
        let user = format!("u{}", u + 1);
        let n = rng.random_range(cfg.min_events..=cfg.max_events);
        let mut t = cfg.start + rng.random_range(0..=first_half);
        let mut history: Vec<(i64, usize)> = Vec::with_capacity(n);
        for k in 0..n {
            if k > 0 {
                let gap_days = if rng.random::<f64>() < cfg.p_short {
                    rng.random_range(0.5..1.5)
                } else {
                    rng.random_range(cfg.long_gap_days.0..=cfg.long_gap_days.1)
                };
                t += (gap_days * day) as i64;
            }
            let month = decompose_timestamp(t)?.month_of_year() as usize;
            let r: f64 = rng.random();
            let (item, source) = if r < cfg.p_season {
                let g = &groups[month];
                (g[rng.random_range(0..g.len())], DrawSource::Season)
            } else if r < cfg.p_season + cfg.p_recent {
                let recent: Vec<usize> = history
                    .iter()
                    .rev()
                    .take_while(|(ts, _)| t - ts <= recent_window)
                    .map(|&(_, i)| i)
                    .collect();
                if recent.is_empty() {
                    (rng.random_range(0..cfg.n_items), DrawSource::Uniform)
                } else {
                    (recent[rng.random_range(0..recent.len())], DrawSource::Recent)
                }
            } else {
                (rng.random_range(0..cfg.n_items), DrawSource::Uniform)
            };
            history.push((t, item));
            out.interactions.push(Interaction::new(user.clone(), item_id(item), t));
            out.sources.push(source);
            out.item_numbers.push(item);
        }
    }
    Ok(out)
}
