use std::fs;
use std::path::Path;

use super::{Dataset, Event, IdMap, UserSequence};
use crate::error::{Error, Result};

pub const ITEMS_FILE: &str = "items.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const SEQUENCES_FILE: &str = "sequences.tsv";
pub const STATS_FILE: &str = "stats.tsv";

/// Summary counts in the shape of a dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

impl DatasetStats {
    pub fn of(ds: &Dataset) -> Self {
        let users = ds.sequences.len();
        let items = ds.items.len();
        let interactions = ds.n_interactions();
        let cells = users * items;
        DatasetStats {
            users,
            items,
            interactions,
            density: if cells == 0 { 0.0 } else { interactions as f64 / cells as f64 },
        }
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "users\titems\tinteractions\tdensity\n{}\t{}\t{}\t{:.6}\n",
            self.users, self.items, self.interactions, self.density
        )
    }
}

fn write(dir: &Path, name: &str, text: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn id_map_tsv(map: &IdMap) -> String {
    let mut s = String::from("index\tid\n");
    for (i, id) in map.iter() {
        s.push_str(&format!("{i}\t{id}\n"));
    }
    s
}

/// Write `items.tsv`, `users.tsv`, `sequences.tsv` and `stats.tsv`.
pub fn write_processed(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, ITEMS_FILE, id_map_tsv(&ds.items))?;
    write(dir, USERS_FILE, id_map_tsv(&ds.users))?;
    let mut seqs = String::from("user_index\tevents\n");
    for s in &ds.sequences {
        let events: Vec<String> = s.events.iter().map(|e| format!("{}:{}", e.item, e.ts)).collect();
        seqs.push_str(&format!("{}\t{}\n", s.user_index, events.join(" ")));
    }
    write(dir, SEQUENCES_FILE, seqs)?;
    write(dir, STATS_FILE, DatasetStats::of(ds).to_tsv())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n + 1, l.to_string()))
        .collect())
}

fn read_id_map(path: &Path, first: usize) -> Result<IdMap> {
    let mut map = IdMap::new(first);
    for (line, text) in read_lines(path)? {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (idx, id) = text
            .split_once('\t')
            .ok_or_else(|| err("expected 'index<TAB>id'".into()))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("bad index '{idx}'")))?;
        if map.insert(id) != idx {
            return Err(err(format!("index {idx} is out of sequence")));
        }
    }
    Ok(map)
}

/// Load a directory written by [`write_processed`].
pub fn read_processed(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let items = read_id_map(&dir.join(ITEMS_FILE), 1)?;
    let users = read_id_map(&dir.join(USERS_FILE), 0)?;
    let path = dir.join(SEQUENCES_FILE);
    let mut sequences = Vec::new();
    for (line, text) in read_lines(&path)? {
        let err = |message: String| Error::Parse {
            path: path.clone(),
            line,
            message,
        };
        let (u, rest) = text
            .split_once('\t')
            .ok_or_else(|| err("expected 'user_index<TAB>events'".into()))?;
        let user_index: usize = u.parse().map_err(|_| err(format!("bad user index '{u}'")))?;
        if users.id_of(user_index).is_none() {
            return Err(err(format!("unknown user index {user_index}")));
        }
        let mut events = Vec::new();
        for pair in rest.split_whitespace() {
            let (i, t) = pair
                .split_once(':')
                .ok_or_else(|| err(format!("expected 'item:ts', got '{pair}'")))?;
            let item: usize = i.parse().map_err(|_| err(format!("bad item '{i}'")))?;
            let ts: i64 = t.parse().map_err(|_| err(format!("bad timestamp '{t}'")))?;
            if items.id_of(item).is_none() {
                return Err(err(format!("unknown item index {item}")));
            }
            events.push(Event::new(item, ts).map_err(|e| err(e.to_string()))?);
        }
        sequences.push(UserSequence { user_index, events });
    }
    Ok(Dataset {
        users,
        items,
        sequences,
        dropped_users: 0,
    })
}
