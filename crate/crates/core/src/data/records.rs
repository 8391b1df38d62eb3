//! Interaction files and the external/internal id vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped user–item event as read from disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// An event with dense internal ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }

    /// `.tsv`/`.tab` files are tab separated, everything else comma separated.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv" | "tab") => Format::Tsv,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            other => Err(format!("unknown format {other:?} (expected csv or tsv)")),
        }
    }
}

/// Bijection between external string ids and dense internal ids, assigned
/// in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    external: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.external.len();
        self.index.insert(id.to_owned(), k);
        self.external.push(id.to_owned());
        k
    }

    pub fn internal(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, k: usize) -> Option<&str> {
        self.external.get(k).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Writes `external_id,internal_id` rows with a header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["external_id", "internal_id"])
            .map_err(|e| csv_io(path, e))?;
        for (k, ext) in self.external.iter().enumerate() {
            w.write_record([ext.as_str(), &k.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut vocab = Vocabulary::new();
        for row in r.records() {
            let row = row.map_err(|e| csv_io(path, e))?;
            let line = row.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line,
                message,
            };
            if row.len() != 2 {
                return Err(parse_err(format!("expected 2 columns, found {}", row.len())));
            }
            let k: usize = row[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad internal id {:?}", &row[1])))?;
            if k != vocab.len() || vocab.internal(&row[0]).is_some() {
                return Err(parse_err(format!("internal id {k} out of sequence")));
            }
            vocab.intern(&row[0]);
        }
        Ok(vocab)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// A time-ordered interaction log with its vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Interactions {
    pub records: Vec<InteractionRecord>,
    pub users: Vocabulary,
    pub items: Vocabulary,
}

impl Interactions {
    /// Sorts by timestamp (stable within ties) and interns ids in that order,
    /// so entities that appear earlier always have smaller internal ids.
    pub fn from_records(mut records: Vec<InteractionRecord>) -> Self {
        records.sort_by_key(|r| r.timestamp);
        let mut users = Vocabulary::new();
        let mut items = Vocabulary::new();
        for r in &records {
            users.intern(&r.user_id);
            items.intern(&r.item_id);
        }
        Self { records, users, items }
    }

    pub fn events(&self) -> Vec<Interaction> {
        self.records
            .iter()
            .map(|r| Interaction {
                user: self.users.internal(&r.user_id).expect("interned"),
                item: self.items.internal(&r.item_id).expect("interned"),
                timestamp: r.timestamp,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Reads `user,item,timestamp` rows. Duplicate events are kept.
pub fn parse_interactions(path: &Path, format: Format, has_header: bool) -> Result<Interactions> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_io(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() < 3 {
            return Err(parse_err(format!(
                "expected user,item,timestamp but found {} column(s)",
                row.len()
            )));
        }
        let (user, item, ts) = (&row[0], &row[1], &row[2]);
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        if ts.is_empty() {
            return Err(parse_err("missing timestamp".into()));
        }
        let timestamp: i64 = ts
            .parse()
            .map_err(|_| parse_err(format!("timestamp {ts:?} is not an integer")))?;
        if timestamp < 0 {
            return Err(parse_err(format!("negative timestamp {timestamp}")));
        }
        records.push(InteractionRecord {
            user_id: user.to_owned(),
            item_id: item.to_owned(),
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(path.to_owned()));
    }
    Ok(Interactions::from_records(records))
}

/// Writes records as `user,item,timestamp` with a header row.
pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["user", "item", "timestamp"])
        .map_err(|e| csv_io(path, e))?;
    for r in records {
        w.write_record([r.user_id.as_str(), r.item_id.as_str(), &r.timestamp.to_string()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
