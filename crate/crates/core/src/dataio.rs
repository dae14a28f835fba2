//! Interaction-log ingestion: CSV parsing, concept vocabulary, window
//! mining, user-level splitting, and JSONL serialization.
//!
//! CSV handling goes through byte records because real interaction dumps
//! are not reliably UTF-8; only the fields we parse must decode.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which column provides the concept id a path is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One concept per problem id (large vocabularies).
    Problem,
    /// One concept per skill id (compact vocabularies, same pipeline).
    Skill,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Problem => write!(f, "problem"),
            Granularity::Skill => write!(f, "skill"),
        }
    }
}

/// Column-name configuration. Each field lists accepted header names in
/// priority order, so renamed exports keep working without code changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub granularity: Granularity,
    pub order_id: Vec<String>,
    pub user_id: Vec<String>,
    pub problem_id: Vec<String>,
    pub skill_id: Vec<String>,
    pub correct: Vec<String>,
    pub attempt_count: Vec<String>,
    pub ms_first_response: Vec<String>,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            granularity: Granularity::Problem,
            order_id: names(&["order_id"]),
            user_id: names(&["user_id"]),
            problem_id: names(&["problem_id"]),
            skill_id: names(&["skill_id"]),
            correct: names(&["correct"]),
            attempt_count: names(&["attempt_count"]),
            ms_first_response: names(&["ms_first_response"]),
        }
    }
}

/// One interaction after validation. In skill granularity `problem_id`
/// carries the skill id; everything downstream only sees concept ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRow {
    pub order_id: i64,
    pub user_id: i64,
    pub problem_id: i64,
    pub correct: u8,
    pub attempt_count: i64,
    pub ms_first_response: i64,
}

#[derive(Debug)]
pub struct ParseOutcome {
    /// Valid rows, deduplicated and sorted by (user_id, order_id).
    pub rows: Vec<InteractionRow>,
    /// Rows dropped for missing or invalid required fields.
    pub dropped: usize,
    /// Rows dropped as duplicate (user_id, order_id) pairs.
    pub deduplicated: usize,
}

fn find_column(headers: &[String], wanted: &[String]) -> Option<usize> {
    wanted.iter().find_map(|w| headers.iter().position(|h| h == w))
}

fn field_i64(record: &csv::ByteRecord, idx: usize) -> Option<i64> {
    let raw = record.get(idx)?;
    let text = std::str::from_utf8(raw).ok()?.trim();
    if text.is_empty() {
        return None;
    }
    text.parse::<i64>().ok()
}

/// Parse and validate an interaction CSV. Invalid rows are dropped and
/// counted, never fatal; structural problems (missing file, missing
/// columns) are errors.
pub fn parse_csv(path: &Path, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));

    let headers: Vec<String> = reader
        .byte_headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_string())
        .collect();

    let mut missing = Vec::new();
    let mut col = |name: &str, aliases: &[String]| -> usize {
        match find_column(&headers, aliases) {
            Some(i) => i,
            None => {
                missing.push(format!("{name} (accepted: {})", aliases.join(", ")));
                usize::MAX
            }
        }
    };
    let c_order = col("order_id", &schema.order_id);
    let c_user = col("user_id", &schema.user_id);
    let c_concept = match schema.granularity {
        Granularity::Problem => col("problem_id", &schema.problem_id),
        Granularity::Skill => col("skill_id", &schema.skill_id),
    };
    let c_correct = col("correct", &schema.correct);
    let c_attempt = col("attempt_count", &schema.attempt_count);
    let c_ms = col("ms_first_response", &schema.ms_first_response);
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required columns: {}; file has columns: {}",
            missing.join("; "),
            headers.join(", ")
        )));
    }

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(_) => {
                dropped += 1;
                continue;
            }
        }
        let parsed = (|| {
            let order_id = field_i64(&record, c_order)?;
            let user_id = field_i64(&record, c_user)?;
            let problem_id = field_i64(&record, c_concept)?;
            let correct = field_i64(&record, c_correct)?;
            let attempt_count = field_i64(&record, c_attempt)?;
            let ms_first_response = field_i64(&record, c_ms)?;
            if !(0..=1).contains(&correct) || attempt_count < 1 || ms_first_response < 0 {
                return None;
            }
            Some(InteractionRow {
                order_id,
                user_id,
                problem_id,
                correct: correct as u8,
                attempt_count,
                ms_first_response,
            })
        })();
        match parsed {
            Some(row) => rows.push(row),
            None => dropped += 1,
        }
    }

    // Keep the first occurrence of each (user, order) pair in file order.
    let mut seen = HashSet::new();
    let before = rows.len();
    rows.retain(|r| seen.insert((r.user_id, r.order_id)));
    let deduplicated = before - rows.len();

    rows.sort_by_key(|r| (r.user_id, r.order_id));
    Ok(ParseOutcome { rows, dropped, deduplicated })
}

/// Dense bidirectional concept-id map; indices assigned by ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl Vocabulary {
    pub fn build(rows: &[InteractionRow]) -> Result<Vocabulary> {
        if rows.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from zero rows"));
        }
        let mut ids: Vec<i64> = rows.iter().map(|r| r.problem_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Vocabulary { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<i64> {
        self.ids.get(index).copied()
    }

    /// Two-column CSV: `problem_id,index`, rows in index order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "problem_id,index")?;
        for (i, id) in self.ids.iter().enumerate() {
            writeln!(w, "{id},{i}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let mut pairs: Vec<(i64, usize)> = Vec::new();
        for (lineno, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: lineno + 2,
                message: format!("bad vocabulary row: {e}"),
            })?;
            let parse = |i: usize| -> Result<i64> {
                rec.get(i)
                    .and_then(|f| f.trim().parse::<i64>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 2,
                        message: format!("bad vocabulary row: {:?}", rec),
                    })
            };
            pairs.push((parse(0)?, parse(1)? as usize));
        }
        pairs.sort_by_key(|&(_, idx)| idx);
        for (expect, &(_, idx)) in pairs.iter().enumerate() {
            if idx != expect {
                return Err(Error::Format(format!(
                    "vocabulary indices not dense: expected {expect}, found {idx}"
                )));
            }
        }
        let ids: Vec<i64> = pairs.iter().map(|&(id, _)| id).collect();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Vocabulary { ids, index })
    }
}

/// One training window: `n` history concept indices, `m` future ones,
/// and the correctness bit of each future interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub user: i64,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub correct: Vec<u8>,
}

#[derive(Debug)]
pub struct MiningOutcome {
    pub samples: Vec<SequenceSample>,
    /// Users with fewer than n+m interactions.
    pub skipped_users: usize,
}

/// Slide a window of `n` inputs plus `m` targets over each user's
/// chronological log. A user with `c >= n+m` interactions yields
/// `(c-n-m)/stride + 1` windows; shorter users are skipped and counted.
pub fn mine_windows(
    rows: &[InteractionRow],
    vocab: &Vocabulary,
    n: usize,
    m: usize,
    stride: usize,
) -> Result<MiningOutcome> {
    if n < 1 || m < 1 || stride < 1 {
        return Err(Error::config(format!(
            "window mining needs n, m, stride >= 1; got n={n} m={m} stride={stride}"
        )));
    }
    let mut samples = Vec::new();
    let mut skipped_users = 0usize;

    let mut start = 0usize;
    while start < rows.len() {
        let user = rows[start].user_id;
        let mut end = start;
        while end < rows.len() && rows[end].user_id == user {
            end += 1;
        }
        let log = &rows[start..end];
        if log.len() < n + m {
            skipped_users += 1;
        } else {
            let mut i = 0usize;
            while i + n + m <= log.len() {
                let index_of = |r: &InteractionRow| -> Result<usize> {
                    vocab.index_of(r.problem_id).ok_or_else(|| {
                        Error::contract(format!(
                            "concept id {} missing from the vocabulary",
                            r.problem_id
                        ))
                    })
                };
                let input = log[i..i + n].iter().map(index_of).collect::<Result<Vec<_>>>()?;
                let target =
                    log[i + n..i + n + m].iter().map(index_of).collect::<Result<Vec<_>>>()?;
                let correct = log[i + n..i + n + m].iter().map(|r| r.correct).collect();
                samples.push(SequenceSample { user, input, target, correct });
                i += stride;
            }
        }
        start = end;
    }
    Ok(MiningOutcome { samples, skipped_users })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub seed: u64,
    pub split_fraction: f64,
}

/// Shuffle the distinct users with a seeded PRNG and send the first
/// `ceil(fraction * U)` to train. No user ever lands on both sides.
pub fn split_by_user(samples: &[SequenceSample], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let mut users: Vec<i64> = Vec::new();
    for s in samples {
        if !users.contains(&s.user) {
            users.push(s.user);
        }
    }
    if users.len() < 2 {
        return Err(Error::contract(format!(
            "user split needs at least 2 distinct users, got {}",
            users.len()
        )));
    }
    users.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let n_train = (fraction * users.len() as f64).ceil() as usize;
    let train_users: HashSet<i64> = users[..n_train].iter().copied().collect();

    let (train, test) = samples
        .iter()
        .cloned()
        .partition(|s| train_users.contains(&s.user));
    Ok(DatasetSplit { train, test, seed, split_fraction: fraction })
}

/// One JSON object per line, keys `user`, `input`, `target`, `correct`.
pub fn save_samples(samples: &[SequenceSample], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)
            .map_err(|e| Error::Format(format!("cannot serialize sample: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<SequenceSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SequenceSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad sample record: {e}"),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
