//! Interaction log parsing, binarization, and train/test splitting.
//!
//! Raw identifiers are remapped to dense 0-based indices in first-appearance
//! order; every rating value counts as an interaction (one-class semantics).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported input formats for interaction logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// Tab-separated `user item rating timestamp`, integer fields.
    MovieLensTab,
    /// `user,item` per line, no header.
    CsvPairs,
}

/// A binarized user-item interaction dataset with dense 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    interactions: Vec<(u32, u32)>,
    /// Per-user sorted list of interacted item indices.
    user_adjacency: Vec<Vec<u32>>,
}

impl InteractionDataset {
    /// Builds a dataset from already-dense index pairs, validating invariants.
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        interactions: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); num_users];
        for &(u, i) in &interactions {
            if (u as usize) >= num_users || (i as usize) >= num_items {
                return Err(Error::InvalidDataset(format!(
                    "pair ({u}, {i}) outside {num_users} x {num_items}"
                )));
            }
            adjacency[u as usize].push(i);
        }
        for items in &mut adjacency {
            items.sort_unstable();
            let before = items.len();
            items.dedup();
            if items.len() != before {
                return Err(Error::InvalidDataset("duplicate interaction pair".into()));
            }
        }
        Ok(Self {
            num_users,
            num_items,
            interactions,
            user_adjacency: adjacency,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn interactions(&self) -> &[(u32, u32)] {
        &self.interactions
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    /// Sorted item indices the user has interacted with.
    pub fn items_of(&self, user: u32) -> &[u32] {
        &self.user_adjacency[user as usize]
    }

    pub fn has_interaction(&self, user: u32, item: u32) -> bool {
        self.user_adjacency[user as usize]
            .binary_search(&item)
            .is_ok()
    }

    /// Fraction of observed pairs: |interactions| / (M*N).
    pub fn density(&self) -> f64 {
        self.interactions.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Writes the dataset as `user,item` lines in interaction order.
    pub fn write_pairs_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for &(u, i) in &self.interactions {
            writeln!(out, "{u},{i}")?;
        }
        Ok(())
    }
}

/// Parses an interaction log, remapping raw identifiers to dense indices in
/// first-appearance order and collapsing duplicate pairs.
pub fn parse_interactions<R: Read>(source: R, format: InputFormat) -> Result<InteractionDataset> {
    let reader = BufReader::new(source);
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut interactions = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let (user_key, item_key) = parse_row(line, line_no + 1, format)?;
        let next_user = user_ids.len() as u32;
        let u = *user_ids.entry(user_key).or_insert(next_user);
        let next_item = item_ids.len() as u32;
        let i = *item_ids.entry(item_key).or_insert(next_item);
        if seen.insert((u, i)) {
            interactions.push((u, i));
        }
    }

    if interactions.is_empty() {
        return Err(Error::EmptyInput);
    }
    InteractionDataset::from_parts(user_ids.len(), item_ids.len(), interactions)
}

fn parse_row(line: &str, line_no: usize, format: InputFormat) -> Result<(String, String)> {
    match format {
        InputFormat::MovieLensTab => {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            for (name, field) in ["user", "item", "rating", "timestamp"].iter().zip(&fields) {
                if field.trim().parse::<i64>().is_err() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("{name} field `{field}` is not an integer"),
                    });
                }
            }
            Ok((fields[0].trim().to_string(), fields[1].trim().to_string()))
        }
        InputFormat::CsvPairs => {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "expected `user,item`".into(),
                });
            }
            Ok((fields[0].trim().to_string(), fields[1].trim().to_string()))
        }
    }
}

/// A disjoint train/test partition of one dataset.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: InteractionDataset,
    pub test: InteractionDataset,
    /// Users with at least one train and one test interaction, sorted.
    pub evaluable_users: Vec<u32>,
}

/// Per-user random holdout: for each user with >= 2 interactions,
/// `round(test_fraction * count)` items (clamped to [1, count-1]) go to test.
/// Users with a single interaction stay entirely in train and are not
/// evaluable. Deterministic for a fixed seed.
pub fn split_holdout(
    dataset: &InteractionDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<DataSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if dataset.num_interactions() == 0 {
        return Err(Error::EmptyInput);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    let mut evaluable = Vec::new();

    for user in 0..dataset.num_users() as u32 {
        let mut items = dataset.items_of(user).to_vec();
        if items.len() < 2 {
            train_pairs.extend(items.iter().map(|&i| (user, i)));
            continue;
        }
        items.shuffle(&mut rng);
        let n_test =
            ((test_fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
        let (test_items, train_items) = items.split_at(n_test);
        let mut test_items = test_items.to_vec();
        let mut train_items = train_items.to_vec();
        test_items.sort_unstable();
        train_items.sort_unstable();
        test_pairs.extend(test_items.iter().map(|&i| (user, i)));
        train_pairs.extend(train_items.iter().map(|&i| (user, i)));
        evaluable.push(user);
    }

    Ok(DataSplit {
        train: InteractionDataset::from_parts(
            dataset.num_users(),
            dataset.num_items(),
            train_pairs,
        )?,
        test: InteractionDataset::from_parts(dataset.num_users(), dataset.num_items(), test_pairs)?,
        evaluable_users: evaluable,
    })
}

/// Summary statistics written alongside an exported split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMeta {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub density: f64,
}

/// Writes `train.csv`, `test.csv`, and `meta.json` into `dir`.
pub fn write_split(split: &DataSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut train = Vec::new();
    split.train.write_pairs_csv(&mut train)?;
    fs::write(dir.join("train.csv"), train)?;
    let mut test = Vec::new();
    split.test.write_pairs_csv(&mut test)?;
    fs::write(dir.join("test.csv"), test)?;

    let meta = SplitMeta {
        num_users: split.train.num_users(),
        num_items: split.train.num_items(),
        num_interactions: split.train.num_interactions() + split.test.num_interactions(),
        num_train: split.train.num_interactions(),
        num_test: split.test.num_interactions(),
        density: (split.train.num_interactions() + split.test.num_interactions()) as f64
            / (split.train.num_users() as f64 * split.train.num_items() as f64),
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Loads a split exported by [`write_split`]. Pair files hold canonical dense
/// indices, so they are read literally (no remapping) against the dimensions
/// recorded in `meta.json`.
pub fn load_split(dir: &Path) -> Result<DataSplit> {
    let meta: SplitMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let train = read_pairs_literal(&dir.join("train.csv"), meta.num_users, meta.num_items)?;
    let test = read_pairs_literal(&dir.join("test.csv"), meta.num_users, meta.num_items)?;

    let mut evaluable = Vec::new();
    for user in 0..meta.num_users as u32 {
        if !train.items_of(user).is_empty() && !test.items_of(user).is_empty() {
            evaluable.push(user);
        }
    }
    Ok(DataSplit {
        train,
        test,
        evaluable_users: evaluable,
    })
}

fn read_pairs_literal(
    path: &Path,
    num_users: usize,
    num_items: usize,
) -> Result<InteractionDataset> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |f: Option<&str>| -> Result<u32> {
            f.and_then(|s| s.trim().parse().ok()).ok_or(Error::Parse {
                line: line_no + 1,
                msg: "expected `user,item` with dense indices".into(),
            })
        };
        let u = parse(fields.next())?;
        let i = parse(fields.next())?;
        pairs.push((u, i));
    }
    InteractionDataset::from_parts(num_users, num_items, pairs)
}
