//! Top-K recommendation lists and Precision / Recall / F1 / NDCG at multiple
//! cutoffs, macro-averaged over evaluable users.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, InteractionDataset};
use crate::error::{Error, Result};
use crate::model::{dot_f64, EmbeddingModel};

/// Metric values per cutoff, averaged uniformly over evaluable users.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub f1: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub num_users_evaluated: usize,
}

impl EvalReport {
    /// CSV rows `metric,K,value`, metrics in a fixed order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "metric,K,value")?;
        for (name, map) in [
            ("precision", &self.precision),
            ("recall", &self.recall),
            ("f1", &self.f1),
            ("ndcg", &self.ndcg),
        ] {
            for (k, v) in map {
                writeln!(out, "{name},{k},{v}")?;
            }
        }
        Ok(())
    }
}

/// The K highest-scoring items outside the user's train adjacency, descending
/// by score, ties broken by ascending item index.
pub fn recommend_topk(
    model: &EmbeddingModel,
    train: &InteractionDataset,
    user: u32,
    k: usize,
) -> Result<Vec<u32>> {
    if user as usize >= model.num_users() {
        return Err(Error::IndexOutOfRange(format!("user {user}")));
    }
    let candidates = model.num_items() - train.items_of(user).len();
    if candidates < k {
        return Err(Error::InvalidConfig(format!(
            "user {user} has {candidates} candidate items, fewer than K={k}"
        )));
    }

    let u = model.user_row(user);
    let mut scored: Vec<(f64, u32)> = (0..model.num_items() as u32)
        .filter(|&j| !train.has_interaction(user, j))
        .map(|j| (dot_f64(u, model.item_row(j)), j))
        .collect();

    let by_rank = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_rank);
    Ok(scored.into_iter().map(|(_, j)| j).collect())
}

/// Evaluates the model on the split's test interactions at every cutoff.
pub fn evaluate(
    model: &EmbeddingModel,
    split: &DataSplit,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if split.evaluable_users.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::InvalidConfig(
            "cutoffs must be a non-empty list of K >= 1".into(),
        ));
    }
    let max_k = *cutoffs.iter().max().unwrap();

    // Per-user metric rows computed in parallel, reduced in user order.
    let per_user: Vec<Vec<[f64; 4]>> = split
        .evaluable_users
        .par_iter()
        .map(|&user| {
            let recs = recommend_topk(model, &split.train, user, max_k)?;
            let test_items = split.test.items_of(user);
            Ok(cutoffs
                .iter()
                .map(|&k| user_metrics_at_k(&recs, test_items, k))
                .collect())
        })
        .collect::<Result<_>>()?;

    let n = per_user.len() as f64;
    let mut report = EvalReport {
        cutoffs: cutoffs.to_vec(),
        precision: BTreeMap::new(),
        recall: BTreeMap::new(),
        f1: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        num_users_evaluated: per_user.len(),
    };
    for (ci, &k) in cutoffs.iter().enumerate() {
        let mut sums = [0.0; 4];
        for rows in &per_user {
            for (s, v) in sums.iter_mut().zip(rows[ci]) {
                *s += v;
            }
        }
        report.precision.insert(k, sums[0] / n);
        report.recall.insert(k, sums[1] / n);
        report.f1.insert(k, sums[2] / n);
        report.ndcg.insert(k, sums[3] / n);
    }
    Ok(report)
}

/// [precision, recall, f1, ndcg] for one user at one cutoff. `recs` must be
/// at least k long; ranks are 1-based, binary relevance, IDCG truncated at
/// min(k, |test|).
fn user_metrics_at_k(recs: &[u32], test_items: &[u32], k: usize) -> [f64; 4] {
    let top = &recs[..k];
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (rank0, item) in top.iter().enumerate() {
        if test_items.binary_search(item).is_ok() {
            hits += 1;
            dcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
    }
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / test_items.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let ideal = k.min(test_items.len());
    let idcg: f64 = (0..ideal).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    let ndcg = if idcg == 0.0 { 0.0 } else { dcg / idcg };
    [precision, recall, f1, ndcg]
}
