//! Mini-batch training with three swappable update strategies.
//!
//! TwoBp is conventional SGD on both towers. OneBp backpropagates into the
//! item tower only and updates each user row by moving aggregation toward the
//! just-updated positive item row. UserOnlyBp is the flipped ablation:
//! gradient into users only, positive items aggregate toward the user, and
//! negatives receive no update at all.
//!
//! Batch semantics: per-sample gradients are computed against the pre-batch
//! embedding snapshot and summed when a row recurs in the batch; the
//! aggregation step runs per sample sequentially in in-batch order after all
//! gradient updates of that batch.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, InteractionDataset};
use crate::error::{Error, Result};
use crate::loss::{grads_into, ContrastiveSampleGrad, GradScratch};
use crate::model::EmbeddingModel;
use crate::sampler::{sample_negatives, NegativeDraw};

/// Which towers the loss gradient reaches, and how the other side updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Gradient updates both towers.
    TwoBp,
    /// Gradient updates items; users update by moving aggregation.
    OneBp,
    /// Gradient updates users; positive items aggregate toward the user.
    UserOnlyBp,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::TwoBp => "twobp",
            Strategy::OneBp => "onebp",
            Strategy::UserOnlyBp => "useronlybp",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twobp" => Ok(Strategy::TwoBp),
            "onebp" => Ok(Strategy::OneBp),
            "useronlybp" => Ok(Strategy::UserOnlyBp),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (expected twobp, onebp, or useronlybp)"
            ))),
        }
    }
}

/// All training hyperparameters. JSON configs use exactly these field names;
/// missing keys fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub num_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            learning_rate: 0.015,
            beta: 0.99,
            num_negatives: 5,
            batch_size: 1024,
            epochs: 100,
            seed: 42,
            strategy: Strategy::OneBp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if self.num_negatives == 0 {
            return Err(Error::InvalidConfig("num_negatives must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean sample loss and wall-clock seconds around the epoch loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Standard SGD on both towers: `u -= lr*g_u`, `v_pos -= lr*g_pos`, each
/// `v_neg -= lr*g_neg`.
pub fn apply_twobp(
    model: &mut EmbeddingModel,
    draw: &NegativeDraw,
    grads: &ContrastiveSampleGrad,
    learning_rate: f64,
) -> Result<()> {
    axpy(
        model.user_row_mut(draw.user),
        &grads.grad_user,
        -learning_rate,
    );
    axpy(
        model.item_row_mut(draw.positive),
        &grads.grad_positive,
        -learning_rate,
    );
    for (&item, grad) in draw.negatives.iter().zip(&grads.grad_negatives) {
        axpy(model.item_row_mut(item), grad, -learning_rate);
    }
    check_sample_rows(model, draw)
}

/// Items update by gradient first; the user then updates by moving
/// aggregation with the already-updated positive row:
/// `u = beta*u + (1-beta)*v_pos_new`. The user gradient is never applied.
pub fn apply_onebp(
    model: &mut EmbeddingModel,
    draw: &NegativeDraw,
    grads: &ContrastiveSampleGrad,
    learning_rate: f64,
    beta: f64,
) -> Result<()> {
    axpy(
        model.item_row_mut(draw.positive),
        &grads.grad_positive,
        -learning_rate,
    );
    for (&item, grad) in draw.negatives.iter().zip(&grads.grad_negatives) {
        axpy(model.item_row_mut(item), grad, -learning_rate);
    }
    aggregate_user_toward_item(model, draw.user, draw.positive, beta);
    check_sample_rows(model, draw)
}

/// Mirror image of [`apply_onebp`]: the user updates by gradient, the positive
/// item aggregates toward the updated user, negatives are not touched.
pub fn apply_useronlybp(
    model: &mut EmbeddingModel,
    draw: &NegativeDraw,
    grads: &ContrastiveSampleGrad,
    learning_rate: f64,
    beta: f64,
) -> Result<()> {
    axpy(
        model.user_row_mut(draw.user),
        &grads.grad_user,
        -learning_rate,
    );
    aggregate_item_toward_user(model, draw.positive, draw.user, beta);
    check_sample_rows(model, draw)
}

/// One pass over all (user, positive) train pairs: shuffle, batch, sample
/// negatives, compute gradients against the pre-batch snapshot, apply the
/// strategy's updates.
pub fn train_epoch(
    model: &mut EmbeddingModel,
    train: &InteractionDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats> {
    if model.num_users() != train.num_users() || model.num_items() != train.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "model {}x{} vs dataset {}x{}",
            model.num_users(),
            model.num_items(),
            train.num_users(),
            train.num_items()
        )));
    }
    if train.num_interactions() == 0 {
        return Err(Error::EmptyInput);
    }

    let start = Instant::now();
    let d = model.dim();
    let need_user_grad = matches!(cfg.strategy, Strategy::TwoBp | Strategy::UserOnlyBp);

    let mut pairs = train.interactions().to_vec();
    pairs.shuffle(rng);

    let mut scratch = GradScratch::new(d, cfg.num_negatives);
    let mut user_buf = vec![0.0f64; d];
    let mut pos_buf = vec![0.0f64; d];
    let mut negs_buf = vec![0.0f64; d * cfg.num_negatives];
    let mut user_acc = GradAccumulator::new(d);
    let mut item_acc = GradAccumulator::new(d);
    let mut draws: Vec<NegativeDraw> = Vec::with_capacity(cfg.batch_size);
    let mut total_loss = 0.0;

    for (batch_idx, batch) in pairs.chunks(cfg.batch_size).enumerate() {
        user_acc.clear();
        item_acc.clear();
        draws.clear();
        for &(user, positive) in batch {
            let negatives = sample_negatives(train, user, cfg.num_negatives, rng)?;
            draws.push(NegativeDraw {
                user,
                positive,
                negatives,
            });
        }

        // Gradients against the pre-batch snapshot: nothing mutates until the
        // apply phase below.
        for draw in &draws {
            widen(model.user_row(draw.user), &mut user_buf);
            widen(model.item_row(draw.positive), &mut pos_buf);
            negs_buf.resize(d * draw.negatives.len(), 0.0);
            for (k, &item) in draw.negatives.iter().enumerate() {
                widen(model.item_row(item), &mut negs_buf[k * d..(k + 1) * d]);
            }
            total_loss += grads_into(&mut scratch, &user_buf, &pos_buf, &negs_buf, need_user_grad);

            item_acc.add(draw.positive, &scratch.grad_positive);
            for (k, &item) in draw.negatives.iter().enumerate() {
                item_acc.add(item, &scratch.grad_negatives[k * d..(k + 1) * d]);
            }
            if need_user_grad {
                user_acc.add(draw.user, &scratch.grad_user);
            }
        }

        match cfg.strategy {
            Strategy::TwoBp => {
                user_acc.apply(model, Tower::Users, -cfg.learning_rate);
                item_acc.apply(model, Tower::Items, -cfg.learning_rate);
            }
            Strategy::OneBp => {
                item_acc.apply(model, Tower::Items, -cfg.learning_rate);
                for draw in &draws {
                    aggregate_user_toward_item(model, draw.user, draw.positive, cfg.beta);
                }
            }
            Strategy::UserOnlyBp => {
                user_acc.apply(model, Tower::Users, -cfg.learning_rate);
                for draw in &draws {
                    aggregate_item_toward_user(model, draw.positive, draw.user, cfg.beta);
                }
            }
        }

        let users_finite = user_acc
            .touched()
            .iter()
            .chain(draws.iter().map(|d| &d.user))
            .all(|&u| row_finite(model.user_row(u)));
        let items_finite = item_acc
            .touched()
            .iter()
            .chain(draws.iter().map(|d| &d.positive))
            .all(|&i| row_finite(model.item_row(i)));
        if !users_finite || !items_finite {
            return Err(Error::Diverged {
                epoch,
                batch: batch_idx,
            });
        }
    }

    Ok(EpochStats {
        epoch,
        mean_loss: total_loss / pairs.len() as f64,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `cfg.epochs` epochs, invoking `on_epoch` after each one (the hook is
/// where callers attach periodic evaluation or logging).
pub fn train<F: FnMut(&EpochStats)>(
    model: &mut EmbeddingModel,
    split: &DataSplit,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let s = train_epoch(model, &split.train, cfg, &mut rng, epoch)?;
        on_epoch(&s);
        stats.push(s);
    }
    Ok(stats)
}

/// All randomness flows from the single config seed; the epoch stream is a
/// fixed offset so it never collides with the model-init stream.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// JSON sidecar stored next to the model binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epochs_completed: usize,
}

/// Writes `model.bin` and its `model.json` sidecar into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: &EmbeddingModel,
    cfg: &TrainConfig,
    epochs_completed: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    model.write_binary(&mut bin)?;
    fs::write(dir.join("model.bin"), bin)?;
    let meta = CheckpointMeta {
        config: cfg.clone(),
        epochs_completed,
    };
    fs::write(dir.join("model.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let bytes = fs::read(path)?;
    EmbeddingModel::read_binary(bytes.as_slice())
}

fn axpy(row: &mut [f32], grad: &[f64], scale: f64) {
    for (r, &g) in row.iter_mut().zip(grad) {
        *r = (*r as f64 + scale * g) as f32;
    }
}

fn widen(row: &[f32], out: &mut [f64]) {
    for (o, &r) in out.iter_mut().zip(row) {
        *o = r as f64;
    }
}

fn row_finite(row: &[f32]) -> bool {
    row.iter().all(|v| v.is_finite())
}

fn blend(dst: &mut [f32], src: &[f32], beta: f64) {
    // beta == 1 degenerates to the identity; skip so rows stay bit-identical.
    if 1.0 - beta == 0.0 {
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (beta * *d as f64 + (1.0 - beta) * s as f64) as f32;
    }
}

fn aggregate_user_toward_item(model: &mut EmbeddingModel, user: u32, item: u32, beta: f64) {
    let src: Vec<f32> = model.item_row(item).to_vec();
    blend(model.user_row_mut(user), &src, beta);
}

fn aggregate_item_toward_user(model: &mut EmbeddingModel, item: u32, user: u32, beta: f64) {
    let src: Vec<f32> = model.user_row(user).to_vec();
    blend(model.item_row_mut(item), &src, beta);
}

fn check_sample_rows(model: &EmbeddingModel, draw: &NegativeDraw) -> Result<()> {
    let ok = row_finite(model.user_row(draw.user))
        && row_finite(model.item_row(draw.positive))
        && draw
            .negatives
            .iter()
            .all(|&i| row_finite(model.item_row(i)));
    if ok {
        Ok(())
    } else {
        Err(Error::Diverged { epoch: 0, batch: 0 })
    }
}

#[derive(Clone, Copy)]
enum Tower {
    Users,
    Items,
}

/// Sums gradients per row index, preserving first-touch order so application
/// is deterministic.
struct GradAccumulator {
    dim: usize,
    slot_of: HashMap<u32, usize>,
    order: Vec<u32>,
    data: Vec<f64>,
}

impl GradAccumulator {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            slot_of: HashMap::new(),
            order: Vec::new(),
            data: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.slot_of.clear();
        self.order.clear();
        self.data.clear();
    }

    fn add(&mut self, idx: u32, grad: &[f64]) {
        let slot = match self.slot_of.get(&idx) {
            Some(&s) => s,
            None => {
                let s = self.order.len();
                self.slot_of.insert(idx, s);
                self.order.push(idx);
                self.data.resize(self.data.len() + self.dim, 0.0);
                s
            }
        };
        for (acc, &g) in self.data[slot * self.dim..(slot + 1) * self.dim]
            .iter_mut()
            .zip(grad)
        {
            *acc += g;
        }
    }

    fn apply(&self, model: &mut EmbeddingModel, tower: Tower, scale: f64) {
        for (slot, &idx) in self.order.iter().enumerate() {
            let row = match tower {
                Tower::Users => model.user_row_mut(idx),
                Tower::Items => model.item_row_mut(idx),
            };
            axpy(
                row,
                &self.data[slot * self.dim..(slot + 1) * self.dim],
                scale,
            );
        }
    }

    fn touched(&self) -> &[u32] {
        &self.order
    }
}
