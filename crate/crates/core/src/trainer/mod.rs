//! Optimization loop: shuffled batches, word masking, Adam with step decay,
//! per-epoch validation and checkpointing.

mod adam;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, grad_norm, lr_schedule, Adam, AdamConfig};

use crate::dataio::{epoch_rng, mask_words, BatchIter, Dataset};
use crate::error::{HireError, Result};
use crate::evaluator::{recall_at_k, RetrievalSummary};
use crate::model::{load_checkpoint, save_checkpoint, BatchInput, HireModel};
use crate::numcore::Graph;

const MASK_SALT: u64 = 0x6d61_736b;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_rate: f64,
    /// Drives data order and word masking.
    pub shuffle_seed: u64,
    pub extra_negatives: bool,
    pub grad_clip: Option<f64>,
    /// Stops after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Stops once validation rSum reaches this value.
    pub stop_at_rsum: Option<f64>,
    /// Warm start from a checkpoint with the same parameter layout.
    pub init_from: Option<PathBuf>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            lr_decay: 0.1,
            lr_decay_every: 15,
            epochs: 30,
            batch_size: 80,
            mask_rate: 0.1,
            shuffle_seed: 0,
            extra_negatives: false,
            grad_clip: None,
            max_steps: None,
            stop_at_rsum: None,
            init_from: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HireError::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.lr_decay_every == 0 {
            return bad(format!("lr_decay_every must be positive, got {}", self.lr_decay_every));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate must lie in [0, 1), got {}", self.mask_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr, self.lr_decay, self.lr_decay_every, epoch)
    }
}

/// Validation recalls in one log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub i2t_r1: f64,
    pub i2t_r5: f64,
    pub i2t_r10: f64,
    pub t2i_r1: f64,
    pub t2i_r5: f64,
    pub t2i_r10: f64,
    pub rsum: f64,
}

impl From<&RetrievalSummary> for ValRecord {
    fn from(s: &RetrievalSummary) -> Self {
        let r = s.recalls();
        ValRecord {
            i2t_r1: r[0],
            i2t_r5: r[1],
            i2t_r10: r[2],
            t2i_r1: r[3],
            t2i_r5: r[4],
            t2i_r10: r[5],
            rsum: s.rsum,
        }
    }
}

/// One metrics line per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Means over the epoch's steps.
    pub loss: f64,
    pub loss_rank: f64,
    pub loss_add: f64,
    pub val: Option<ValRecord>,
    pub best: bool,
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// `(epoch, rsum)` of the best validation result.
    pub best: Option<(usize, f64)>,
    /// Parameters with a nonzero gradient at some step.
    pub touched: BTreeSet<String>,
    pub steps: usize,
}

/// Copies parameter values from a checkpoint into `model`.
pub fn warm_start(model: &mut HireModel, path: &Path) -> Result<()> {
    let src = load_checkpoint(path)?;
    for (name, t) in model.store.iter_mut() {
        let s = src
            .store
            .get(name)
            .ok_or_else(|| HireError::Checkpoint(format!("{}: no parameter {name}", path.display())))?;
        if s.shape() != t.shape() {
            return Err(HireError::Checkpoint(format!(
                "{}: {name} has shape {:?}, expected {:?}",
                path.display(),
                s.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(s.data());
    }
    Ok(())
}

/// Trains `model` in place. With `out_dir`, writes one JSON line per epoch
/// to `metrics.jsonl` and saves `best.ckpt` / `last.ckpt`.
pub fn train(
    model: &mut HireModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(p) = &cfg.init_from {
        warm_start(model, p)?;
    }
    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HireError::io(dir, e))?;
            let p = dir.join(METRICS_FILE);
            Some((fs::File::create(&p).map_err(|e| HireError::io(&p, e))?, p))
        }
        None => None,
    };
    let mut opt = Adam::new(cfg.adam);
    model.store.zero_grad();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut touched = BTreeSet::new();
    let mut steps = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut mask_rng = epoch_rng(cfg.shuffle_seed, epoch, MASK_SALT);
        let (mut sum, mut sum_rank, mut sum_add, mut n) = (0.0, 0.0, 0.0, 0usize);
        let mut stop = false;
        let bs = cfg.batch_size.min(train_set.sentences.len());
        for batch in BatchIter::new(train_set, bs, cfg.shuffle_seed, epoch, cfg.extra_negatives)? {
            let mut mask = |s: usize| {
                let rec = &train_set.sentences[s];
                let masked = mask_words(rec, cfg.mask_rate, &mut mask_rng);
                if masked.mask.iter().all(|&m| m) {
                    rec.clone()
                } else {
                    masked
                }
            };
            let mut images: Vec<usize> = Vec::new();
            let pair_image = batch
                .images
                .iter()
                .map(|&img| match images.iter().position(|&i| i == img) {
                    Some(p) => p,
                    None => {
                        images.push(img);
                        images.len() - 1
                    }
                })
                .collect();
            let input = BatchInput {
                images: images.iter().map(|&i| &train_set.images[i]).collect(),
                pair_image,
                sentences: batch.sentences.iter().map(|&s| mask(s)).collect(),
                extra_images: batch.extra_images.iter().map(|&i| &train_set.images[i]).collect(),
                extra_sentences: batch.extra_sentences.iter().map(|&s| mask(s)).collect(),
            };

            let g = Graph::new(model.hyper.dtype);
            let loss = model.batch_loss(&g, &input)?;
            let (total, rank, add) = (loss.total.item(), loss.rank.item(), loss.add.item());
            if !total.is_finite() {
                return Err(HireError::NonFinite(format!(
                    "loss {total} at epoch {epoch}, step {steps}"
                )));
            }
            let grads = g.backward(loss.total)?;
            grads.accumulate_into(&mut model.store)?;
            drop(grads);
            for (name, t) in model.store.iter() {
                if !touched.contains(name) && t.grad().is_some_and(|g| g.iter().any(|&x| x != 0.0)) {
                    touched.insert(name.to_string());
                }
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut model.store, c);
            }
            opt.step(&mut model.store, lr)?;
            steps += 1;
            sum += total;
            sum_rank += rank;
            sum_add += add;
            n += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
        }

        let summary = match val_set {
            Some(v) => {
                let sim = model.score_dataset(v)?;
                let links: Vec<usize> = (0..v.sentences.len()).map(|s| v.image_of(s)).collect();
                Some(recall_at_k(&sim, &links, &v.split)?)
            }
            None => None,
        };
        let is_best = match &summary {
            Some(s) => best.map_or(true, |(_, b)| s.rsum > b),
            None => false,
        };
        if is_best {
            best = summary.as_ref().map(|s| (epoch, s.rsum));
        }
        let nf = n.max(1) as f64;
        let record = EpochRecord {
            epoch,
            steps: n,
            lr,
            loss: sum / nf,
            loss_rank: sum_rank / nf,
            loss_add: sum_add / nf,
            val: summary.as_ref().map(ValRecord::from),
            best: is_best,
        };
        if let Some((f, p)) = metrics.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(f, "{line}").map_err(|e| HireError::io(p.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            if is_best {
                save_checkpoint(model, &dir.join(BEST_CHECKPOINT))?;
            }
            save_checkpoint(model, &dir.join(LAST_CHECKPOINT))?;
        }
        log.push(record);
        let reached = match (cfg.stop_at_rsum, &summary) {
            (Some(t), Some(s)) => s.rsum >= t,
            _ => false,
        };
        if stop || reached {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        log,
        best,
        touched,
        steps,
    })
}

#[cfg(test)]
mod tests;
