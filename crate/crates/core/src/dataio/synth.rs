//! Desk-scale synthetic datasets.
//!
//! Each image draws a latent vector; its regions and every word of its
//! captions are noisy images of that latent under two fixed random linear
//! maps (one per modality). A model that learns to undo the maps can match
//! captions to images, which is what the retrieval tests rely on.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bbox::BoundingBox;
use super::format::write_dataset;
use super::records::{Dataset, Dims, ImageRecord, SentenceRecord};
use crate::error::{HireError, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub captions_per_image: usize,
    pub dims: Dims,
    /// Held-out images written to the `val` split.
    pub val_images: usize,
    pub latent_dim: usize,
    /// Per-fragment deviation from the shared latent.
    pub spread: f64,
    /// Probability of a scene-graph edge between two regions.
    pub edge_prob: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_images: usize, captions_per_image: usize, dims: Dims) -> Self {
        SynthConfig {
            seed,
            n_images,
            captions_per_image,
            dims,
            val_images: (n_images / 4).max(2),
            latent_dim: 8,
            spread: 0.3,
            edge_prob: 0.15,
        }
    }
}

/// Train and held-out splits drawn from one generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub train: Dataset,
    pub val: Dataset,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

struct Generator {
    rng: ChaCha8Rng,
    cfg: SynthConfig,
    region_map: Vec<f64>,
    word_map: Vec<f64>,
}

impl Generator {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
        let mut map = |out: usize| -> Vec<f64> {
            (0..cfg.latent_dim * out)
                .map(|_| normal(&mut rng) * scale)
                .collect()
        };
        let region_map = map(cfg.dims.region_dim);
        let word_map = map(cfg.dims.word_dim);
        Generator {
            rng,
            cfg: cfg.clone(),
            region_map,
            word_map,
        }
    }

    fn fragment(&mut self, latent: &[f64], map: &[f64], out: usize) -> Vec<f64> {
        let l = latent.len();
        let jitter: Vec<f64> = latent
            .iter()
            .map(|z| z + self.cfg.spread * normal(&mut self.rng))
            .collect();
        (0..out)
            .map(|c| {
                let v: f64 = (0..l).map(|k| jitter[k] * map[k * out + c]).sum();
                f32_round(v + 0.05 * normal(&mut self.rng))
            })
            .collect()
    }

    fn boxes(&mut self) -> Vec<BoundingBox> {
        (0..self.cfg.dims.regions)
            .map(|_| {
                let x1 = self.rng.gen_range(0.0f32..80.0).round();
                let y1 = self.rng.gen_range(0.0f32..80.0).round();
                let w = self.rng.gen_range(5.0f32..40.0).round();
                let h = self.rng.gen_range(5.0f32..40.0).round();
                BoundingBox {
                    x1,
                    y1,
                    x2: x1 + w,
                    y2: y1 + h,
                }
            })
            .collect()
    }

    fn edges(&mut self) -> Vec<(usize, usize)> {
        let k = self.cfg.dims.regions;
        let mut out = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j && self.rng.gen_bool(self.cfg.edge_prob / 2.0) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn split(&mut self, name: &str, prefix: &str, n: usize) -> Result<Dataset> {
        let d = self.cfg.dims;
        let mut images = Vec::with_capacity(n);
        let mut sentences = Vec::with_capacity(n * self.cfg.captions_per_image);
        for i in 0..n {
            let latent: Vec<f64> = (0..self.cfg.latent_dim)
                .map(|_| normal(&mut self.rng))
                .collect();
            let region_map = std::mem::take(&mut self.region_map);
            let mut feats = Vec::with_capacity(d.regions * d.region_dim);
            for _ in 0..d.regions {
                feats.extend(self.fragment(&latent, &region_map, d.region_dim));
            }
            self.region_map = region_map;
            let id = format!("{prefix}img{i:05}");
            images.push(ImageRecord {
                id: id.clone(),
                features: Tensor::new(&[d.regions, d.region_dim], feats)?,
                boxes: self.boxes(),
                sg_edges: self.edges(),
            });

            let word_map = std::mem::take(&mut self.word_map);
            for c in 0..self.cfg.captions_per_image {
                let lo = (d.max_words / 2).max(1);
                let m = self.rng.gen_range(lo..=d.max_words);
                let mut feats = Vec::with_capacity(m * d.word_dim);
                for _ in 0..m {
                    feats.extend(self.fragment(&latent, &word_map, d.word_dim));
                }
                sentences.push(SentenceRecord {
                    id: format!("{id}_cap{c}"),
                    image_id: id.clone(),
                    features: Tensor::new(&[m, d.word_dim], feats)?,
                    mask: vec![false; m],
                });
            }
            self.word_map = word_map;
        }
        Dataset::new(name, d, self.cfg.captions_per_image, images, sentences)
    }
}

/// Generates the train and held-out splits. Deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_images < 2 {
        return Err(HireError::Config(format!(
            "synthetic data needs at least 2 images to form negatives, got {}",
            cfg.n_images
        )));
    }
    if cfg.captions_per_image == 0 || cfg.latent_dim == 0 {
        return Err(HireError::Config(
            "captions_per_image and latent_dim must be positive".into(),
        ));
    }
    let mut gen = Generator::new(cfg);
    let train = gen.split("train", "", cfg.n_images)?;
    let val = gen.split("val", "val_", cfg.val_images.max(2))?;
    Ok(SynthData { train, val })
}

/// Generates and writes `<out>/train` and `<out>/val`.
pub fn synth_write(cfg: &SynthConfig, out: &Path) -> Result<SynthData> {
    let data = synth_generate(cfg)?;
    write_dataset(&data.train, &out.join("train"))?;
    write_dataset(&data.val, &out.join("val"))?;
    Ok(data)
}
