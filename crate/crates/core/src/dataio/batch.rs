use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::records::{Dataset, SentenceRecord};
use crate::error::{HireError, Result};

/// One mini-batch of matched pairs, identified by sentence row (each
/// sentence is paired with its own image).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sentences: Vec<usize>,
    pub images: Vec<usize>,
    /// Extra negative images from outside the batch, shared by every query.
    pub extra_images: Vec<usize>,
    /// Extra negative sentences from outside the batch.
    pub extra_sentences: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// `positive[i][j]`: image of pair `i` is the image of sentence `j`.
    pub fn positives(&self) -> Vec<Vec<bool>> {
        self.images
            .iter()
            .map(|&img| self.images.iter().map(|&other| other == img).collect())
            .collect()
    }

    /// In-batch cross pairs `(image slot, sentence slot)` usable as negatives.
    pub fn cross_negatives(&self) -> Vec<(usize, usize)> {
        let pos = self.positives();
        let mut out = Vec::new();
        for (i, row) in pos.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !p {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Deterministic epoch iterator over matched pairs.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    extra: bool,
    rng: ChaCha8Rng,
}

impl<'a> BatchIter<'a> {
    /// Every pair appears exactly once per epoch; the permutation depends
    /// only on `(shuffle_seed, epoch)`.
    pub fn new(
        ds: &'a Dataset,
        batch_size: usize,
        shuffle_seed: u64,
        epoch: usize,
        extra_negatives: bool,
    ) -> Result<Self> {
        let n = ds.sentences.len();
        if batch_size < 2 {
            return Err(HireError::Config(format!(
                "batch_size must be at least 2, got {batch_size}"
            )));
        }
        if batch_size > n {
            return Err(HireError::Config(format!(
                "batch_size {batch_size} exceeds the {n} pairs in split {}",
                ds.split
            )));
        }
        let mut rng = epoch_rng(shuffle_seed, epoch, 0x5eed_ba7c);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(BatchIter {
            ds,
            order,
            batch_size,
            cursor: 0,
            extra: extra_negatives,
            rng,
        })
    }

    fn sample_extras(&mut self, images: &[usize], count: usize) -> (Vec<usize>, Vec<usize>) {
        let in_batch: HashSet<usize> = images.iter().copied().collect();
        let mut img_pool: Vec<usize> = (0..self.ds.images.len())
            .filter(|i| !in_batch.contains(i))
            .collect();
        let mut sent_pool: Vec<usize> = (0..self.ds.sentences.len())
            .filter(|&s| !in_batch.contains(&self.ds.image_of(s)))
            .collect();
        img_pool.shuffle(&mut self.rng);
        sent_pool.shuffle(&mut self.rng);
        img_pool.truncate(count);
        sent_pool.truncate(count);
        (img_pool, sent_pool)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let sentences = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let images: Vec<usize> = sentences.iter().map(|&s| self.ds.image_of(s)).collect();
        let (extra_images, extra_sentences) = if self.extra {
            self.sample_extras(&images, self.batch_size)
        } else {
            (Vec::new(), Vec::new())
        };
        Some(Batch {
            sentences,
            images,
            extra_images,
            extra_sentences,
        })
    }
}

pub(crate) fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ salt;
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Masks each word independently with probability `rate`; masked words get
/// zero feature vectors. The input record is left untouched.
pub fn mask_words<R: Rng>(sentence: &SentenceRecord, rate: f64, rng: &mut R) -> SentenceRecord {
    let mut out = sentence.clone();
    let (m, d) = (sentence.len(), sentence.features.cols());
    for j in 0..m {
        let hit = rate > 0.0 && rng.gen_bool(rate.min(1.0));
        out.mask[j] = hit;
        if hit {
            out.features.data_mut()[j * d..(j + 1) * d].fill(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, Dims, SynthConfig};

    fn ds(n: usize) -> Dataset {
        synth_generate(&SynthConfig::new(1, n, 1, Dims::TOY))
            .unwrap()
            .train
    }

    #[test]
    fn partitions_each_epoch() {
        let d = ds(4);
        let batches: Vec<Batch> = BatchIter::new(&d, 2, 9, 0, false).unwrap().collect();
        assert_eq!(batches.len(), 2);
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.sentences.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fixed_seed_reproduces_order_and_epochs_differ() {
        let d = ds(16);
        let run = |epoch| -> Vec<Batch> { BatchIter::new(&d, 4, 3, epoch, true).unwrap().collect() };
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn cross_negative_count() {
        let d = ds(8);
        for b in BatchIter::new(&d, 5, 0, 0, false).unwrap() {
            let n = b.len();
            // one caption per image, so every off-diagonal pair is a negative
            assert_eq!(b.cross_negatives().len(), n * (n - 1));
        }
    }

    #[test]
    fn extra_negatives_come_from_outside_the_batch() {
        let d = ds(12);
        for b in BatchIter::new(&d, 4, 0, 0, true).unwrap() {
            assert!(b.extra_images.len() <= 4 && !b.extra_images.is_empty());
            for &i in &b.extra_images {
                assert!(!b.images.contains(&i));
            }
            for &s in &b.extra_sentences {
                assert!(!b.images.contains(&d.image_of(s)));
            }
        }
    }

    #[test]
    fn rejects_bad_batch_sizes() {
        let d = ds(4);
        assert!(BatchIter::new(&d, 1, 0, 0, false).is_err());
        assert!(BatchIter::new(&d, 5, 0, 0, false).is_err());
    }

    #[test]
    fn mask_rate_zero_and_near_one() {
        let d = ds(2);
        let s = &d.sentences[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = mask_words(s, 0.0, &mut rng);
        assert!(out.mask.iter().all(|m| !m));
        assert_eq!(out.features, s.features);

        let out = mask_words(s, 1.0 - 1e-12, &mut rng);
        assert!(out.mask.iter().all(|&m| m));
        assert!(out.features.data().iter().all(|&x| x == 0.0));
        // original untouched
        assert!(s.features.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn mask_rate_monte_carlo() {
        let d = Dims {
            max_words: 10,
            ..Dims::TOY
        };
        let base = SentenceRecord {
            id: "s".into(),
            image_id: "i".into(),
            features: crate::numcore::Tensor::full(&[10, d.word_dim], 1.0),
            mask: vec![false; 10],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| mask_words(&base, 0.1, &mut rng).mask.iter().filter(|&&m| m).count())
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((0.95..=1.05).contains(&mean), "mean masked {mean}");
    }
}
