use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};
use crate::model::SimMatrix;

/// Which side supplies the queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalTask {
    /// Image queries rank sentences.
    #[serde(rename = "image_to_text")]
    ImageToText,
    /// Sentence queries rank images.
    #[serde(rename = "text_to_image")]
    TextToImage,
}

/// Recalls (in percent) for one retrieval task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub task: RetrievalTask,
    pub split: String,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Zero-based rank of the first ground-truth hit for each query.
    pub ranks: Vec<usize>,
}

impl RetrievalReport {
    fn from_ranks(task: RetrievalTask, split: &str, ranks: Vec<usize>) -> Self {
        let pct = |k: usize| 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64;
        RetrievalReport {
            task,
            split: split.to_string(),
            r1: pct(1),
            r5: pct(5),
            r10: pct(10),
            ranks,
        }
    }

    pub fn sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

/// Both retrieval tasks over one score matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub split: String,
    pub image_to_text: RetrievalReport,
    pub text_to_image: RetrievalReport,
    pub rsum: f64,
}

impl RetrievalSummary {
    pub fn recalls(&self) -> [f64; 6] {
        let (a, b) = (&self.image_to_text, &self.text_to_image);
        [a.r1, a.r5, a.r10, b.r1, b.r5, b.r10]
    }

    /// Recall fields keyed as in expectation files.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        let r = self.recalls();
        vec![
            ("i2t_r1", r[0]),
            ("i2t_r5", r[1]),
            ("i2t_r10", r[2]),
            ("t2i_r1", r[3]),
            ("t2i_r5", r[4]),
            ("t2i_r10", r[5]),
            ("rsum", self.rsum),
        ]
    }
}

/// Position of `target` when `scores` are sorted by descending value, ties
/// going to the smaller index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| s > t || (s == t && c < target))
        .count()
}

/// Recall@{1,5,10} in both tasks. `image_of[s]` is the row of the image
/// that sentence column `s` describes; an image query scores a hit when any
/// of its sentences is ranked within the cutoff.
pub fn recall_at_k(sim: &SimMatrix, image_of: &[usize], split: &str) -> Result<RetrievalSummary> {
    let (n, m) = sim.shape();
    if n == 0 || m == 0 {
        return Err(HireError::Empty("recall_at_k"));
    }
    if image_of.len() != m {
        return Err(HireError::shape("recall_at_k links", &[m], &[image_of.len()]));
    }
    let mut captions = vec![Vec::new(); n];
    for (s, &i) in image_of.iter().enumerate() {
        if i >= n {
            return Err(HireError::Dataset(format!("sentence {s} links to missing image row {i}")));
        }
        captions[i].push(s);
    }
    if let Some(i) = captions.iter().position(Vec::is_empty) {
        return Err(HireError::Dataset(format!("image row {i} has no ground-truth sentence")));
    }
    let s = &sim.scores;
    let i2t: Vec<usize> = (0..n)
        .map(|i| {
            let row = s.row(i);
            captions[i].iter().map(|&c| rank_of(row, c)).min().unwrap_or(usize::MAX)
        })
        .collect();
    let t2i: Vec<usize> = (0..m)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| s.at(i, j)).collect();
            rank_of(&col, image_of[j])
        })
        .collect();
    let a = RetrievalReport::from_ranks(RetrievalTask::ImageToText, split, i2t);
    let b = RetrievalReport::from_ranks(RetrievalTask::TextToImage, split, t2i);
    Ok(RetrievalSummary {
        split: split.to_string(),
        rsum: a.sum() + b.sum(),
        image_to_text: a,
        text_to_image: b,
    })
}

/// Splits images into `folds` contiguous blocks (with their sentences),
/// scores each block on its own and returns the per-fold summaries.
pub fn fold_summaries(sim: &SimMatrix, image_of: &[usize], folds: usize, split: &str) -> Result<Vec<RetrievalSummary>> {
    let (n, _) = sim.shape();
    if folds == 0 || folds > n {
        return Err(HireError::Config(format!("cannot split {n} images into {folds} folds")));
    }
    (0..folds)
        .map(|f| {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let cols: Vec<usize> = (0..image_of.len()).filter(|&s| (lo..hi).contains(&image_of[s])).collect();
            let data: Vec<f64> = (lo..hi)
                .flat_map(|i| cols.iter().map(move |&c| sim.scores.at(i, c)))
                .collect();
            let sub = SimMatrix::new(
                sim.image_ids[lo..hi].to_vec(),
                cols.iter().map(|&c| sim.sentence_ids[c].clone()).collect(),
                crate::numcore::Tensor::new(&[hi - lo, cols.len()], data)?,
            )?;
            let links: Vec<usize> = cols.iter().map(|&c| image_of[c] - lo).collect();
            recall_at_k(&sub, &links, &format!("{split}/fold{f}"))
        })
        .collect()
}

/// Averages recalls over folds; the rank lists are concatenated.
pub fn mean_summary(parts: &[RetrievalSummary], split: &str) -> Result<RetrievalSummary> {
    if parts.is_empty() {
        return Err(HireError::Empty("mean_summary"));
    }
    let k = parts.len() as f64;
    let avg = |task: RetrievalTask, pick: fn(&RetrievalSummary) -> &RetrievalReport| {
        let reports: Vec<&RetrievalReport> = parts.iter().map(pick).collect();
        RetrievalReport {
            task,
            split: split.to_string(),
            r1: reports.iter().map(|r| r.r1).sum::<f64>() / k,
            r5: reports.iter().map(|r| r.r5).sum::<f64>() / k,
            r10: reports.iter().map(|r| r.r10).sum::<f64>() / k,
            ranks: reports.iter().flat_map(|r| r.ranks.iter().copied()).collect(),
        }
    };
    let a = avg(RetrievalTask::ImageToText, |p| &p.image_to_text);
    let b = avg(RetrievalTask::TextToImage, |p| &p.text_to_image);
    Ok(RetrievalSummary {
        split: split.to_string(),
        rsum: a.sum() + b.sum(),
        image_to_text: a,
        text_to_image: b,
    })
}
