use super::loss::{loss_add, ranking_loss};
use super::pipeline::{HireModel, ImageEnc, TextEnc};
use crate::dataio::{ImageRecord, SentenceRecord};
use crate::error::{HireError, Result};
use crate::numcore::{Axis, Graph, Var};

/// Records for one optimization step. Pair `i` is `sentences[i]` with
/// `images[pair_image[i]]`; `images` holds each distinct image once.
pub struct BatchInput<'a> {
    pub images: Vec<&'a ImageRecord>,
    pub pair_image: Vec<usize>,
    pub sentences: Vec<SentenceRecord>,
    pub extra_images: Vec<&'a ImageRecord>,
    pub extra_sentences: Vec<SentenceRecord>,
}

pub struct BatchLoss<'g> {
    pub rank: Var<'g>,
    pub add: Var<'g>,
    /// `rank + add`.
    pub total: Var<'g>,
    /// Batch score block, pair slots on both axes.
    pub scores: Var<'g>,
}

impl HireModel {
    pub fn batch_loss<'g>(&self, g: &'g Graph, input: &BatchInput<'_>) -> Result<BatchLoss<'g>> {
        let b = input.sentences.len();
        if b == 0 || input.pair_image.len() != b {
            return Err(HireError::Dataset(format!(
                "batch has {b} sentences and {} image links",
                input.pair_image.len()
            )));
        }
        if input.pair_image.iter().any(|&i| i >= input.images.len()) {
            return Err(HireError::Dataset("batch image link out of range".into()));
        }
        let imgs: Vec<ImageEnc<'g>> = input
            .images
            .iter()
            .map(|r| self.encode_image(g, r))
            .collect::<Result<_>>()?;
        let txts: Vec<TextEnc<'g>> = input
            .sentences
            .iter()
            .map(|r| self.encode_text(g, r))
            .collect::<Result<_>>()?;
        let slot_imgs: Vec<&ImageEnc<'g>> = input.pair_image.iter().map(|&i| &imgs[i]).collect();
        let txt_refs: Vec<&TextEnc<'g>> = txts.iter().collect();
        let positive: Vec<Vec<bool>> = input
            .pair_image
            .iter()
            .map(|&i| input.pair_image.iter().map(|&j| i == j).collect())
            .collect();

        // distinct images, then expand to pair slots
        let distinct: Vec<&ImageEnc<'g>> = imgs.iter().collect();
        let block = self.score_block(g, &distinct, &txt_refs)?;
        let scores = expand_rows(g, block, &input.pair_image)?;

        let extra_s = if input.extra_sentences.is_empty() {
            None
        } else {
            let ext: Vec<TextEnc<'g>> = input
                .extra_sentences
                .iter()
                .map(|r| self.encode_text(g, r))
                .collect::<Result<_>>()?;
            let refs: Vec<&TextEnc<'g>> = ext.iter().collect();
            Some(expand_rows(g, self.score_block(g, &distinct, &refs)?, &input.pair_image)?)
        };
        let extra_i = if input.extra_images.is_empty() {
            None
        } else {
            let ext: Vec<ImageEnc<'g>> = input
                .extra_images
                .iter()
                .map(|r| self.encode_image(g, r))
                .collect::<Result<_>>()?;
            let refs: Vec<&ImageEnc<'g>> = ext.iter().collect();
            Some(self.score_block(g, &refs, &txt_refs)?)
        };
        let h = &self.hyper;
        let rank = ranking_loss(scores, &positive, h.margin, h.negatives, extra_s, extra_i)?;

        let img_rows = slot_imgs
            .iter()
            .map(|e| self.image_embedding(e))
            .collect::<Result<Vec<_>>>()?;
        let txt_rows = txts
            .iter()
            .map(|e| self.text_embedding(e))
            .collect::<Result<Vec<_>>>()?;
        let add = loss_add(
            g.concat(&img_rows, Axis::Rows)?,
            g.concat(&txt_rows, Axis::Rows)?,
            &positive,
            h.margin,
            h.negatives,
        )?;
        Ok(BatchLoss {
            rank,
            add,
            total: rank.add(add)?,
            scores,
        })
    }
}

/// Row `i` of the result is row `index[i]` of `x`.
fn expand_rows<'g>(g: &'g Graph, x: Var<'g>, index: &[usize]) -> Result<Var<'g>> {
    let n = x.dims2().0;
    if index.len() == n && index.iter().enumerate().all(|(i, &j)| i == j) {
        return Ok(x);
    }
    let mut sel = crate::numcore::Tensor::zeros(&[index.len(), n]);
    for (r, &i) in index.iter().enumerate() {
        sel.data_mut()[r * n + i] = 1.0;
    }
    g.constant(&sel).matmul(x)
}
