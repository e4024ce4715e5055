//! Directional matching models: input projections, the staged pipeline,
//! losses, scoring and checkpoints.

mod batch;
mod checkpoint;
mod hyper;
mod loss;
mod pipeline;

use rayon::prelude::*;

pub use batch::{BatchInput, BatchLoss};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use hyper::{Components, Direction, HyperParams, Negatives, Ordering, Pool};
pub use loss::{ensemble_scores, loss_add, loss_rank, ranking_loss, SimMatrix};
pub use pipeline::{pool_rows, FrozenImage, FrozenText, HireModel, ImageEnc, PairOut, TextEnc};

use crate::dataio::Dataset;
use crate::error::Result;
use crate::inter::BetaDump;
use crate::intra::GraphDump;
use crate::numcore::{Graph, Tensor};

impl HireModel {
    /// Encodes every image and sentence of `ds` once, without gradients.
    pub fn freeze_dataset(&self, ds: &Dataset) -> Result<(Vec<FrozenImage>, Vec<FrozenText>)> {
        let dt = self.hyper.dtype;
        let images = ds
            .images
            .par_iter()
            .map(|rec| {
                let g = Graph::inference(dt);
                Ok(self.encode_image(&g, rec)?.freeze())
            })
            .collect::<Result<Vec<_>>>()?;
        let texts = ds
            .sentences
            .par_iter()
            .map(|rec| {
                let g = Graph::inference(dt);
                Ok(self.encode_text(&g, rec)?.freeze())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((images, texts))
    }

    /// Full `images × sentences` similarity matrix of a dataset.
    pub fn score_dataset(&self, ds: &Dataset) -> Result<SimMatrix> {
        let (images, texts) = self.freeze_dataset(ds)?;
        let dt = self.hyper.dtype;
        let rows = images
            .par_iter()
            .map(|img| {
                texts
                    .iter()
                    .map(|txt| {
                        let g = Graph::inference(dt);
                        let (i, t) = (img.thaw(&g), txt.thaw(&g));
                        Ok(self.pair_score(&g, &i, &t)?.score.item())
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let (n, m) = (images.len(), texts.len());
        let scores = Tensor::new(&[n, m], rows.into_iter().flatten().collect())?;
        SimMatrix::new(
            ds.images.iter().map(|r| r.id.clone()).collect(),
            ds.sentences.iter().map(|r| r.id.clone()).collect(),
            scores,
        )
    }

    /// Attention maps and graph of one image-sentence pair, for inspection.
    pub fn inspect_pair(
        &self,
        ds: &Dataset,
        image: usize,
        sentence: usize,
        top_k: usize,
    ) -> Result<(GraphDump, Vec<BetaDump>)> {
        let g = Graph::inference(self.hyper.dtype);
        let (irec, srec) = (&ds.images[image], &ds.sentences[sentence]);
        let img = self.encode_image(&g, irec)?;
        let txt = self.encode_text(&g, srec)?;
        let k = img.graph.k;
        let e = img.edges.map_or_else(|| Tensor::zeros(&[k, k]), |v| v.to_tensor());
        let graph = GraphDump::new(&irec.id, &img.graph, &e);
        let (qid, cid) = match self.direction() {
            Direction::ImageToText => (&irec.id, &srec.id),
            Direction::TextToImage => (&srec.id, &irec.id),
        };
        let out = self.pair_score(&g, &img, &txt)?;
        let betas = out
            .betas
            .map(|bs| {
                bs.iter()
                    .enumerate()
                    .map(|(p, b)| BetaDump::new(qid, cid, p + 1, &b.to_tensor(), top_k))
                    .collect()
            })
            .unwrap_or_default();
        Ok((graph, betas))
    }
}
