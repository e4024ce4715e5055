use serde::Serialize;

use super::hyper::Negatives;
use crate::error::{HireError, Result};
use crate::numcore::{broadcast_col, broadcast_row, Graph, Tensor, Var};

/// Bidirectional hinge ranking loss over a batch score block.
///
/// `scores[i][j]` compares image slot `i` with sentence slot `j`; pair `i`
/// is matched on the diagonal. `positive[i][j]` marks other matching
/// entries, which are never negatives. `extra_sentences` (`B × E`) and
/// `extra_images` (`E × B`) hold scores against sampled outside negatives.
pub fn ranking_loss<'g>(
    scores: Var<'g>,
    positive: &[Vec<bool>],
    margin: f64,
    mode: Negatives,
    extra_sentences: Option<Var<'g>>,
    extra_images: Option<Var<'g>>,
) -> Result<Var<'g>> {
    let (b, c) = scores.dims2();
    if b != c {
        return Err(HireError::shape("ranking_loss", &[b, c], &[b, b]));
    }
    if positive.len() != b || positive.iter().any(|r| r.len() != b) {
        return Err(HireError::shape("ranking_loss positives", &[b, b], &[positive.len()]));
    }
    let g = scores.graph();
    let neg = g.constant(&negative_mask(positive));
    let diag = scores.hadamard(g.constant(&Tensor::eye(b)))?.matmul(g.constant(&crate::numcore::ones_col(b)))?;

    // row i: [m - s_ii + s_ij]+ over sentences j
    let i2t = scores.sub(broadcast_col(diag, b)?)?.add_scalar(margin).relu().hadamard(neg)?;
    // column j: [m - s_jj + s_ij]+ over images i
    let t2i = scores.sub(broadcast_row(diag.t(), b)?)?.add_scalar(margin).relu().hadamard(neg)?;

    let mut i2t_parts = vec![i2t];
    if let Some(es) = extra_sentences {
        let e = es.dims2().1;
        i2t_parts.push(es.sub(broadcast_col(diag, e)?)?.add_scalar(margin).relu());
    }
    let mut t2i_parts = vec![t2i.t()];
    if let Some(ei) = extra_images {
        let e = ei.dims2().0;
        t2i_parts.push(ei.sub(broadcast_row(diag.t(), e)?)?.add_scalar(margin).relu().t());
    }
    let i2t = g.concat(&i2t_parts, crate::numcore::Axis::Cols)?;
    let t2i = g.concat(&t2i_parts, crate::numcore::Axis::Cols)?;
    Ok(match mode {
        Negatives::Sum => i2t.sum().add(t2i.sum())?,
        Negatives::Hardest => i2t.row_max()?.sum().add(t2i.row_max()?.sum())?,
    })
}

fn negative_mask(positive: &[Vec<bool>]) -> Tensor {
    let b = positive.len();
    let data = positive
        .iter()
        .flat_map(|r| r.iter().map(|&p| if p { 0.0 } else { 1.0 }))
        .collect();
    Tensor::new(&[b, b], data).expect("square positives")
}

/// Ranking loss of a fixed score matrix with the diagonal as the only
/// positives.
pub fn loss_rank(scores: &Tensor, margin: f64, mode: Negatives) -> Result<f64> {
    let (b, _) = scores.dims2();
    let positive: Vec<Vec<bool>> = (0..b).map(|i| (0..b).map(|j| i == j).collect()).collect();
    let g = Graph::inference(crate::numcore::DType::F64);
    Ok(ranking_loss(g.constant(scores), &positive, margin, mode, None, None)?.item())
}

/// Ranking loss between pooled intra-modal embeddings, one unit-norm row
/// per batch slot.
pub fn loss_add<'g>(
    image_rows: Var<'g>,
    text_rows: Var<'g>,
    positive: &[Vec<bool>],
    margin: f64,
    mode: Negatives,
) -> Result<Var<'g>> {
    ranking_loss(image_rows.matmul(text_rows.t())?, positive, margin, mode, None, None)
}

/// Score matrix with its row (image) and column (sentence) ids.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimMatrix {
    pub image_ids: Vec<String>,
    pub sentence_ids: Vec<String>,
    #[serde(skip)]
    pub scores: Tensor,
}

impl SimMatrix {
    pub fn new(image_ids: Vec<String>, sentence_ids: Vec<String>, scores: Tensor) -> Result<Self> {
        let (r, c) = scores.dims2();
        if r != image_ids.len() || c != sentence_ids.len() {
            return Err(HireError::shape("SimMatrix", &[r, c], &[image_ids.len(), sentence_ids.len()]));
        }
        if !scores.all_finite() {
            return Err(HireError::NonFinite("similarity scores".into()));
        }
        Ok(SimMatrix {
            image_ids,
            sentence_ids,
            scores,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dims2()
    }
}

/// Elementwise mean of two directional score matrices over identical ids.
pub fn ensemble_scores(a: &SimMatrix, b: &SimMatrix) -> Result<SimMatrix> {
    if a.shape() != b.shape() {
        let (x, y) = (a.shape(), b.shape());
        return Err(HireError::shape("ensemble_scores", &[x.0, x.1], &[y.0, y.1]));
    }
    if a.image_ids != b.image_ids {
        return Err(HireError::IdMismatch("image ids differ between score matrices".into()));
    }
    if a.sentence_ids != b.sentence_ids {
        return Err(HireError::IdMismatch("sentence ids differ between score matrices".into()));
    }
    let data = a
        .scores
        .data()
        .iter()
        .zip(b.scores.data())
        .map(|(x, y)| (x + y) / 2.0)
        .collect();
    SimMatrix::new(
        a.image_ids.clone(),
        a.sentence_ids.clone(),
        Tensor::new(a.scores.shape(), data)?,
    )
}
