use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{iou, BoundingBox};
use crate::error::{HireError, Result};
use crate::nn::Linear;
use crate::numcore::{DType, Graph, ParamStore, Var};

/// How raw bilinear edge scores are turned into edge weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeNorm {
    /// Row softmax restricted to the mask support.
    #[default]
    Softmax,
    /// Raw scores, zeroed off the support.
    None,
}

/// Region connectivity for one image. Symmetric, with self-loops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RelGraph {
    pub k: usize,
    pub mask: Vec<bool>,
}

impl RelGraph {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.k + j]
    }

    pub fn edge_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|i| (0..self.k).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Connects `i` and `j` when their boxes overlap by IoU above `mu`, when a
/// scene-graph relation links them in either direction, or when `i == j`.
pub fn build_graph_mask(
    boxes: &[BoundingBox],
    sg_edges: &[(usize, usize)],
    mu: f64,
) -> Result<RelGraph> {
    let k = boxes.len();
    let mut mask = vec![false; k * k];
    for i in 0..k {
        mask[i * k + i] = true;
        for j in i + 1..k {
            if iou(&boxes[i], &boxes[j]) > mu {
                mask[i * k + j] = true;
                mask[j * k + i] = true;
            }
        }
    }
    for &(i, j) in sg_edges {
        if i >= k || j >= k {
            return Err(HireError::EdgeOutOfRange {
                image: String::new(),
                i,
                j,
                k,
            });
        }
        mask[i * k + j] = true;
        mask[j * k + i] = true;
    }
    Ok(RelGraph { k, mask })
}

/// Bilinear edge maps `Wφ`, `Wϕ`: `D → d_map` each, untied.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeParams {
    pub phi: Linear,
    pub varphi: Linear,
}

impl EdgeParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_map: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EdgeParams {
            phi: Linear::register(store, &format!("{prefix}.phi"), d_model, d_map, bias, dtype, rng)?,
            varphi: Linear::register(store, &format!("{prefix}.varphi"), d_model, d_map, bias, dtype, rng)?,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.phi.names().chain(self.varphi.names()).collect()
    }
}

/// `E = (V Wφ)(V Wϕ)ᵀ` on the mask support, normalized per `norm`.
pub fn edge_weights<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &EdgeParams,
    v: Var<'g>,
    graph: &RelGraph,
    norm: EdgeNorm,
) -> Result<Var<'g>> {
    let k = v.dims2().0;
    if k != graph.k {
        return Err(HireError::shape("edge_weights", &[k, k], &[graph.k, graph.k]));
    }
    let a = params.phi.forward(g, store, v)?;
    let b = params.varphi.forward(g, store, v)?;
    let raw = a.matmul(b.t())?;
    match norm {
        EdgeNorm::Softmax => raw.softmax_rows(Some(&graph.mask)),
        EdgeNorm::None => {
            let support = g.constant(&mask_tensor(graph));
            raw.hadamard(support)
        }
    }
}

fn mask_tensor(graph: &RelGraph) -> crate::numcore::Tensor {
    let data = graph.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    crate::numcore::Tensor::new(&[graph.k, graph.k], data).expect("square mask")
}

/// Graph convolution `W^g` and the residual-path map `W^r`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgcnParams {
    pub gcn: Linear,
    pub residual: Linear,
}

impl RgcnParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(RgcnParams {
            gcn: Linear::register(store, &format!("{prefix}.gcn"), d_model, d_model, bias, dtype, rng)?,
            residual: Linear::register(store, &format!("{prefix}.residual"), d_model, d_model, bias, dtype, rng)?,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.gcn.names().chain(self.residual.names()).collect()
    }
}

/// `V^G = ((E V) W^g) W^r + V`.
pub fn rgcn<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &RgcnParams,
    v: Var<'g>,
    e: Var<'g>,
) -> Result<Var<'g>> {
    let propagated = params.gcn.forward(g, store, e.matmul(v)?)?;
    params.residual.forward(g, store, propagated)?.add(v)
}

/// Inspection record for one image's graph.
#[derive(Clone, Debug, Serialize)]
pub struct GraphDump {
    pub image_id: String,
    pub k: usize,
    pub mask: Vec<Vec<bool>>,
    pub edges: Vec<Vec<f64>>,
}

impl GraphDump {
    pub fn new(image_id: &str, graph: &RelGraph, e: &crate::numcore::Tensor) -> Self {
        let k = graph.k;
        GraphDump {
            image_id: image_id.to_string(),
            k,
            mask: (0..k).map(|i| graph.mask[i * k..(i + 1) * k].to_vec()).collect(),
            edges: (0..k).map(|i| e.row(i).to_vec()).collect(),
        }
    }
}
