use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::hyper::{Direction, HyperParams, Ordering, Pool};
use crate::dataio::{ImageRecord, SentenceRecord};
use crate::error::{HireError, Result};
use crate::inter::{
    local_global, local_local, pool_and_score, AnchorPolicy, FusionParams, GateParams, LocalLocal,
};
use crate::intra::{build_graph_mask, edge_weights, rgcn, EdgeParams, RelGraph, RgcnParams, SelfAttnParams};
use crate::nn::Linear;
use crate::numcore::{Axis, Graph, ParamStore, Tensor, Var};

/// One directional model: its settings, parameter layout and values.
#[derive(Clone, Debug)]
pub struct HireModel {
    pub hyper: HyperParams,
    pub region_dim: usize,
    pub word_dim: usize,
    pub store: ParamStore,
    pub proj_image: Linear,
    pub proj_text: Linear,
    pub vsa: SelfAttnParams,
    pub tsa: SelfAttnParams,
    pub edges: EdgeParams,
    pub rgcn: RgcnParams,
    pub fuse: [FusionParams; 2],
    pub gate: GateParams,
}

/// Per-image encodings recorded on a tape.
#[derive(Clone)]
pub struct ImageEnc<'g> {
    /// `V`: projected region features.
    pub projected: Var<'g>,
    /// Self-attention output (`V^A`).
    pub attended: Var<'g>,
    /// Final intra-modal output (`V^G` in the default ordering).
    pub intra: Var<'g>,
    /// Edge weights when the graph branch ran.
    pub edges: Option<Var<'g>>,
    pub graph: RelGraph,
}

/// Per-sentence encodings recorded on a tape.
#[derive(Clone)]
pub struct TextEnc<'g> {
    /// `T`: projected word features.
    pub projected: Var<'g>,
    /// Self-attention output (`T^A`).
    pub intra: Var<'g>,
    /// `valid[j]`: word `j` was not masked.
    pub valid: Vec<bool>,
    /// Rows entering the pooled sentence vector; `None` means all.
    pub pool: Option<Vec<bool>>,
}

/// Tape-free copy of an [`ImageEnc`].
#[derive(Clone, Debug)]
pub struct FrozenImage {
    pub projected: Tensor,
    pub attended: Tensor,
    pub intra: Tensor,
    pub graph: RelGraph,
}

/// Tape-free copy of a [`TextEnc`].
#[derive(Clone, Debug)]
pub struct FrozenText {
    pub projected: Tensor,
    pub intra: Tensor,
    pub valid: Vec<bool>,
    pub pool: Option<Vec<bool>>,
}

impl ImageEnc<'_> {
    pub fn freeze(&self) -> FrozenImage {
        FrozenImage {
            projected: self.projected.to_tensor(),
            attended: self.attended.to_tensor(),
            intra: self.intra.to_tensor(),
            graph: self.graph.clone(),
        }
    }
}

impl FrozenImage {
    pub fn thaw<'g>(&self, g: &'g Graph) -> ImageEnc<'g> {
        ImageEnc {
            projected: g.constant(&self.projected),
            attended: g.constant(&self.attended),
            intra: g.constant(&self.intra),
            edges: None,
            graph: self.graph.clone(),
        }
    }
}

impl TextEnc<'_> {
    pub fn freeze(&self) -> FrozenText {
        FrozenText {
            projected: self.projected.to_tensor(),
            intra: self.intra.to_tensor(),
            valid: self.valid.clone(),
            pool: self.pool.clone(),
        }
    }
}

impl FrozenText {
    pub fn thaw<'g>(&self, g: &'g Graph) -> TextEnc<'g> {
        TextEnc {
            projected: g.constant(&self.projected),
            intra: g.constant(&self.intra),
            valid: self.valid.clone(),
            pool: self.pool.clone(),
        }
    }
}

/// Score of one image-sentence pair plus the attention maps behind it.
pub struct PairOut<'g> {
    pub score: Var<'g>,
    pub betas: Option<[Var<'g>; 2]>,
}

impl HireModel {
    /// Registers every parameter (including those of disabled components)
    /// with values drawn from `seed`.
    pub fn new(hyper: HyperParams, region_dim: usize, word_dim: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if region_dim == 0 || word_dim == 0 {
            return Err(HireError::Config("input feature widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, dt, b) = (hyper.d_model, hyper.dtype, hyper.bias);
        let proj_image = Linear::register(&mut store, "proj.image", region_dim, d, b, dt, &mut rng)?;
        let proj_text = Linear::register(&mut store, "proj.text", word_dim, d, b, dt, &mut rng)?;
        let vsa = SelfAttnParams::register(&mut store, "vsa", d, hyper.heads, hyper.d_ff(), b, dt, &mut rng)?;
        let tsa = SelfAttnParams::register(&mut store, "tsa", d, hyper.heads, hyper.d_ff(), b, dt, &mut rng)?;
        let edges = EdgeParams::register(&mut store, "graph", d, hyper.d_map, b, dt, &mut rng)?;
        let rgcn = RgcnParams::register(&mut store, "rgcn", d, b, dt, &mut rng)?;
        let fuse = [
            FusionParams::register(&mut store, "fuse1", d, b, dt, &mut rng)?,
            FusionParams::register(&mut store, "fuse2", d, b, dt, &mut rng)?,
        ];
        let gate = GateParams::register(&mut store, "gate", d, b, dt, &mut rng)?;
        Ok(HireModel {
            hyper,
            region_dim,
            word_dim,
            store,
            proj_image,
            proj_text,
            vsa,
            tsa,
            edges,
            rgcn,
            fuse,
            gate,
        })
    }

    pub fn direction(&self) -> Direction {
        self.hyper.direction
    }

    /// Parameter names owned by each component switch.
    pub fn component_params(&self, component: &str) -> Vec<String> {
        let own = |v: Vec<&str>| v.into_iter().map(String::from).collect();
        match component {
            "vsa" => own(self.vsa.names()),
            "tsa" => own(self.tsa.names()),
            "vssg" => own([self.edges.names(), self.rgcn.names()].concat()),
            "llii" => own([self.fuse[0].names(), self.fuse[1].names()].concat()),
            "lgii" => own(self.gate.names()),
            _ => Vec::new(),
        }
    }

    pub fn image_graph(&self, rec: &ImageRecord) -> Result<RelGraph> {
        build_graph_mask(&rec.boxes, &rec.sg_edges, self.hyper.mu).map_err(|e| match e {
            HireError::EdgeOutOfRange { i, j, k, .. } => HireError::EdgeOutOfRange {
                image: rec.id.clone(),
                i,
                j,
                k,
            },
            other => other,
        })
    }

    /// Intra-modal image stages over `v` in the configured order. Returns
    /// `(attended, intra, edges)`.
    fn image_intra<'g>(
        &self,
        g: &'g Graph,
        v: Var<'g>,
        graph: &RelGraph,
    ) -> Result<(Var<'g>, Var<'g>, Option<Var<'g>>)> {
        let c = &self.hyper.components;
        let sa = |x| -> Result<Var<'g>> {
            if c.vsa {
                self.vsa.forward(g, &self.store, x, None)
            } else {
                Ok(x)
            }
        };
        let gcn = |x| -> Result<(Var<'g>, Option<Var<'g>>)> {
            if c.vssg {
                let e = edge_weights(g, &self.store, &self.edges, x, graph, self.hyper.edge_norm)?;
                Ok((rgcn(g, &self.store, &self.rgcn, x, e)?, Some(e)))
            } else {
                Ok((x, None))
            }
        };
        if self.hyper.ordering == Ordering::A21B34 {
            let (vg, e) = gcn(v)?;
            let va = sa(vg)?;
            Ok((va, va, e))
        } else {
            let va = sa(v)?;
            let (vg, e) = gcn(va)?;
            Ok((va, vg, e))
        }
    }

    fn text_intra<'g>(&self, g: &'g Graph, t: Var<'g>, valid: &[bool]) -> Result<Var<'g>> {
        if self.hyper.components.tsa {
            let v = (!valid.iter().all(|&x| x)).then_some(valid);
            self.tsa.forward(g, &self.store, t, v)
        } else {
            Ok(t)
        }
    }

    pub fn encode_image<'g>(&self, g: &'g Graph, rec: &ImageRecord) -> Result<ImageEnc<'g>> {
        let graph = self.image_graph(rec)?;
        let x = g.constant(&rec.features);
        let projected = self.proj_image.forward(g, &self.store, x)?;
        let (attended, intra, edges) = self.image_intra(g, projected, &graph)?;
        Ok(ImageEnc {
            projected,
            attended,
            intra,
            edges,
            graph,
        })
    }

    pub fn encode_text<'g>(&self, g: &'g Graph, rec: &SentenceRecord) -> Result<TextEnc<'g>> {
        let valid: Vec<bool> = rec.mask.iter().map(|&m| !m).collect();
        if !valid.iter().any(|&v| v) {
            return Err(HireError::InvalidRecord {
                id: rec.id.clone(),
                reason: "every word is masked".into(),
            });
        }
        let x = g.constant(&rec.features);
        let projected = self.proj_text.forward(g, &self.store, x)?;
        let intra = self.text_intra(g, projected, &valid)?;
        let pool = (!self.hyper.include_masked_in_mean && valid.iter().any(|&v| !v)).then(|| valid.clone());
        Ok(TextEnc {
            projected,
            intra,
            valid,
            pool,
        })
    }

    fn ctx_valid<'a>(txt: &'a TextEnc<'_>) -> Option<&'a [bool]> {
        (!txt.valid.iter().all(|&v| v)).then_some(txt.valid.as_slice())
    }

    fn two_pass<'g>(
        &self,
        g: &'g Graph,
        source: Var<'g>,
        anchor: Var<'g>,
        ctx: Var<'g>,
        query_valid: Option<&[bool]>,
        ctx_valid: Option<&[bool]>,
    ) -> Result<(Var<'g>, Option<[Var<'g>; 2]>)> {
        if !self.hyper.components.llii {
            return Ok((source, None));
        }
        let LocalLocal { fused, betas } = local_local(
            g,
            &self.store,
            [&self.fuse[0], &self.fuse[1]],
            source,
            anchor,
            ctx,
            self.hyper.lambda(),
            query_valid,
            ctx_valid,
        )?;
        Ok((fused, Some(betas)))
    }

    fn gated<'g>(&self, g: &'g Graph, fused: Var<'g>, global: Var<'g>, original: Var<'g>) -> Result<Var<'g>> {
        if self.hyper.components.lgii {
            local_global(g, &self.store, &self.gate, fused, global, original, self.hyper.gate)
        } else {
            fused.add(original.relu())
        }
    }

    /// Normalized pooled sentence vector `T̄` over `rows`.
    fn text_global<'g>(rows: Var<'g>, txt: &TextEnc<'g>) -> Result<Var<'g>> {
        crate::numcore::mean_rows_masked(rows, txt.pool.as_deref())?.l2_normalize()
    }

    fn image_global(rows: Var<'_>) -> Result<Var<'_>> {
        rows.mean_rows()?.l2_normalize()
    }

    /// Similarity of one image and one sentence.
    pub fn pair_score<'g>(&self, g: &'g Graph, img: &ImageEnc<'g>, txt: &TextEnc<'g>) -> Result<PairOut<'g>> {
        let h = &self.hyper;
        let cv = Self::ctx_valid(txt);
        match (h.direction, h.ordering) {
            (Direction::ImageToText, Ordering::A12B34 | Ordering::A21B34) => {
                let tbar = Self::text_global(txt.intra, txt)?;
                let anchor = match (h.ordering, h.anchor) {
                    (Ordering::A12B34, AnchorPolicy::Literal) => img.attended,
                    _ => img.intra,
                };
                let (vf, betas) = self.two_pass(g, img.intra, anchor, txt.intra, None, cv)?;
                let vo = self.gated(g, vf, tbar, img.projected)?;
                Ok(PairOut {
                    score: pool_and_score(vo, None, tbar)?,
                    betas,
                })
            }
            (Direction::ImageToText, Ordering::A12B43) => {
                let tbar = Self::text_global(txt.intra, txt)?;
                let vl = self.gated(g, img.intra, tbar, img.projected)?;
                let (vf, betas) = self.two_pass(g, vl, vl, txt.intra, None, cv)?;
                Ok(PairOut {
                    score: pool_and_score(vf, None, tbar)?,
                    betas,
                })
            }
            (Direction::ImageToText, Ordering::B34A12) => {
                let tbar_in = Self::text_global(txt.projected, txt)?;
                let (vf, betas) = self.two_pass(g, img.projected, img.projected, txt.projected, None, cv)?;
                let vo = self.gated(g, vf, tbar_in, img.projected)?;
                let (_, vg, _) = self.image_intra(g, vo, &img.graph)?;
                let tbar = Self::text_global(txt.intra, txt)?;
                Ok(PairOut {
                    score: pool_and_score(vg, None, tbar)?,
                    betas,
                })
            }
            (Direction::TextToImage, Ordering::A12B34 | Ordering::A21B34) => {
                let vbar = Self::image_global(img.intra)?;
                let (tf, betas) = self.two_pass(g, txt.intra, txt.intra, img.intra, cv, None)?;
                let to = self.gated(g, tf, vbar, txt.projected)?;
                Ok(PairOut {
                    score: pool_and_score(to, txt.pool.as_deref(), vbar)?,
                    betas,
                })
            }
            (Direction::TextToImage, Ordering::A12B43) => {
                let vbar = Self::image_global(img.intra)?;
                let tl = self.gated(g, txt.intra, vbar, txt.projected)?;
                let (tf, betas) = self.two_pass(g, tl, tl, img.intra, cv, None)?;
                Ok(PairOut {
                    score: pool_and_score(tf, txt.pool.as_deref(), vbar)?,
                    betas,
                })
            }
            (Direction::TextToImage, Ordering::B34A12) => {
                let vbar_in = Self::image_global(img.projected)?;
                let (tf, betas) = self.two_pass(g, txt.projected, txt.projected, img.projected, cv, None)?;
                let to = self.gated(g, tf, vbar_in, txt.projected)?;
                let ta = self.text_intra(g, to, &txt.valid)?;
                let vbar = Self::image_global(img.intra)?;
                Ok(PairOut {
                    score: pool_and_score(ta, txt.pool.as_deref(), vbar)?,
                    betas,
                })
            }
        }
    }

    /// `images × sentences` score block recorded on the tape.
    pub fn score_block<'g>(&self, g: &'g Graph, images: &[&ImageEnc<'g>], texts: &[&TextEnc<'g>]) -> Result<Var<'g>> {
        if images.is_empty() || texts.is_empty() {
            return Err(HireError::Empty("score_block"));
        }
        let rows = images
            .iter()
            .map(|img| {
                let cells = texts
                    .iter()
                    .map(|txt| Ok(self.pair_score(g, img, txt)?.score))
                    .collect::<Result<Vec<_>>>()?;
                g.concat(&cells, Axis::Cols)
            })
            .collect::<Result<Vec<_>>>()?;
        g.concat(&rows, Axis::Rows)
    }

    /// Unit-norm pooled image embedding after the intra-modal stages.
    pub fn image_embedding<'g>(&self, img: &ImageEnc<'g>) -> Result<Var<'g>> {
        pool_rows(img.intra, None, self.hyper.add_pool)
    }

    /// Unit-norm pooled sentence embedding after the intra-modal stages.
    pub fn text_embedding<'g>(&self, txt: &TextEnc<'g>) -> Result<Var<'g>> {
        pool_rows(txt.intra, txt.pool.as_deref(), self.hyper.add_pool)
    }
}

/// Pools the selected rows (mean or elementwise max) and normalizes.
pub fn pool_rows<'g>(x: Var<'g>, rows: Option<&[bool]>, pool: Pool) -> Result<Var<'g>> {
    let pooled = match pool {
        Pool::Mean => crate::numcore::mean_rows_masked(x, rows)?,
        Pool::Max => {
            let sel = match rows {
                Some(r) => select_rows(x, r)?,
                None => x,
            };
            sel.t().row_max()?.t()
        }
    };
    pooled.l2_normalize()
}

fn select_rows<'g>(x: Var<'g>, rows: &[bool]) -> Result<Var<'g>> {
    let n = x.dims2().0;
    let keep: Vec<usize> = (0..n).filter(|&i| rows[i]).collect();
    if keep.is_empty() {
        return Err(HireError::Empty("select_rows"));
    }
    let mut sel = Tensor::zeros(&[keep.len(), n]);
    for (r, &i) in keep.iter().enumerate() {
        sel.data_mut()[r * n + i] = 1.0;
    }
    x.graph().constant(&sel).matmul(x)
}
