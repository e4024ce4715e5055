//! Inter-modal enhancement: local-local cross attention with conditional
//! fusion, then local-global gating against the other modality's pooled
//! feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};
use crate::nn::Linear;
use crate::numcore::{broadcast_col, broadcast_row, mean_rows_masked, DType, Graph, ParamStore, Tensor, Var};

/// Below this norm an *invalid* fragment is treated as zero.
const NORM_EPS: f64 = 1e-12;

/// Which features the first fusion pass anchors on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorPolicy {
    /// Attend from the graph output, anchor on the self-attention output.
    #[default]
    Literal,
    /// Attend from and anchor on the graph output.
    Consistent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// One weight per fragment: sigmoid of the mean gated product.
    #[default]
    Scalar,
    /// Elementwise sigmoid weights.
    Vector,
}

/// `W^f_1`, `W^f_2`, `W^f_3` for one fusion pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub outer: Linear,
    pub gate: Linear,
    pub direct: Linear,
}

impl FusionParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lin = |n: &str| Linear::register(store, &format!("{prefix}.{n}"), d, d, bias, dtype, rng);
        Ok(FusionParams {
            outer: lin("w1")?,
            gate: lin("w2")?,
            direct: lin("w3")?,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.outer
            .names()
            .chain(self.gate.names())
            .chain(self.direct.names())
            .collect()
    }
}

/// Local-global gate map.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w: Linear,
}

impl GateParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GateParams {
            w: Linear::register(store, &format!("{prefix}.w"), d, d, bias, dtype, rng)?,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.w.names().collect()
    }
}

fn check_valid(what: &'static str, n: usize, valid: Option<&[bool]>) -> Result<()> {
    if let Some(v) = valid {
        if v.len() != n {
            return Err(HireError::shape(what, &[n], &[v.len()]));
        }
    }
    Ok(())
}

/// Row normalization that tolerates zero rows only where `valid` is false.
fn normalize_rows<'g>(x: Var<'g>, valid: Option<&[bool]>) -> Result<Var<'g>> {
    match valid {
        None => x.l2_normalize(),
        Some(v) => {
            {
                let t = x.value();
                for (i, &ok) in v.iter().enumerate() {
                    if ok && t.row(i).iter().all(|&a| a == 0.0) {
                        return Err(HireError::ZeroNorm { row: i });
                    }
                }
            }
            x.l2_normalize_clamped(NORM_EPS)
        }
    }
}

/// Cosine attention from query fragments onto context fragments.
///
/// Returns `β` (`K × m`, rows sum to one over valid context fragments)
/// and the attended context `q = β C`.
pub fn cross_attend<'g>(
    query: Var<'g>,
    ctx: Var<'g>,
    lambda: f64,
    query_valid: Option<&[bool]>,
    ctx_valid: Option<&[bool]>,
) -> Result<(Var<'g>, Var<'g>)> {
    let (k, dq) = query.dims2();
    let (m, dc) = ctx.dims2();
    if k == 0 || m == 0 {
        return Err(HireError::Empty("cross_attend"));
    }
    if dq != dc {
        return Err(HireError::shape("cross_attend", &[k, dq], &[m, dc]));
    }
    if !(lambda > 0.0) {
        return Err(HireError::Config(format!("lambda must be positive, got {lambda}")));
    }
    check_valid("cross_attend query", k, query_valid)?;
    check_valid("cross_attend context", m, ctx_valid)?;
    let c = normalize_rows(query, query_valid)?.matmul(normalize_rows(ctx, ctx_valid)?.t())?;
    let support: Option<Vec<bool>> = ctx_valid.map(|v| (0..k * m).map(|x| v[x % m]).collect());
    let beta = c.scale(lambda).softmax_rows(support.as_deref())?;
    let q = beta.matmul(ctx)?;
    Ok((beta, q))
}

/// `ReLU(W1(anchor ⊙ tanh(W2 q) + W3 q)) + anchor`.
pub fn conditional_fuse<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &FusionParams,
    anchor: Var<'g>,
    q: Var<'g>,
) -> Result<Var<'g>> {
    if anchor.shape() != q.shape() {
        return Err(HireError::shape("conditional_fuse", &anchor.shape(), &q.shape()));
    }
    let gated = anchor.hadamard(params.gate.forward(g, store, q)?.tanh())?;
    let inner = gated.add(params.direct.forward(g, store, q)?)?;
    params.outer.forward(g, store, inner)?.relu().add(anchor)
}

/// Output of the two-pass local-local interaction.
pub struct LocalLocal<'g> {
    pub fused: Var<'g>,
    pub betas: [Var<'g>; 2],
}

/// Two rounds of cross attention and fusion with untied parameters. Pass
/// one attends from `source` and fuses onto `anchor`; pass two attends from
/// and fuses onto the pass-one output.
#[allow(clippy::too_many_arguments)]
pub fn local_local<'g>(
    g: &'g Graph,
    store: &ParamStore,
    passes: [&FusionParams; 2],
    source: Var<'g>,
    anchor: Var<'g>,
    ctx: Var<'g>,
    lambda: f64,
    query_valid: Option<&[bool]>,
    ctx_valid: Option<&[bool]>,
) -> Result<LocalLocal<'g>> {
    let (b1, q1) = cross_attend(source, ctx, lambda, query_valid, ctx_valid)?;
    let f1 = conditional_fuse(g, store, passes[0], anchor, q1)?;
    let (b2, q2) = cross_attend(f1, ctx, lambda, query_valid, ctx_valid)?;
    let f2 = conditional_fuse(g, store, passes[1], f1, q2)?;
    Ok(LocalLocal {
        fused: f2,
        betas: [b1, b2],
    })
}

/// Gate weights `r` for each fragment of `fused` given the other modality's
/// pooled vector `global` (`1 × D`, used as given). Scalar mode returns
/// `K × 1`, vector mode `K × D`.
pub fn gate_weights<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &GateParams,
    fused: Var<'g>,
    global: Var<'g>,
    mode: GateMode,
) -> Result<Var<'g>> {
    let k = fused.dims2().0;
    let prod = params.w.forward(g, store, fused)?.hadamard(broadcast_row(global, k)?)?;
    Ok(match mode {
        GateMode::Scalar => prod.mean_cols()?.sigmoid(),
        GateMode::Vector => prod.sigmoid(),
    })
}

/// `v^O = r ⊙ v^F + v^F + ReLU(v)`.
pub fn local_global<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &GateParams,
    fused: Var<'g>,
    global: Var<'g>,
    original: Var<'g>,
    mode: GateMode,
) -> Result<Var<'g>> {
    if fused.shape() != original.shape() {
        return Err(HireError::shape("local_global", &fused.shape(), &original.shape()));
    }
    let r = gate_weights(g, store, params, fused, global, mode)?;
    let r = match mode {
        GateMode::Scalar => broadcast_col(r, fused.dims2().1)?,
        GateMode::Vector => r,
    };
    r.hadamard(fused)?.add(fused)?.add(original.relu())
}

/// Cosine between the normalized mean of the valid rows of `fragments`
/// and `global`. Returns a `1 × 1` value.
pub fn pool_and_score<'g>(fragments: Var<'g>, valid: Option<&[bool]>, global: Var<'g>) -> Result<Var<'g>> {
    let pooled = mean_rows_masked(fragments, valid)?.l2_normalize()?;
    pooled.matmul(global.l2_normalize()?.t())
}

/// `β` for one query/context pair with its strongest correspondences.
#[derive(Clone, Debug, Serialize)]
pub struct BetaDump {
    pub query_id: String,
    pub context_id: String,
    pub pass: usize,
    pub beta: Vec<Vec<f64>>,
    /// Per query fragment: context indices by descending weight, at most `top_k`.
    pub top: Vec<Vec<usize>>,
}

impl BetaDump {
    pub fn new(query_id: &str, context_id: &str, pass: usize, beta: &Tensor, top_k: usize) -> Self {
        let (r, _) = beta.dims2();
        let rows: Vec<Vec<f64>> = (0..r).map(|i| beta.row(i).to_vec()).collect();
        let top = rows
            .iter()
            .map(|row| {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                idx.truncate(top_k);
                idx
            })
            .collect();
        BetaDump {
            query_id: query_id.to_string(),
            context_id: context_id.to_string(),
            pass,
            beta: rows,
            top,
        }
    }
}
