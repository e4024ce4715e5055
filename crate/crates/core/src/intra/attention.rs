use rand::Rng;

use crate::error::{HireError, Result};
use crate::nn::Linear;
use crate::numcore::{Axis, DType, Graph, ParamStore, Var};

/// One attention head: query/key/value maps `D → D/L`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Multi-head self-attention followed by a two-layer ReLU feed-forward
/// network. No residual path and no layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttnParams {
    pub heads: Vec<Head>,
    /// Mixes the concatenated heads, `D → D`.
    pub mix: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub d_model: usize,
}

impl SelfAttnParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(HireError::Config(format!(
                "heads ({heads}) must divide the model width ({d_model})"
            )));
        }
        let dh = d_model / heads;
        let mut hs = Vec::with_capacity(heads);
        for l in 0..heads {
            let mut lin = |role: &str| {
                Linear::register(store, &format!("{prefix}.head{l}.{role}"), d_model, dh, bias, dtype, rng)
            };
            hs.push(Head {
                query: lin("query")?,
                key: lin("key")?,
                value: lin("value")?,
            });
        }
        Ok(SelfAttnParams {
            heads: hs,
            mix: Linear::register(store, &format!("{prefix}.mix"), d_model, d_model, bias, dtype, rng)?,
            ffn_in: Linear::register(store, &format!("{prefix}.ffn_in"), d_model, d_ff, bias, dtype, rng)?,
            ffn_out: Linear::register(store, &format!("{prefix}.ffn_out"), d_ff, d_model, bias, dtype, rng)?,
            d_model,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.len()
    }

    /// Per-head attention maps `softmax(Q Kᵀ / sqrt(D/L))` over valid keys.
    pub fn attention_maps<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        valid: Option<&[bool]>,
    ) -> Result<Vec<Var<'g>>> {
        let n = x.dims2().0;
        let key_mask: Option<Vec<bool>> = valid.map(|v| {
            (0..n * n).map(|k| v[k % n]).collect()
        });
        let inv_sqrt = 1.0 / (self.head_dim() as f64).sqrt();
        self.heads
            .iter()
            .map(|h| {
                let q = h.query.forward(g, store, x)?;
                let k = h.key.forward(g, store, x)?;
                q.matmul(k.t())?.scale(inv_sqrt).softmax_rows(key_mask.as_deref())
            })
            .collect()
    }

    /// Returns the enhanced `n × D` fragments. `valid[j] == false` removes
    /// position `j` from every attention normalizer.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        valid: Option<&[bool]>,
    ) -> Result<Var<'g>> {
        let maps = self.attention_maps(g, store, x, valid)?;
        let heads = self
            .heads
            .iter()
            .zip(maps)
            .map(|(h, a)| a.matmul(h.value.forward(g, store, x)?))
            .collect::<Result<Vec<_>>>()?;
        let joined = g.concat(&heads, Axis::Cols)?;
        let mixed = self.mix.forward(g, store, joined)?;
        let hidden = self.ffn_in.forward(g, store, mixed)?.relu();
        self.ffn_out.forward(g, store, hidden)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend(h.query.names());
            out.extend(h.key.names());
            out.extend(h.value.names());
        }
        out.extend(self.mix.names());
        out.extend(self.ffn_in.names());
        out.extend(self.ffn_out.names());
        out
    }
}

/// Convenience wrapper matching the module-level operation name.
pub fn self_attend<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &SelfAttnParams,
    x: Var<'g>,
    valid: Option<&[bool]>,
) -> Result<Var<'g>> {
    params.forward(g, store, x, valid)
}
