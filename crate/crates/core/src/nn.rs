//! Row-vector linear maps over a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::numcore::{broadcast_row, DType, Graph, ParamStore, Tensor, Var};

/// `x W` (+ `b` when biases are enabled); `x` is `n × fan_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        store.insert_uniform(name, fan_in, fan_out, dtype, rng)?;
        let bias = if bias {
            let bname = format!("{name}.bias");
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            store.insert(&bname, Tensor::new(&[1, fan_out], data)?.with_dtype(dtype))?;
            Some(bname)
        } else {
            None
        };
        Ok(Linear {
            weight: name.to_string(),
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let y = x.matmul(g.param(store, &self.weight)?)?;
        match &self.bias {
            Some(b) => {
                let rows = y.dims2().0;
                y.add(broadcast_row(g.param(store, b)?, rows)?)
            }
            None => Ok(y),
        }
    }

    /// Parameter names owned by this layer.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.weight.as_str()).chain(self.bias.as_deref())
    }
}
