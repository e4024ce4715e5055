//! Dense tensors and reverse-mode differentiation.
//!
//! Everything the model computes goes through a [`Graph`]: a tape of 2-D
//! values (rank-1 tensors are treated as single rows). Gradients accumulate
//! into [`ParamStore`] slots until explicitly zeroed, so separate losses
//! recorded on one tape simply add.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_many, grad_check_params, overall, rel_error, GradCheckReport,
    DEFAULT_STEP,
};
pub use graph::{Axis, Gradients, Graph, NodeId, Var};
pub use params::ParamStore;
pub use tensor::{DType, Tensor};


/// Column vector of ones, `n × 1`.
pub fn ones_col(n: usize) -> Tensor {
    Tensor::full(&[n, 1], 1.0)
}

/// Row vector of ones, `1 × n`.
pub fn ones_row(n: usize) -> Tensor {
    Tensor::full(&[1, n], 1.0)
}

/// Repeats a `1 × d` row `n` times.
pub fn broadcast_row<'g>(row: Var<'g>, n: usize) -> crate::Result<Var<'g>> {
    let g = row.graph();
    g.constant(&ones_col(n)).matmul(row)
}

/// Repeats an `n × 1` column `d` times.
pub fn broadcast_col<'g>(col: Var<'g>, d: usize) -> crate::Result<Var<'g>> {
    let g = col.graph();
    col.matmul(g.constant(&ones_row(d)))
}

/// `1 × d` mean over the rows flagged valid (all rows when `valid` is
/// `None`).
pub fn mean_rows_masked<'g>(x: Var<'g>, valid: Option<&[bool]>) -> crate::Result<Var<'g>> {
    let Some(valid) = valid else {
        return x.mean_rows();
    };
    let n = x.dims2().0;
    if valid.len() != n {
        return Err(crate::HireError::shape("mean_rows_masked", &[n], &[valid.len()]));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(crate::HireError::Empty("mean_rows_masked"));
    }
    let w: Vec<f64> = valid
        .iter()
        .map(|&v| if v { 1.0 / count as f64 } else { 0.0 })
        .collect();
    let g = x.graph();
    g.constant(&Tensor::new(&[1, n], w)?).matmul(x)
}

/// Row-wise cosine similarity matrix `A Bᵀ` of row-normalized inputs.
pub fn cosine_matrix<'g>(a: Var<'g>, b: Var<'g>) -> crate::Result<Var<'g>> {
    a.l2_normalize()?.matmul(b.l2_normalize()?.t())
}
