//! Finite-difference gradient suite: every primitive op, every model layer
//! and the full training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{synth_generate, BoundingBox, Dataset, Dims, SynthConfig};
use crate::error::Result;
use crate::inter::{conditional_fuse, cross_attend, local_global, local_local, pool_and_score, GateMode};
use crate::intra::{build_graph_mask, edge_weights, rgcn, EdgeNorm};
use crate::model::{loss_add, ranking_loss, BatchInput, Direction, HireModel, HyperParams, Negatives};
use crate::numcore::{
    broadcast_col, broadcast_row, grad_check_many, grad_check_params, overall, Axis, DType, GradCheckReport, Graph,
    ParamStore, Tensor, Var,
};

/// Geometry of the gradient-check problem: 3 regions, 4 words, 16-wide
/// features and model, 2 heads.
pub const CHECK_DIMS: Dims = Dims {
    regions: 3,
    region_dim: 16,
    max_words: 4,
    word_dim: 16,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Op,
    Layer,
    EndToEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
}

impl CheckLine {
    fn new(name: &str, kind: CheckKind, r: GradCheckReport) -> Self {
        CheckLine {
            name: name.to_string(),
            kind,
            max_rel_error: r.max_rel_error,
            compared: r.compared,
            excluded: r.excluded,
        }
    }
}

/// Largest error among lines of `kind`.
pub fn worst(lines: &[CheckLine], kind: CheckKind) -> f64 {
    lines
        .iter()
        .filter(|l| l.kind == kind)
        .map(|l| l.max_rel_error)
        .fold(0.0, f64::max)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

type OpFn = for<'g> fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>;

/// Each primitive inside a small scalar readout.
pub fn op_checks(h: f64) -> Result<Vec<CheckLine>> {
    fn weighted<'g>(g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let w = g.constant(&Tensor::vector(&[0.3, -0.8, 1.2, 0.1]));
        x.hadamard(broadcast_row(w, x.dims2().0)?)
    }
    let cases: Vec<(&str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![random(&[3, 4], 1), random(&[4, 3], 2)], |_, v| {
            Ok(v[0].matmul(v[1])?.tanh().sum())
        }),
        ("transpose", vec![random(&[3, 4], 3)], |_, v| Ok(v[0].t().tanh().sum())),
        ("add", vec![random(&[3, 3], 4), random(&[3, 3], 5)], |_, v| {
            Ok(v[0].add(v[1])?.tanh().sum())
        }),
        ("sub", vec![random(&[3, 3], 6), random(&[3, 3], 7)], |_, v| {
            Ok(v[0].sub(v[1])?.tanh().sum())
        }),
        ("hadamard", vec![random(&[3, 3], 8), random(&[3, 3], 9)], |_, v| {
            Ok(v[0].hadamard(v[1])?.tanh().sum())
        }),
        ("scale", vec![random(&[3, 3], 10)], |_, v| Ok(v[0].scale(-1.7).tanh().sum())),
        ("add_scalar", vec![random(&[3, 3], 11)], |_, v| Ok(v[0].add_scalar(0.4).tanh().sum())),
        ("relu", vec![random(&[3, 3], 12)], |_, v| Ok(v[0].relu().hadamard(v[0])?.sum())),
        ("tanh", vec![random(&[3, 3], 13)], |_, v| Ok(v[0].tanh().hadamard(v[0])?.sum())),
        ("sigmoid", vec![random(&[3, 3], 14)], |_, v| Ok(v[0].sigmoid().hadamard(v[0])?.sum())),
        ("exp", vec![random(&[3, 3], 15)], |_, v| Ok(v[0].exp().sum())),
        ("log", vec![random(&[3, 3], 16)], |_, v| {
            Ok(v[0].hadamard(v[0])?.add_scalar(0.5).log().sum())
        }),
        ("softmax_rows", vec![random(&[3, 4], 17)], |_, v| {
            Ok(v[0].softmax_rows(None)?.hadamard(v[0])?.sum())
        }),
        ("softmax_rows_masked", vec![random(&[2, 3], 18)], |_, v| {
            let mask = [true, false, true, true, true, false];
            Ok(v[0].softmax_rows(Some(&mask))?.hadamard(v[0])?.sum())
        }),
        ("mean_rows", vec![random(&[4, 3], 19)], |_, v| Ok(v[0].mean_rows()?.tanh().sum())),
        ("mean_cols", vec![random(&[4, 3], 20)], |_, v| Ok(v[0].mean_cols()?.tanh().sum())),
        ("sum", vec![random(&[4, 3], 21)], |_, v| Ok(v[0].sum().tanh())),
        ("l2_normalize", vec![random(&[3, 4], 22)], |g, v| {
            Ok(weighted(g, v[0].l2_normalize()?)?.sum())
        }),
        ("l2_normalize_clamped_active", vec![random(&[3, 4], 40)], |g, v| {
            Ok(weighted(g, v[0].l2_normalize_clamped(50.0)?)?.sum())
        }),
        ("l2_normalize_clamped_inactive", vec![random(&[3, 4], 41)], |g, v| {
            Ok(weighted(g, v[0].l2_normalize_clamped(1e-9)?)?.sum())
        }),
        ("concat_rows", vec![random(&[2, 3], 23), random(&[1, 3], 24)], |g, v| {
            let a = g.concat(&[v[0], v[1]], Axis::Rows)?;
            let b = g.concat(&[v[1], v[0]], Axis::Rows)?;
            Ok(a.tanh().hadamard(b)?.sum())
        }),
        ("concat_cols", vec![random(&[3, 2], 25), random(&[3, 1], 26)], |g, v| {
            Ok(g.concat(&[v[0], v[1]], Axis::Cols)?.tanh().sum())
        }),
        ("row_max", vec![random(&[3, 4], 27)], |_, v| Ok(v[0].row_max()?.tanh().sum())),
        ("broadcast", vec![random(&[1, 3], 28), random(&[3, 1], 29)], |_, v| {
            Ok(broadcast_row(v[0], 3)?.hadamard(broadcast_col(v[1], 3)?)?.tanh().sum())
        }),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok(CheckLine::new(name, CheckKind::Op, grad_check_many(f, &inputs, h)?)))
        .collect()
}

/// Only the named parameters of `store`.
fn sub_store<'a>(store: &ParamStore, names: impl IntoIterator<Item = &'a str>) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for n in names {
        let t = store
            .get(n)
            .ok_or_else(|| crate::HireError::UnknownParam(n.to_string()))?;
        out.insert(n, t.clone())?;
    }
    Ok(out)
}

/// Checks `f` with respect to its tensor inputs (parameters fixed) and to
/// the parameters of `store` (inputs fixed), merging both reports.
fn layer_check<F>(name: &str, store: &ParamStore, inputs: &[Tensor], h: f64, f: F) -> Result<CheckLine>
where
    F: for<'g> Fn(&'g Graph, &ParamStore, &[Var<'g>]) -> Result<Var<'g>>,
{
    let mut r = if inputs.is_empty() {
        GradCheckReport::default()
    } else {
        grad_check_many(|g, v| f(g, store, v), inputs, h)?
    };
    if !store.is_empty() {
        let p = grad_check_params(
            |g, s| {
                let v: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
                f(g, s, &v)
            },
            store,
            h,
        )?;
        let p = overall(&p);
        r.max_rel_error = r.max_rel_error.max(p.max_rel_error);
        r.compared += p.compared;
        r.excluded += p.excluded;
    }
    Ok(CheckLine::new(name, CheckKind::Layer, r))
}

/// The dataset used by the layer and end-to-end checks.
pub fn check_dataset(seed: u64) -> Result<Dataset> {
    Ok(synth_generate(&SynthConfig::new(seed, 2, 2, CHECK_DIMS))?.train)
}

/// Every model layer at the geometry of `model`, in f64.
pub fn layer_checks(model: &HireModel, ds: &Dataset, h: f64) -> Result<Vec<CheckLine>> {
    let d = model.hyper.d_model;
    let lambda = model.hyper.lambda();
    let k = ds.images[0].regions();
    // two overlapping regions plus one scene-graph edge: a mask that is
    // neither diagonal nor full
    let mut boxes = vec![BoundingBox::new(0.0, 0.0, 2.0, 1.0)?; k];
    for (i, b) in boxes.iter_mut().enumerate().skip(2) {
        *b = BoundingBox::new(10.0 * i as f32, 5.0, 10.0 * i as f32 + 1.0, 6.0)?;
    }
    let graph = build_graph_mask(&boxes, &[(1, k - 1)], model.hyper.mu)?;
    let read = random(&[k, d], 101);
    let x = random(&[k, d], 102);
    let words = random(&[4, d], 103);
    let word_mask = [true, true, false, true];
    let mut out = Vec::new();

    let s = sub_store(&model.store, model.vsa.names())?;
    out.push(layer_check("self_attend", &s, &[x.clone()], h, |g, s, v| {
        Ok(model.vsa.forward(g, s, v[0], None)?.hadamard(g.constant(&read))?.sum())
    })?);
    let s = sub_store(&model.store, model.tsa.names())?;
    let read_w = random(&[4, d], 104);
    out.push(layer_check("self_attend_masked", &s, &[words.clone()], h, |g, s, v| {
        Ok(model.tsa.forward(g, s, v[0], Some(&word_mask))?.hadamard(g.constant(&read_w))?.sum())
    })?);
    for (name, norm) in [("edge_weights_softmax", EdgeNorm::Softmax), ("edge_weights_none", EdgeNorm::None)] {
        let s = sub_store(&model.store, model.edges.names())?;
        let read_e = random(&[k, k], 105);
        out.push(layer_check(name, &s, &[x.clone()], h, |g, s, v| {
            Ok(edge_weights(g, s, &model.edges, v[0], &graph, norm)?.hadamard(g.constant(&read_e))?.sum())
        })?);
    }
    let s = sub_store(&model.store, model.rgcn.names())?;
    out.push(layer_check("rgcn", &s, &[x.clone(), random(&[k, k], 106)], h, |g, s, v| {
        Ok(rgcn(g, s, &model.rgcn, v[0], v[1])?.tanh().hadamard(g.constant(&read))?.sum())
    })?);
    out.push(layer_check("cross_attend", &ParamStore::new(), &[x.clone(), words.clone()], h, |g, _, v| {
        let (beta, q) = cross_attend(v[0], v[1], lambda, None, Some(&[true, false, true, true]))?;
        let rb = g.constant(&random(&[k, 4], 107));
        Ok(beta.hadamard(rb)?.sum().add(q.hadamard(g.constant(&read))?.sum())?)
    })?);
    let s = sub_store(&model.store, model.fuse[0].names())?;
    out.push(layer_check("conditional_fuse", &s, &[x.clone(), random(&[k, d], 108)], h, |g, s, v| {
        Ok(conditional_fuse(g, s, &model.fuse[0], v[0], v[1])?.hadamard(g.constant(&read))?.sum())
    })?);
    let s = sub_store(&model.store, [model.fuse[0].names(), model.fuse[1].names()].concat())?;
    out.push(layer_check("local_local", &s, &[x.clone(), words.clone()], h, |g, s, v| {
        let ll = local_local(g, s, [&model.fuse[0], &model.fuse[1]], v[0], v[0], v[1], lambda, None, Some(&word_mask))?;
        Ok(ll.fused.hadamard(g.constant(&read))?.sum())
    })?);
    for (name, mode) in [("local_global_scalar", GateMode::Scalar), ("local_global_vector", GateMode::Vector)] {
        let s = sub_store(&model.store, model.gate.names())?;
        let inputs = [x.clone(), random(&[1, d], 109), random(&[k, d], 110)];
        out.push(layer_check(name, &s, &inputs, h, |g, s, v| {
            Ok(local_global(g, s, &model.gate, v[0], v[1], v[2], mode)?.hadamard(g.constant(&read))?.sum())
        })?);
    }
    out.push(layer_check("pool_and_score", &ParamStore::new(), &[x.clone(), random(&[1, d], 111)], h, |_, _, v| {
        pool_and_score(v[0], Some(&[true, false, true]), v[1])
    })?);
    let positive = vec![
        vec![true, true, false],
        vec![true, true, false],
        vec![false, false, true],
    ];
    for (name, mode) in [("ranking_loss_sum", Negatives::Sum), ("ranking_loss_hardest", Negatives::Hardest)] {
        let p = positive.clone();
        out.push(layer_check(name, &ParamStore::new(), &[random(&[3, 3], 112)], h, move |_, _, v| {
            ranking_loss(v[0], &p, 0.2, mode, None, None)
        })?);
    }
    let p = positive.clone();
    out.push(layer_check("loss_add", &ParamStore::new(), &[random(&[3, d], 113), random(&[3, d], 114)], h, move |_, _, v| {
        loss_add(v[0].l2_normalize()?, v[1].l2_normalize()?, &p, 0.2, Negatives::Sum)
    })?);
    Ok(out)
}

/// `L_rank + L_add` of one batch with respect to every parameter. The
/// batch holds two captions of the same image and one masked word.
pub fn end_to_end_check(model: &HireModel, ds: &Dataset, h: f64) -> Result<CheckLine> {
    let rows: Vec<usize> = (0..ds.sentences.len()).collect();
    let mut images = Vec::new();
    let pair_image = rows
        .iter()
        .map(|&s| {
            let img = ds.image_of(s);
            images.iter().position(|&i| i == img).unwrap_or_else(|| {
                images.push(img);
                images.len() - 1
            })
        })
        .collect();
    let mut sentences: Vec<_> = rows.iter().map(|&s| ds.sentences[s].clone()).collect();
    sentences[0].mask[0] = true;
    let input = BatchInput {
        images: images.iter().map(|&i| &ds.images[i]).collect(),
        pair_image,
        sentences,
        extra_images: Vec::new(),
        extra_sentences: Vec::new(),
    };
    let reports = grad_check_params(
        |g, s| {
            let m = HireModel {
                store: s.clone(),
                ..model.clone()
            };
            Ok(m.batch_loss(g, &input)?.total)
        },
        &model.store,
        h,
    )?;
    let name = format!("end_to_end_{}", model.direction().tag());
    Ok(CheckLine::new(&name, CheckKind::EndToEnd, overall(&reports)))
}

/// The full suite for both directions of `base` at the check geometry.
pub fn gradcheck_suite(base: &HyperParams, seed: u64, h: f64) -> Result<Vec<CheckLine>> {
    let ds = check_dataset(seed)?;
    let mut lines = op_checks(h)?;
    for dir in [Direction::ImageToText, Direction::TextToImage] {
        let hyper = HyperParams {
            direction: dir,
            dtype: DType::F64,
            lambda: None,
            ..base.clone()
        };
        let model = HireModel::new(hyper, CHECK_DIMS.region_dim, CHECK_DIMS.word_dim, seed)?;
        if dir == Direction::ImageToText {
            lines.extend(layer_checks(&model, &ds, h)?);
        }
        lines.push(end_to_end_check(&model, &ds, h)?);
    }
    Ok(lines)
}

/// Toy model settings used by `gradcheck`: 16-wide, 2 heads.
pub fn check_hyper() -> HyperParams {
    HyperParams {
        d_model: 16,
        heads: 2,
        d_map: 8,
        dtype: DType::F64,
        ..HyperParams::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DEFAULT_STEP;

    #[test]
    fn every_op_passes() {
        for line in op_checks(DEFAULT_STEP).unwrap() {
            assert!(line.max_rel_error <= 1e-6, "{line:?}");
            assert!(line.compared > 0, "{line:?}");
        }
    }

    #[test]
    fn every_layer_passes() {
        let ds = check_dataset(3).unwrap();
        let model = HireModel::new(check_hyper(), CHECK_DIMS.region_dim, CHECK_DIMS.word_dim, 3).unwrap();
        let lines = layer_checks(&model, &ds, DEFAULT_STEP).unwrap();
        assert_eq!(lines.len(), 14);
        for line in lines {
            assert!(line.max_rel_error <= 1e-6, "{line:?}");
            assert!(line.compared > 0, "{line:?}");
        }
    }
}
