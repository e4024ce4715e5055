use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataio::BoundingBox;
use crate::numcore::{grad_check, grad_check_params, overall, DType, Graph, ParamStore, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn attn(d: usize, heads: usize, seed: u64) -> (ParamStore, SelfAttnParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SelfAttnParams::register(&mut store, "vsa", d, heads, d, false, DType::F64, &mut rng).unwrap();
    (store, p)
}

fn bx(x1: f32, y1: f32, x2: f32, y2: f32) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

/// `K` unit boxes spaced far apart.
fn disjoint(k: usize) -> Vec<BoundingBox> {
    (0..k).map(|i| bx(10.0 * i as f32, 0.0, 10.0 * i as f32 + 1.0, 1.0)).collect()
}

#[test]
fn heads_must_divide_width() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(SelfAttnParams::register(&mut store, "x", 10, 3, 10, false, DType::F64, &mut rng).is_err());
}

#[test]
fn single_fragment_attends_to_itself() {
    let (store, p) = attn(16, 2, 1);
    let g = Graph::new(DType::F64);
    let x = g.input(&random(&[1, 16], 2));
    for a in p.attention_maps(&g, &store, x, None).unwrap() {
        assert_eq!(a.to_tensor().data(), &[1.0]);
    }
    assert_eq!(p.forward(&g, &store, x, None).unwrap().shape(), vec![1, 16]);
}

#[test]
fn identical_rows_give_identical_outputs() {
    let (store, p) = attn(16, 2, 3);
    let row = random(&[1, 16], 4);
    let mut data = row.data().to_vec();
    data.extend_from_slice(row.data());
    let g = Graph::new(DType::F64);
    let y = p.forward(&g, &store, g.input(&Tensor::new(&[2, 16], data).unwrap()), None).unwrap().to_tensor();
    assert_eq!(y.row(0), y.row(1));
}

#[test]
fn invalid_positions_get_no_attention() {
    let (store, p) = attn(8, 2, 5);
    let g = Graph::new(DType::F64);
    let x = g.input(&random(&[3, 8], 6));
    let valid = [true, false, true];
    for a in p.attention_maps(&g, &store, x, Some(&valid)).unwrap() {
        let a = a.to_tensor();
        for i in 0..3 {
            assert_eq!(a.at(i, 1), 0.0);
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    assert!(p.forward(&g, &store, x, Some(&[false, false, false])).is_err());
}

#[test]
fn self_attention_gradients_match_finite_differences() {
    let (store, p) = attn(16, 2, 7);
    let x = random(&[3, 16], 8);
    let w = random(&[3, 16], 9);
    let report = grad_check(
        |g, v| Ok(p.forward(g, &store, v, None)?.hadamard(g.constant(&w))?.sum()),
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");

    let reports = grad_check_params(
        |g, s| {
            let xv = g.constant(&x);
            Ok(p.forward(g, s, xv, Some(&[true, true, false]))?.hadamard(g.constant(&w))?.sum())
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert_eq!(reports.len(), p.names().len());
    assert!(overall(&reports).max_rel_error <= 1e-6, "{reports:?}");
}

#[test]
fn mask_of_disjoint_boxes_is_identity() {
    let m = build_graph_mask(&disjoint(4), &[], 0.4).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(m.get(i, j), i == j);
        }
    }
}

#[test]
fn identical_boxes_connect() {
    let mut boxes = disjoint(3);
    boxes[2] = boxes[0];
    let m = build_graph_mask(&boxes, &[], 0.4).unwrap();
    assert!(m.get(0, 2) && m.get(2, 0));
    assert!(!m.get(0, 1));
}

#[test]
fn sub_threshold_overlap_and_scene_graph_edge() {
    // boxes 0 and 1 overlap with IoU exactly 1/3 (intersection 1, union 3)
    let mut boxes = disjoint(6);
    boxes[0] = bx(0.0, 0.0, 2.0, 1.0);
    boxes[1] = bx(1.0, 0.0, 3.0, 1.0);
    assert!((crate::dataio::iou(&boxes[0], &boxes[1]) - 1.0 / 3.0).abs() < 1e-12);
    let m = build_graph_mask(&boxes, &[(2, 5)], 0.4).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let expect = i == j || (i, j) == (2, 5) || (i, j) == (5, 2);
            assert_eq!(m.get(i, j), expect, "({i}, {j})");
        }
    }
    assert!(build_graph_mask(&boxes, &[(0, 6)], 0.4).is_err());
}

proptest! {
    #[test]
    fn mask_is_symmetric_and_permutation_equivariant(
        coords in prop::collection::vec((0f32..20.0, 0f32..20.0, 1f32..10.0, 1f32..10.0), 2..7),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let boxes: Vec<BoundingBox> = coords.iter().map(|&(x, y, w, h)| bx(x, y, x + w, y + h)).collect();
        let k = boxes.len();
        let edges = vec![(0, k - 1)];
        let m = build_graph_mask(&boxes, &edges, 0.4).unwrap();
        prop_assert!(m.is_symmetric());
        prop_assert!((0..k).all(|i| m.get(i, i)));

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        // region perm[i] of the original becomes region i
        let pboxes: Vec<BoundingBox> = perm.iter().map(|&p| boxes[p]).collect();
        let inv: Vec<usize> = {
            let mut inv = vec![0; k];
            for (i, &p) in perm.iter().enumerate() { inv[p] = i; }
            inv
        };
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (inv[i], inv[j])).collect();
        let pm = build_graph_mask(&pboxes, &pedges, 0.4).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(pm.get(i, j), m.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant(seed in 0u64..64) {
        let (store, p) = attn(8, 2, seed);
        let x = random(&[4, 8], seed + 100);
        let perm = [2usize, 0, 3, 1];
        let px = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let g = Graph::new(DType::F64);
        let y = p.forward(&g, &store, g.input(&x), None).unwrap().to_tensor();
        let py = p.forward(&g, &store, g.input(&px), None).unwrap().to_tensor();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in py.row(i).iter().zip(y.row(src)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

fn edges(d: usize, d_map: usize, seed: u64) -> (ParamStore, EdgeParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = EdgeParams::register(&mut store, "graph", d, d_map, false, DType::F64, &mut rng).unwrap();
    (store, p)
}

#[test]
fn identity_mask_gives_one_hot_rows() {
    let (store, p) = edges(6, 4, 1);
    let graph = build_graph_mask(&disjoint(3), &[], 0.4).unwrap();
    let g = Graph::new(DType::F64);
    let e = edge_weights(&g, &store, &p, g.input(&random(&[3, 6], 2)), &graph, EdgeNorm::Softmax)
        .unwrap()
        .to_tensor();
    assert_eq!(e, Tensor::eye(3));
}

#[test]
fn orthogonal_regions_have_zero_raw_edges() {
    let mut store = ParamStore::new();
    store.insert("graph.phi", Tensor::eye(3)).unwrap();
    store.insert("graph.varphi", Tensor::eye(3)).unwrap();
    let p = EdgeParams {
        phi: crate::nn::Linear { weight: "graph.phi".into(), bias: None, fan_in: 3, fan_out: 3 },
        varphi: crate::nn::Linear { weight: "graph.varphi".into(), bias: None, fan_in: 3, fan_out: 3 },
    };
    let graph = RelGraph { k: 2, mask: vec![true; 4] };
    let g = Graph::new(DType::F64);
    let v = g.input(&Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap());
    let e = edge_weights(&g, &store, &p, v, &graph, EdgeNorm::None).unwrap().to_tensor();
    assert_eq!(e.at(0, 1), 0.0);
    assert_eq!(e.at(1, 0), 0.0);
    assert_eq!(e.at(0, 0), 1.0);
    assert_eq!(e.at(1, 1), 4.0);
}

#[test]
fn masked_edge_rows_are_distributions_on_support() {
    let (store, p) = edges(6, 4, 3);
    let graph = RelGraph {
        k: 4,
        mask: vec![
            true, true, false, false, //
            true, true, false, true, //
            false, false, true, false, //
            false, true, false, true,
        ],
    };
    let g = Graph::new(DType::F64);
    let v = g.input(&random(&[4, 6], 4));
    for norm in [EdgeNorm::Softmax, EdgeNorm::None] {
        let e = edge_weights(&g, &store, &p, v, &graph, norm).unwrap().to_tensor();
        for i in 0..4 {
            let mut total = 0.0;
            for j in 0..4 {
                if graph.get(i, j) {
                    total += e.at(i, j);
                } else {
                    assert_eq!(e.at(i, j), 0.0);
                }
            }
            if norm == EdgeNorm::Softmax {
                assert!((total - 1.0).abs() < 1e-12);
                assert!(e.row(i).iter().all(|&x| x >= 0.0));
            }
        }
    }
}

fn gcn(d: usize, seed: u64) -> (ParamStore, RgcnParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = RgcnParams::register(&mut store, "rgcn", d, false, DType::F64, &mut rng).unwrap();
    (store, p)
}

#[test]
fn zero_edges_make_rgcn_the_identity() {
    let (store, p) = gcn(5, 1);
    let x = random(&[3, 5], 2);
    let g = Graph::new(DType::F64);
    let y = rgcn(&g, &store, &p, g.input(&x), g.constant(&Tensor::zeros(&[3, 3]))).unwrap();
    assert_eq!(y.to_tensor().data(), x.data());
}

#[test]
fn single_region_identity_weights_doubles() {
    let mut store = ParamStore::new();
    store.insert("rgcn.gcn", Tensor::eye(3)).unwrap();
    store.insert("rgcn.residual", Tensor::eye(3)).unwrap();
    let lin = |n: &str| crate::nn::Linear { weight: n.into(), bias: None, fan_in: 3, fan_out: 3 };
    let p = RgcnParams { gcn: lin("rgcn.gcn"), residual: lin("rgcn.residual") };
    let g = Graph::new(DType::F64);
    let v = g.input(&Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap());
    let y = rgcn(&g, &store, &p, v, g.constant(&Tensor::eye(1))).unwrap();
    assert_eq!(y.to_tensor().data(), &[1.0, -2.0, 4.0]);
}

#[test]
fn graph_branch_gradients_match_finite_differences() {
    let d = 6;
    let (mut store, p) = gcn(d, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ep = EdgeParams::register(&mut store, "graph", d, 4, true, DType::F64, &mut rng).unwrap();
    let graph = RelGraph {
        k: 3,
        mask: vec![true, true, false, true, true, true, false, true, true],
    };
    let x = random(&[3, d], 7);
    let w = random(&[3, d], 8);
    fn f<'g>(
        g: &'g Graph,
        s: &ParamStore,
        ep: &EdgeParams,
        p: &RgcnParams,
        graph: &RelGraph,
        norm: EdgeNorm,
        xv: crate::numcore::Var<'g>,
        w: &Tensor,
    ) -> crate::Result<crate::numcore::Var<'g>> {
        let e = edge_weights(g, s, ep, xv, graph, norm)?;
        Ok(rgcn(g, s, p, xv, e)?.tanh().hadamard(g.constant(w))?.sum())
    }
    for norm in [EdgeNorm::Softmax, EdgeNorm::None] {
        let rx = grad_check(|g, v| f(g, &store, &ep, &p, &graph, norm, v, &w), &x, 1e-5).unwrap();
        assert!(rx.max_rel_error <= 1e-6, "{rx:?}");
        let rp = grad_check_params(|g, s| f(g, s, &ep, &p, &graph, norm, g.constant(&x), &w), &store, 1e-5).unwrap();
        assert!(overall(&rp).max_rel_error <= 1e-6, "{rp:?}");
    }
}

#[test]
fn graph_dump_serializes() {
    let graph = build_graph_mask(&disjoint(2), &[(0, 1)], 0.4).unwrap();
    let dump = GraphDump::new("img0", &graph, &Tensor::full(&[2, 2], 0.5));
    let json = serde_json::to_value(&dump).unwrap();
    assert_eq!(json["mask"][0][1], true);
    assert_eq!(json["edges"][1][0], 0.5);
}
