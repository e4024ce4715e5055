use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataio::{synth_generate, Dims, SynthConfig};
use crate::model::Direction;
use crate::numcore::{DType, Tensor};

fn sim(n: usize, m: usize, data: Vec<f64>) -> SimMatrix {
    SimMatrix::new(
        (0..n).map(|i| format!("i{i}")).collect(),
        (0..m).map(|j| format!("s{j}")).collect(),
        Tensor::new(&[n, m], data).unwrap(),
    )
    .unwrap()
}

/// Rank by explicit sorting: descending score, then ascending index.
fn sorted_rank(scores: &[f64], targets: &[usize]) -> usize {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.iter().position(|c| targets.contains(c)).unwrap()
}

fn oracle(s: &SimMatrix, image_of: &[usize]) -> [f64; 6] {
    let (n, m) = s.shape();
    let pct = |ranks: &[usize], k: usize| 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64;
    let i2t: Vec<usize> = (0..n)
        .map(|i| {
            let caps: Vec<usize> = (0..m).filter(|&j| image_of[j] == i).collect();
            sorted_rank(s.scores.row(i), &caps)
        })
        .collect();
    let t2i: Vec<usize> = (0..m)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| s.scores.at(i, j)).collect();
            sorted_rank(&col, &[image_of[j]])
        })
        .collect();
    [pct(&i2t, 1), pct(&i2t, 5), pct(&i2t, 10), pct(&t2i, 1), pct(&t2i, 5), pct(&t2i, 10)]
}

#[test]
fn identity_is_perfect() {
    let n = 12;
    let data = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    let r = recall_at_k(&sim(n, n, data), &(0..n).collect::<Vec<_>>(), "test").unwrap();
    assert_eq!(r.recalls(), [100.0; 6]);
    assert_eq!(r.rsum, 600.0);
}

fn anti_diagonal(n: usize) -> SimMatrix {
    sim(n, n, (0..n * n).map(|k| if k / n + k % n == n - 1 { 1.0 } else { 0.0 }).collect())
}

#[test]
fn anti_diagonal_matches_brute_force() {
    for n in [10, 11] {
        let links: Vec<usize> = (0..n).collect();
        let s = anti_diagonal(n);
        let r = recall_at_k(&s, &links, "test").unwrap();
        assert_eq!(r.recalls(), oracle(&s, &links), "n = {n}");
    }
    // Even size: the anti-diagonal never crosses the ground truth.
    let r = recall_at_k(&anti_diagonal(10), &(0..10).collect::<Vec<_>>(), "test").unwrap();
    assert_eq!(r.image_to_text.r1, 0.0);
    assert_eq!(r.text_to_image.r1, 0.0);
    // Odd size: one hit at the crossing.
    let r = recall_at_k(&anti_diagonal(11), &(0..11).collect::<Vec<_>>(), "test").unwrap();
    assert_eq!(r.image_to_text.r1, 100.0 / 11.0);
    assert_eq!(r.text_to_image.r1, 100.0 / 11.0);
}

fn random_case(rng: &mut ChaCha8Rng, n: usize, cpi: usize, levels: u32) -> (SimMatrix, Vec<usize>) {
    let m = n * cpi;
    let data = (0..n * m).map(|_| (rng.gen_range(0..levels) as f64) / levels as f64).collect();
    let mut links: Vec<usize> = (0..m).map(|j| j / cpi).collect();
    for j in (1..m).rev() {
        links.swap(j, rng.gen_range(0..=j));
    }
    (sim(n, m, data), links)
}

#[test]
fn random_matrices_match_the_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for levels in [4, 64, 1 << 20] {
        let (s, links) = random_case(&mut rng, 50, 5, levels);
        let r = recall_at_k(&s, &links, "test").unwrap();
        assert_eq!(r.recalls(), oracle(&s, &links));
        let [a, b, c, d, e, f] = r.recalls();
        assert!(a <= b && b <= c && d <= e && e <= f);
    }
}

#[test]
fn strictly_monotone_transforms_do_not_change_recalls() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (s, links) = random_case(&mut rng, 20, 5, 16);
    let t = sim(20, 100, s.scores.data().iter().map(|x| x * x * x + 2.0 * x - 7.0).collect());
    let a = recall_at_k(&s, &links, "x").unwrap();
    let b = recall_at_k(&t, &links, "x").unwrap();
    assert_eq!(a, b);
}

#[test]
fn rank_ties_go_to_the_lower_index() {
    assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0), 0);
    assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2), 2);
    assert_eq!(rank_of(&[0.1, 0.9, 0.5], 2), 1);
}

#[test]
fn bad_inputs_are_rejected() {
    let s = sim(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    assert!(recall_at_k(&s, &[0], "x").is_err());
    assert!(recall_at_k(&s, &[0, 0], "x").is_err());
    assert!(recall_at_k(&s, &[0, 2], "x").is_err());
    assert!(fold_summaries(&s, &[0, 1], 3, "x").is_err());
}

#[test]
fn folds_average_per_block_recalls() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, cpi, folds) = (1000, 5, 5);
    let m = n * cpi;
    let data = (0..n * m).map(|_| rng.gen::<f64>()).collect();
    let links: Vec<usize> = (0..m).map(|j| j / cpi).collect();
    let s = sim(n, m, data);
    let got = mean_summary(&fold_summaries(&s, &links, folds, "test").unwrap(), "test").unwrap();

    let block = n / folds;
    let mut expect = [0.0; 6];
    for f in 0..folds {
        let rows: Vec<usize> = (f * block..(f + 1) * block).collect();
        let cols: Vec<usize> = (f * block * cpi..(f + 1) * block * cpi).collect();
        let sub = sim(
            block,
            cols.len(),
            rows.iter().flat_map(|&i| cols.iter().map(move |&c| (i, c))).map(|(i, c)| s.scores.at(i, c)).collect(),
        );
        let sub_links: Vec<usize> = cols.iter().map(|&c| links[c] - f * block).collect();
        for (e, v) in expect.iter_mut().zip(oracle(&sub, &sub_links)) {
            *e += v / folds as f64;
        }
    }
    for (g, e) in got.recalls().iter().zip(expect) {
        approx::assert_relative_eq!(*g, e, epsilon = 1e-12);
    }
    assert_eq!(got.image_to_text.ranks.len(), n);
    assert_eq!(got.text_to_image.ranks.len(), m);
}

fn toy() -> (Dataset, HireModel) {
    let ds = synth_generate(&SynthConfig::new(7, 6, 2, Dims::TOY)).unwrap().train;
    let hyper = HyperParams { dtype: DType::F64, ..HyperParams::toy(Direction::ImageToText) };
    let model = HireModel::new(hyper, Dims::TOY.region_dim, Dims::TOY.word_dim, 4).unwrap();
    (ds, model)
}

#[test]
fn ensemble_of_one_model_twice_equals_that_model() {
    let (ds, model) = toy();
    let report = evaluate(&[&model, &model], &ds, None).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].0, "i2t");
    assert_eq!(report.rows[1].0, "i2t#2");
    let single = report.row("i2t").unwrap();
    assert_eq!(report.row(ENSEMBLE_LABEL).unwrap(), single);
    assert!(report.table().lines().count() == 4);
}

#[test]
fn expectations_report_shortfalls() {
    let (ds, model) = toy();
    let report = evaluate(&[&model], &ds, None).unwrap();
    let actual = report.row("i2t").unwrap().rsum;
    let mut exp = Expectations::new();
    exp.entry("i2t".into()).or_default().insert("rsum".into(), actual);
    assert!(check_expectations(&report, &exp).unwrap().is_empty());
    exp.get_mut("i2t").unwrap().insert("rsum".into(), actual + 1.0);
    let short = check_expectations(&report, &exp).unwrap();
    assert_eq!(short.len(), 1);
    assert_eq!(short[0].actual, actual);
    exp.get_mut("i2t").unwrap().insert("r99".into(), 0.0);
    assert!(matches!(check_expectations(&report, &exp), Err(HireError::Config(_))));
    let mut exp = Expectations::new();
    exp.insert("t2i".into(), Default::default());
    assert!(check_expectations(&report, &exp).is_err());
}

fn quick_train() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, ..TrainConfig::default() }
}

#[test]
fn empty_ablation_is_an_empty_table() {
    let (ds, model) = toy();
    let t = run_ablation(&model.hyper, &quick_train(), 0, &[], &ds, &ds).unwrap();
    assert!(t.rows.is_empty());
    assert_eq!(t.table().lines().count(), 1);
}

#[test]
fn full_spec_matches_a_plain_run() {
    let (ds, model) = toy();
    let t = run_ablation(&model.hyper, &quick_train(), 9, &[AblationSpec::full(Ordering::A12B34)], &ds, &ds).unwrap();
    let mut plain = HireModel::new(model.hyper.clone(), Dims::TOY.region_dim, Dims::TOY.word_dim, 9).unwrap();
    train(&mut plain, &ds, None, &quick_train(), None).unwrap();
    let direct = evaluate(&[&plain], &ds, None).unwrap();
    assert_eq!(&t.rows[0].summary, direct.row("i2t").unwrap());
}

#[test]
fn standard_ablation_is_complete_and_isolated() {
    let (ds, model) = toy();
    let specs = AblationSpec::standard();
    assert_eq!(specs.len(), 9);
    let cfg = TrainConfig { epochs: 1, ..quick_train() };
    let t = run_ablation(&model.hyper, &cfg, 0, &specs, &ds, &ds).unwrap();
    assert_eq!(t.rows.len(), 9);
    assert!(t.gradients_isolated(), "{}", t.table());
    let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels[1], "B(34)A(12)");
    assert_eq!(labels[8], "A(12)B(34) w/o LGII");
    let json = serde_json::to_string(&t).unwrap();
    assert_eq!(serde_json::from_str::<AblationTable>(&json).unwrap(), t);
}

#[test]
fn unknown_component_is_a_config_error() {
    let spec = AblationSpec { ordering: Ordering::A12B34, disable: vec!["gcn".into()] };
    assert!(matches!(spec.components(), Err(HireError::Config(_))));
    let spec: AblationSpec = serde_json::from_str(r#"{"ordering": "B34A12", "disable": ["vsa", "llii"]}"#).unwrap();
    let c = spec.components().unwrap();
    assert!(!c.vsa && !c.llii && c.tsa && c.vssg && c.lgii);
}
