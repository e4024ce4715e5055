//! Retrieval metrics, single-model and ensemble evaluation, expectation
//! checks and the ordering / component ablation matrix.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{
    fold_summaries, mean_summary, rank_of, recall_at_k, RetrievalReport, RetrievalSummary, RetrievalTask,
};

use crate::dataio::Dataset;
use crate::error::{HireError, Result};
use crate::model::{ensemble_scores, Components, HireModel, HyperParams, Ordering, SimMatrix};
use crate::trainer::{train, TrainConfig};

pub const ENSEMBLE_LABEL: &str = "ensemble";

/// Recalls of `sim` against the links of `ds`, averaged over `folds`
/// contiguous image blocks when given.
pub fn summarize(sim: &SimMatrix, ds: &Dataset, folds: Option<usize>) -> Result<RetrievalSummary> {
    let links: Vec<usize> = (0..ds.sentences.len()).map(|s| ds.image_of(s)).collect();
    match folds {
        None | Some(1) => recall_at_k(sim, &links, &ds.split),
        Some(k) => mean_summary(&fold_summaries(sim, &links, k, &ds.split)?, &ds.split),
    }
}

/// One labelled row per model, plus the ensemble when two models are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub folds: Option<usize>,
    pub rows: Vec<(String, RetrievalSummary)>,
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&RetrievalSummary> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    pub fn table(&self) -> String {
        let rows: Vec<(&str, &RetrievalSummary)> = self.rows.iter().map(|(l, s)| (l.as_str(), s)).collect();
        recall_table(&rows)
    }
}

/// Scores `ds` with each model. Rows are labelled by direction tag.
pub fn evaluate(models: &[&HireModel], ds: &Dataset, folds: Option<usize>) -> Result<EvalReport> {
    if models.is_empty() || models.len() > 2 {
        return Err(HireError::Config(format!("evaluate takes one or two models, got {}", models.len())));
    }
    let sims = models
        .iter()
        .map(|m| m.score_dataset(ds))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, (m, sim)) in models.iter().zip(&sims).enumerate() {
        let mut label = m.direction().tag().to_string();
        if rows.iter().any(|(l, _): &(String, _)| *l == label) {
            label = format!("{label}#{}", i + 1);
        }
        rows.push((label, summarize(sim, ds, folds)?));
    }
    if let [a, b] = sims.as_slice() {
        rows.push((ENSEMBLE_LABEL.to_string(), summarize(&ensemble_scores(a, b)?, ds, folds)?));
    }
    Ok(EvalReport {
        split: ds.split.clone(),
        folds,
        rows,
    })
}

/// Minimum values per row label and recall field, e.g.
/// `{"ensemble": {"rsum": 600.0}}`.
pub type Expectations = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub row: String,
    pub field: String,
    pub expected: f64,
    pub actual: f64,
}

/// Every expectation the report misses. Unknown rows or fields are config
/// errors.
pub fn check_expectations(report: &EvalReport, expect: &Expectations) -> Result<Vec<Shortfall>> {
    let mut out = Vec::new();
    for (row, fields) in expect {
        let summary = report
            .row(row)
            .ok_or_else(|| HireError::Config(format!("expectations name unknown row {row:?}")))?;
        let have: BTreeMap<&str, f64> = summary.fields().into_iter().collect();
        for (field, &min) in fields {
            let actual = *have
                .get(field.as_str())
                .ok_or_else(|| HireError::Config(format!("expectations name unknown field {field:?}")))?;
            if actual < min {
                out.push(Shortfall {
                    row: row.clone(),
                    field: field.clone(),
                    expected: min,
                    actual,
                });
            }
        }
    }
    Ok(out)
}

/// Aligned text table of recalls, one line per row.
pub fn recall_table(rows: &[(&str, &RetrievalSummary)]) -> String {
    let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut s = format!(
        "{:<w$}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}  {:>6}\n",
        "model", "i2t@1", "i2t@5", "i2t@10", "t2i@1", "t2i@5", "t2i@10", "rSum"
    );
    for (label, sum) in rows {
        let r = sum.recalls();
        let _ = writeln!(
            s,
            "{label:<w$}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1} {:>6.1} {:>6.1}  {:>6.1}",
            r[0], r[1], r[2], r[3], r[4], r[5], sum.rsum
        );
    }
    s
}

/// One ablation variant: an ordering plus components switched off.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub ordering: Ordering,
    #[serde(default)]
    pub disable: Vec<String>,
}

impl AblationSpec {
    pub fn full(ordering: Ordering) -> Self {
        AblationSpec {
            ordering,
            disable: Vec::new(),
        }
    }

    pub fn without(component: &str) -> Self {
        AblationSpec {
            ordering: Ordering::A12B34,
            disable: vec![component.to_string()],
        }
    }

    /// The four orderings followed by the five single-component toggles.
    pub fn standard() -> Vec<AblationSpec> {
        let mut v: Vec<_> = Ordering::ALL.iter().map(|&o| Self::full(o)).collect();
        v.extend(Components::NAMES.iter().map(|c| Self::without(c)));
        v
    }

    pub fn label(&self) -> String {
        if self.disable.is_empty() {
            self.ordering.label().to_string()
        } else {
            format!("{} w/o {}", self.ordering.label(), self.disable.join("+").to_uppercase())
        }
    }

    pub fn components(&self) -> Result<Components> {
        let mut c = Components::default();
        for name in &self.disable {
            let off = Components::without(name)?;
            c.vsa &= off.vsa;
            c.tsa &= off.tsa;
            c.vssg &= off.vssg;
            c.llii &= off.llii;
            c.lgii &= off.lgii;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub spec: AblationSpec,
    pub summary: RetrievalSummary,
    /// Parameters of disabled components that received a nonzero gradient.
    /// Empty when the toggles are exact pass-throughs.
    pub leaked: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn table(&self) -> String {
        let rows: Vec<(&str, &RetrievalSummary)> =
            self.rows.iter().map(|r| (r.label.as_str(), &r.summary)).collect();
        let mut s = recall_table(&rows);
        for r in self.rows.iter().filter(|r| !r.leaked.is_empty()) {
            let _ = writeln!(s, "{}: gradient reached {}", r.label, r.leaked.join(", "));
        }
        s
    }

    pub fn gradients_isolated(&self) -> bool {
        self.rows.iter().all(|r| r.leaked.is_empty())
    }
}

/// Trains one model per spec from the same seeds and evaluates it on
/// `eval_set`.
pub fn run_ablation(
    base: &HyperParams,
    train_cfg: &TrainConfig,
    model_seed: u64,
    specs: &[AblationSpec],
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut hyper = base.clone();
        hyper.ordering = spec.ordering;
        hyper.components = spec.components()?;
        let mut model = HireModel::new(hyper, train_set.dims.region_dim, train_set.dims.word_dim, model_seed)?;
        let outcome = train(&mut model, train_set, None, train_cfg, None)?;
        let leaked = model
            .hyper
            .components
            .disabled()
            .into_iter()
            .flat_map(|c| model.component_params(c))
            .filter(|p| outcome.touched.contains(p))
            .collect();
        let summary = summarize(&model.score_dataset(eval_set)?, eval_set, None)?;
        rows.push(AblationRow {
            label: spec.label(),
            spec: spec.clone(),
            summary,
            leaked,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests;
