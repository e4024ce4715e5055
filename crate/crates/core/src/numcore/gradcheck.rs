//! Central-difference gradient verification.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::{DType, Tensor};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Kink detector: one-sided slopes further apart than this (relative to
/// `max(1, |central|)`) mark a nondifferentiable coordinate.
const KINK_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max over compared coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub compared: usize,
    /// Coordinates skipped because `f` has a kink there.
    pub excluded: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.compared += other.compared;
        self.excluded += other.excluded;
    }
}

/// Relative error used by every check in this crate.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

struct Probe {
    plus: f64,
    minus: f64,
    center: f64,
}

fn compare(analytic: f64, p: Probe, h: f64, report: &mut GradCheckReport) {
    let central = (p.plus - p.minus) / (2.0 * h);
    let right = (p.plus - p.center) / h;
    let left = (p.center - p.minus) / h;
    if (right - left).abs() > KINK_TOLERANCE * central.abs().max(1.0) {
        report.excluded += 1;
        return;
    }
    report.compared += 1;
    report.max_rel_error = report.max_rel_error.max(rel_error(analytic, central));
}

/// Checks the reverse-mode gradient of a scalar function of several tensors
/// against central differences, in f64.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new(DType::F64);
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x)).collect();
        Ok(f(&g, &vars)?.item())
    };

    let g = Graph::new(DType::F64);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| g.input(&x.clone().with_dtype(DType::F64).requiring_grad()))
        .collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let center = loss.item();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs
        .iter()
        .map(|x| x.clone().with_dtype(DType::F64))
        .collect();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; work[k].len()]);
        for i in 0..work[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            compare(analytic[i], Probe { plus, minus, center }, h, &mut report);
        }
    }
    Ok(report)
}

/// Single-input form.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    grad_check_many(|g, xs| f(g, xs[0]), std::slice::from_ref(x), h)
}

/// Checks gradients with respect to every parameter of `store`; returns one
/// report per parameter name in store order.
pub fn grad_check_params<F>(f: F, store: &ParamStore, h: f64) -> Result<Vec<(String, GradCheckReport)>>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let mut work = store.clone();
    work.cast(DType::F64);
    work.zero_grad();

    let g = Graph::new(DType::F64);
    let loss = f(&g, &work)?;
    let center = loss.item();
    let grads = g.backward(loss)?;
    let mut with_grads = work.clone();
    grads.accumulate_into(&mut with_grads)?;
    drop(grads);
    drop(g);

    let eval = |ps: &ParamStore| -> Result<f64> {
        let g = Graph::inference(DType::F64);
        Ok(f(&g, ps)?.item())
    };

    let names: Vec<String> = work.names().map(str::to_string).collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let analytic = with_grads
            .get(&name)
            .and_then(Tensor::grad)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; work.get(&name).map_or(0, Tensor::len)]);
        let mut report = GradCheckReport::default();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            compare(a, Probe { plus, minus, center }, h, &mut report);
        }
        out.push((name, report));
    }
    Ok(out)
}

/// Folds per-parameter reports into one.
pub fn overall(reports: &[(String, GradCheckReport)]) -> GradCheckReport {
    let mut total = GradCheckReport::default();
    for (_, r) in reports {
        total.merge(r);
    }
    total
}
