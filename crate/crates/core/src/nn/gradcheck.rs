//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{GradBuffer, ParamStore};

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares `analytic` with `(f(p + eps) - f(p - eps)) / 2 eps` on every
/// coordinate of every parameter. `params` is restored before returning.
pub fn finite_difference_check<F>(
    params: &mut ParamStore,
    f: F,
    analytic: &GradBuffer,
    eps: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    finite_difference_check_where(params, f, analytic, eps, |_| true)
}

/// `finite_difference_check` restricted to parameters whose name passes
/// `select`.
pub fn finite_difference_check_where<F, S>(
    params: &mut ParamStore,
    f: F,
    analytic: &GradBuffer,
    eps: f64,
    select: S,
) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
    S: Fn(&str) -> bool,
{
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(first, second));
    }
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let ids: Vec<_> = params.ids().filter(|&id| select(params.name(id))).collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + eps;
            let plus = f(params);
            params.get_mut(id).data_mut()[k] = orig - eps;
            let minus = f(params);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.get(id)[k];
            let err = relative_error(a, numeric);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}[{k}]", params.name(id))));
            }
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient check of a scalar built on a fresh tape by `build`.
pub fn check_graph<B>(params: &mut ParamStore, build: B, eps: f64) -> Result<GradcheckReport>
where
    B: Fn(&mut Graph) -> Result<Var>,
{
    check_graph_where(params, build, eps, |_| true)
}

pub fn analytic_gradient<B>(params: &ParamStore, build: B) -> Result<GradBuffer>
where
    B: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    let grads = g.backward(loss)?;
    let mut buf = GradBuffer::zeros_like(params);
    grads.accumulate_into(&mut buf, 1.0);
    Ok(buf)
}

pub fn check_graph_where<B, S>(params: &mut ParamStore, build: B, eps: f64, select: S) -> Result<GradcheckReport>
where
    B: Fn(&mut Graph) -> Result<Var>,
    S: Fn(&str) -> bool,
{
    let analytic = analytic_gradient(params, &build)?;
    let f = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = build(&mut g)?;
        Ok(g.scalar(loss))
    };
    finite_difference_check_where(params, f, &analytic, eps, select)
}
