//! Central finite-difference verification of graph gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::params::ParameterRegistry;

/// Magnitude below which both gradients are compared absolutely. Central
/// differences at h = 1e-5 on an O(1) loss carry roughly 1e-11 of roundoff,
/// so gradients much smaller than this cannot be resolved relatively.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CoordinateError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateError>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateError> {
        self.coordinates.iter().filter(|c| c.rel_error >= self.tol)
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares autodiff gradients of the scalar `f` against `(f(x+he) − f(x−he)) / 2h`
/// for every coordinate of every input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();

    let mut coordinates = Vec::new();
    let mut work = inputs.to_vec();
    for (input, tensor) in inputs.iter().enumerate() {
        for index in 0..tensor.len() {
            let x0 = tensor.data()[index];
            work[input].data_mut()[index] = x0 + step;
            let fp = eval(&work)?;
            work[input].data_mut()[index] = x0 - step;
            let fm = eval(&work)?;
            work[input].data_mut()[index] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[input].data()[index];
            coordinates.push(CoordinateError {
                input,
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        coordinates,
        max_rel_error,
        tol,
    })
}

/// Like [`grad_check`], but differentiates with respect to every trainable
/// parameter of `reg`, with `f` binding parameters through [`Graph::param`].
pub fn grad_check_params<F>(reg: &ParameterRegistry, f: F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterRegistry) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, reg)?;
    g.backward(out)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; reg.len()];
    for (id, grad) in g.param_grads() {
        analytic[id.index()] = Some(grad.to_vec());
    }
    let eval = |r: &ParameterRegistry| -> Result<f64> {
        let mut g = Graph::inference();
        let out = f(&mut g, r)?;
        Ok(g.value(out).item())
    };

    let mut work = reg.clone();
    let mut coordinates = Vec::new();
    for (id, p) in reg.iter() {
        if !p.trainable {
            continue;
        }
        for index in 0..p.value.len() {
            let x0 = p.value.data()[index];
            work.get_mut(id).value.data_mut()[index] = x0 + step;
            let fp = eval(&work)?;
            work.get_mut(id).value.data_mut()[index] = x0 - step;
            let fm = eval(&work)?;
            work.get_mut(id).value.data_mut()[index] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[index]);
            coordinates.push(CoordinateError {
                input: id.index(),
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = coordinates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        coordinates,
        max_rel_error,
        tol,
    })
}
