use std::sync::Arc;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares reverse-mode gradients against central differences.
///
/// `build` receives a fresh graph plus one leaf per entry of `params` and
/// must return a scalar node. Returns the maximum over every scalar
/// parameter of `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(params: &[Tensor], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    Ok(grad_check_detailed(params, eps, build)?.max_rel_error)
}

/// Location and size of the worst gradient disagreement.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// One scalar parameter's analytic and central-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSample {
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    /// `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`
    pub fn rel_error(&self) -> f64 {
        self.abs_error() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }
}

pub fn grad_check_detailed<F>(params: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for s in grad_samples(params, eps, build)? {
        let rel = s.rel_error();
        if rel > report.max_rel_error || rel.is_nan() {
            report = GradCheckReport {
                max_rel_error: rel,
                param: s.param,
                element: s.element,
                analytic: s.analytic,
                numeric: s.numeric,
            };
        }
    }
    Ok(report)
}

/// Analytic and central-difference derivative for every scalar parameter,
/// in parameter order.
pub fn grad_samples<F>(params: &[Tensor], eps: f64, build: F) -> Result<Vec<GradSample>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!(
            "grad_check eps must be positive, got {eps}"
        )));
    }

    let mut graph = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|p| graph.param(p.clone())).collect();
    let out = build(&mut graph, &leaves)?;
    let grads = graph.backward(out)?;

    let mut work: Vec<Arc<Tensor>> = params.iter().cloned().map(Arc::new).collect();
    let eval = |work: &[Arc<Tensor>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = work.iter().map(|p| g.constant(Arc::clone(p))).collect();
        let out = build(&mut g, &ids)?;
        let v = g.value(out);
        if !v.is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check function returned shape {:?}, expected a scalar",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let mut samples = Vec::with_capacity(params.iter().map(Tensor::numel).sum());
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("every leaf has a gradient");
        for e in 0..params[pi].numel() {
            let orig = params[pi].data()[e];
            Arc::make_mut(&mut work[pi]).data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            Arc::make_mut(&mut work[pi]).data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            Arc::make_mut(&mut work[pi]).data_mut()[e] = orig;
            samples.push(GradSample {
                param: pi,
                element: e,
                analytic: analytic.data()[e],
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }
    Ok(samples)
}
