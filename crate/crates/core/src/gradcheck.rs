//! Central finite-difference gradient checks for a whole model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::Graph;
use crate::model::{Model, ModelError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that two gradients that are
/// both essentially zero do not produce a huge ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn offenders(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// Compares backprop gradients of the evaluation-mode loss against central
/// differences for every entry of every parameter. Hard assignments are
/// frozen at their unperturbed forward-pass value.
pub fn gradcheck(
    model: &Model,
    graph: &Graph,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.graph_pass(graph, false, None, &mut rng)?;
    let frozen = pass.assignments;
    let mut probe = model.clone();
    let mut params = Vec::new();
    for id in model.params.ids() {
        let zero;
        let analytic = match pass.grads.get(id) {
            Some(g) => g,
            None => {
                let t = model.params.get(id);
                zero = crate::tensor::Tensor::zeros(t.rows(), t.cols());
                &zero
            }
        };
        let (rows, cols) = analytic.shape();
        let mut check = ParamCheck {
            name: model.params.name(id).to_string(),
            entries: rows * cols,
            max_rel_error: 0.0,
            worst_index: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.params.get(id).get(r, c);
                probe.params.get_mut(id).set(r, c, orig + step);
                let plus = probe.loss_value(graph, Some(&frozen))?;
                probe.params.get_mut(id).set(r, c, orig - step);
                let minus = probe.loss_value(graph, Some(&frozen))?;
                probe.params.get_mut(id).set(r, c, orig);
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic.get(r, c);
                let err = relative_error(a, numeric);
                if err > check.max_rel_error || !err.is_finite() {
                    check.max_rel_error = err;
                    check.worst_index = (r, c);
                    check.analytic = a;
                    check.numeric = numeric;
                }
            }
        }
        check.passed = check.max_rel_error <= tolerance;
        params.push(check);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step,
        tolerance,
        loss: pass.loss,
        max_rel_error,
        passed: params.iter().all(|p| p.passed),
        params,
    })
}
