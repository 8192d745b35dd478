//! Central-difference verification of analytic gradients.
//!
//! The function under test receives a fresh [`Graph`] and one leaf per input
//! tensor and must return a scalar node. Analytic gradients come from
//! [`Graph::backward`]; numeric ones from re-evaluating the function with
//! each input element shifted by ±step. Relative error is
//! `|a − n| / max(|a|, |n|, 1e-8)`.
//!
//! [`check_gradients`] also differences with half the step. On a smooth
//! stretch the two estimates agree to rounding; when a kink (ReLU at zero,
//! max-pool tie) lies inside the stencil they differ, and that element is
//! skipped and counted instead of compared. The test looks only at the
//! function values, so it cannot hide a wrong analytic gradient.

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Elements whose stencil straddles a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.scalar(out))
}

pub fn analytic_gradients<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect())
}

pub fn numeric_gradients<F>(inputs: &[Tensor<f64>], f: &F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = evaluate(&work, f)?;
            work[i].data_mut()[j] = orig - step;
            let minus = evaluate(&work, f)?;
            work[i].data_mut()[j] = orig;
            gi.push((plus - minus) / (2.0 * step));
        }
        grads.push(gi);
    }
    Ok(grads)
}

/// Largest disagreement between the full- and half-step estimates still
/// attributed to rounding.
pub const SMOOTHNESS_ABS: f64 = 1e-8;
pub const SMOOTHNESS_REL: f64 = 1e-6;

/// Replaces with NaN every coarse estimate that the fine one contradicts.
/// With a kink at distance d < h the two central differences differ by
/// |s₁ − s₂|·d/(2h), while on smooth stretches they differ by O(h²) plus
/// rounding.
pub fn mask_kinks(mut coarse: Vec<Vec<f64>>, fine: &[Vec<f64>]) -> Vec<Vec<f64>> {
    for (c, f) in coarse.iter_mut().zip(fine) {
        for (cv, &fv) in c.iter_mut().zip(f) {
            let gap = (*cv - fv).abs();
            if gap > SMOOTHNESS_ABS.max(SMOOTHNESS_REL * cv.abs().max(fv.abs())) {
                *cv = f64::NAN;
            }
        }
    }
    coarse
}

/// Compares element-wise; NaN numeric entries are counted as skipped.
pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&av, &nv)) in a.iter().zip(n).enumerate() {
            if nv.is_nan() {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let e = relative_error(av, nv);
            if e > report.max_rel_error || e.is_nan() {
                report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
                report.worst = (i, j);
                report.analytic = av;
                report.numeric = nv;
            }
        }
    }
    report
}

pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let coarse = numeric_gradients(inputs, &f, step)?;
    let fine = numeric_gradients(inputs, &f, step / 2.0)?;
    Ok(compare(&analytic, &mask_kinks(coarse, &fine)))
}
