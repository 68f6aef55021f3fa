use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many entries per input (evenly spaced).
    pub max_entries_per_input: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries_per_input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest relative error per input tensor.
    pub per_input: Vec<f64>,
    pub entries_checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// finite differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match cfg.max_entries_per_input {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for idx in picks {
            let orig = input.data()[idx];
            work[ti].data_mut()[idx] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[idx] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[ti].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max(rel);
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        entries_checked: checked,
        passed: max_rel_error < cfg.tolerance,
    })
}
