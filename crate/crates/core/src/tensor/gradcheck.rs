//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Tensor};
use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// true gradient is zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the reverse-mode gradient of the scalar closure `f` against
/// `(f(x+h) - f(x-h)) / 2h` for every element of every input.
///
/// `f` is evaluated twice on identical inputs first; if the two values are
/// not bitwise equal the closure is rejected.
pub fn gradient_check<F>(mut f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradReport>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    if inputs.is_empty() {
        return Err(arg_err("gradient_check", "no inputs"));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let y = f(&leaves)?;
    if y.numel() != 1 {
        return Err(arg_err(
            "gradient_check",
            format!("closure must return a scalar, got shape {:?}", y.shape()),
        ));
    }
    let again = no_grad(|| f(&leaves))?;
    if y.item().to_bits() != again.item().to_bits() {
        return Err(Error::NonDeterministic(format!(
            "{} vs {}",
            y.item(),
            again.item()
        )));
    }
    y.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    drop(y);

    let frozen: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for (i, base) in frozen.iter().enumerate() {
        for j in 0..base.numel() {
            let eval = |delta: f64, f: &mut F| -> Result<f64> {
                let mut data = base.to_vec();
                data[j] += delta;
                let mut args = frozen.clone();
                args[i] = Tensor::new(data, base.shape())?;
                Ok(no_grad(|| f(&args))?.item())
            };
            let plus = eval(opts.step, &mut f)?;
            let minus = eval(-opts.step, &mut f)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            if !rel.is_finite() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
            report.max_abs_error = report.max_abs_error.max(abs);
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error.is_finite() && report.max_rel_error <= opts.tol;
    Ok(report)
}

/// Untracked tensor with entries uniform in [-1, 1).
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = super::numel(shape);
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).expect("shape and data agree")
}

/// Tracked leaf with entries uniform in [-1, 1).
pub fn random_leaf(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, seed).requires_grad()
}
