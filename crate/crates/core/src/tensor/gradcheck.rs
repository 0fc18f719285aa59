//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that coordinates
    /// with vanishing gradient are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-6, floor: 1e-6, max_coords: None, seed: 0 }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }
}

/// Result for one input tensor.
#[derive(Debug, Clone)]
pub struct InputCheck {
    pub input: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn coords_checked(&self) -> usize {
        self.inputs.iter().map(|c| c.checked).sum()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "grad check: {} coords, max rel err {:.3e} (tol {:.1e}) {}",
            self.coords_checked(),
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for c in &self.inputs {
            writeln!(
                f,
                "  input {}: {} coords, max rel err {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
                c.input, c.checked, c.max_rel_error, c.worst_coord, c.analytic, c.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of the scalar function `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate, in 64-bit.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let mut grads = tape.backward(out)?;
        vars.iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    };

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        if v.len() != 1 {
            return Err(Error::Contract(format!("grad_check needs a scalar function, got {:?}", v.shape())));
        }
        Ok(v.data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { inputs: Vec::new(), max_rel_error: 0.0, tolerance: cfg.tolerance };
    for (i, grad) in analytic.iter().enumerate() {
        let n = inputs[i].len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut check = InputCheck {
            input: i,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &c in &coords {
            let orig = work[i].data()[c];
            work[i].data_mut()[c] = orig + cfg.step;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - cfg.step;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[c];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                check.worst_coord = c;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.inputs.push(check);
    }
    Ok(report)
}
