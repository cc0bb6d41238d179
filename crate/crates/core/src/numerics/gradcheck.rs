//! Central-difference gradient verification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub parameter_count: usize,
    pub pass: bool,
    /// Coordinate with the largest relative error.
    pub worst_coordinate: usize,
    pub tolerance: f64,
}

/// Settings for a finite-difference audit.
///
/// The per-coordinate relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`; the floor keeps
/// coordinates whose true gradient is (near) zero from being judged on
/// round-off alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self::new(1e-5, 1e-4)
    }
}

impl GradCheck {
    pub const DEFAULT_FLOOR: f64 = 1e-5;

    pub fn new(step: f64, tolerance: f64) -> Self {
        Self {
            step,
            tolerance,
            floor: Self::DEFAULT_FLOOR,
        }
    }

    /// Compares `analytic` with the central-difference gradient of `f` at `point`.
    pub fn run<F>(&self, f: F, analytic: &[f64], point: &[f64]) -> Result<GradCheckReport>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if analytic.len() != point.len() {
            return Err(Error::shape("finite_difference_check", analytic.len(), point.len()));
        }
        let numeric = numeric_gradient(f, point, self.step)?;
        Ok(self.compare(analytic, &numeric))
    }

    /// Builds a report from precomputed analytic and numeric gradients.
    pub fn compare(&self, analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
        let mut max_abs = 0.0_f64;
        let mut max_rel = 0.0_f64;
        let mut worst = 0;
        for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(self.floor);
            max_abs = max_abs.max(abs);
            // NaN compares false, so route it explicitly
            if rel > max_rel || rel.is_nan() {
                max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = k;
            }
        }
        GradCheckReport {
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            parameter_count: analytic.len(),
            pass: max_rel < self.tolerance,
            worst_coordinate: worst,
            tolerance: self.tolerance,
        }
    }
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` for every k.
///
/// Coordinates are evaluated in parallel when the `parallel` feature is on.
pub fn numeric_gradient<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    par::map_range(point.len(), |k| {
        let mut x = point.to_vec();
        x[k] = point[k] + step;
        let plus = f(&x);
        x[k] = point[k] - step;
        let minus = f(&x);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation { coordinate: k });
        }
        Ok((plus - minus) / (2.0 * step))
    })
    .into_iter()
    .collect()
}

/// One-shot check with explicit step and tolerance.
pub fn finite_difference_check<F>(
    f: F,
    analytic: &[f64],
    point: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    GradCheck::new(step, tolerance).run(f, analytic, point)
}
