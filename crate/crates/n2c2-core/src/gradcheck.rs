//! Finite-difference utilities for verifying analytic gradients.
//!
//! All checking runs in f64; the 1e-4 relative tolerance used across the
//! test suite has no headroom in f32.

/// Central difference `(f(x0+step) - f(x0-step)) / (2 step)`.
///
/// `loss_at` must set the parameter to the given value and return the loss.
/// The parameter is left at `x0 - step`; callers restore it afterwards.
pub fn central_diff(x0: f64, step: f64, mut loss_at: impl FnMut(f64) -> f64) -> f64 {
    let up = loss_at(x0 + step);
    let down = loss_at(x0 - step);
    (up - down) / (2.0 * step)
}

/// Relative disagreement between analytic and numeric derivatives.
///
/// Denominator is `max(|a|, |b|)`; when both magnitudes sit below
/// `auto_pass_threshold` the pair counts as agreeing (0.0), since central
/// differences carry ~1e-9 absolute noise near zero.
pub fn relative_error(a: f64, b: f64, auto_pass_threshold: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < auto_pass_threshold {
        return 0.0;
    }
    (a - b).abs() / denom
}

/// Summary of a parameter-by-parameter gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn new() -> Self {
        Self {
            checked: 0,
            passed: 0,
            max_rel_err: 0.0,
        }
    }

    pub fn record(&mut self, rel_err: f64, tolerance: f64) {
        self.checked += 1;
        if rel_err < tolerance {
            self.passed += 1;
        }
        if rel_err > self.max_rel_err {
            self.max_rel_err = rel_err;
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checked == self.passed
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self::new()
    }
}
