//! Central finite-difference verification of reverse-mode gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Largest acceptable relative error per parameter tensor.
    pub tol: f64,
    /// Lower bound on the error denominator, so tensors whose gradient is
    /// entirely below the finite-difference noise floor are judged on
    /// absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-3,
            tol: 1e-2,
            floor: 1e-6,
        }
    }
}

impl GradCheckOptions {
    /// Defaults with the denominator floor matched to the working precision.
    /// In `f32` a central difference with `h = 1e-3` carries roughly `1e-4`
    /// of rounding noise, so entries below `2e-2` are judged on absolute
    /// error `tol · 2e-2` instead.
    pub fn for_precision<T: Scalar>() -> Self {
        let single = std::mem::size_of::<T>() == 4;
        GradCheckOptions {
            floor: if single { 2e-2 } else { 1e-6 },
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub options: GradCheckOptions,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<40} {:>6} {:>12.3e} {}",
                e.name,
                e.elements,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} (tol {:e}, h {:e}, worst {:.3e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.options.tol,
            self.options.h,
            self.worst()
        )
    }
}

/// Relative error of one parameter tensor: the largest elementwise deviation
/// divided by the tensor's gradient magnitude (infinity norm, floored).
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(floor, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Compares the gradients returned by `f` against central differences
/// `(f(x+h) − f(x−h)) / 2h`, one parameter element at a time.
///
/// `f` maps a parameter list to `(loss, gradients)`; gradients must come back
/// in parameter order with matching shapes.
pub fn grad_check<T, F>(
    mut f: F,
    params: &[Tensor<T>],
    names: &[String],
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>,
{
    if !(options.h > 0.0) {
        return Err(Error::config("grad_check step h must be positive"));
    }
    if names.len() != params.len() {
        return Err(Error::config("grad_check needs one name per parameter"));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(Error::config("gradient count differs from parameter count"));
    }
    let mut work = params.to_vec();
    let h = T::of(options.h);
    let mut entries = Vec::with_capacity(params.len());
    for (pi, name) in names.iter().enumerate() {
        params[pi].same_shape(&analytic[pi], "grad_check")?;
        let mut numeric = Vec::with_capacity(params[pi].len());
        for e in 0..params[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let (plus, _) = f(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let (minus, _) = f(&work)?;
            work[pi].data_mut()[e] = orig;
            numeric.push((plus.as_f64() - minus.as_f64()) / (2.0 * options.h));
        }
        let a: Vec<f64> = analytic[pi].data().iter().map(|v| v.as_f64()).collect();
        let err = relative_error(&a, &numeric, options.floor);
        entries.push(GradCheckEntry {
            name: name.clone(),
            elements: numeric.len(),
            max_rel_error: err,
            passed: err.is_finite() && err <= options.tol,
        });
    }
    Ok(GradCheckReport { options, entries })
}
