//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Anything exposing an ordered, named list of tensors.
pub trait Parameters<T: Scalar> {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn zero_grads(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

impl<T: Scalar> Parameters<T> for Vec<(String, Tensor<T>)> {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[element]` of the worst element, if any element was checked.
    pub worst: Option<String>,
    pub elements_checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against `(f(θ+ε) - f(θ-ε)) / 2ε` for every
/// element of every parameter with `requires_grad`.
///
/// `loss` must evaluate the scalar objective at the current parameter values
/// and accumulate its analytic gradient into each parameter's grad buffer.
/// Parameter values are restored and grads are left holding the analytic
/// gradient at the unperturbed point.
pub fn grad_check<T, P, F>(params: &mut P, mut loss: F, epsilon: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    P: Parameters<T>,
    F: FnMut(&mut P) -> Result<T>,
{
    params.zero_grads();
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric {
            location: "objective at unperturbed parameters".into(),
        });
    }
    let analytic: Vec<Option<Vec<T>>> = params
        .parameters_mut()
        .into_iter()
        .map(|(_, p)| {
            p.requires_grad()
                .then(|| p.grad().map_or_else(|| vec![T::zero(); p.numel()], <[T]>::to_vec))
        })
        .collect();

    let eps = T::of(epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        elements_checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else { continue };
        let name = params.parameters_mut()[pi].0.clone();
        for (e, &a) in grads.iter().enumerate() {
            let orig = nth(params, pi).data()[e];
            nth(params, pi).data_mut()[e] = orig + eps;
            let plus = loss(params)?;
            nth(params, pi).data_mut()[e] = orig - eps;
            let minus = loss(params)?;
            nth(params, pi).data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric {
                    location: format!("{name}[{e}]"),
                });
            }
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * epsilon);
            let rel = relative_error(a.as_f64(), numeric);
            report.elements_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(format!("{name}[{e}]"));
            }
        }
    }

    params.zero_grads();
    for ((_, p), g) in params.parameters_mut().into_iter().zip(analytic) {
        if let Some(g) = g {
            p.accumulate_grad(&g)?;
        }
    }
    Ok(report)
}

fn nth<T: Scalar, P: Parameters<T>>(params: &mut P, i: usize) -> &mut Tensor<T> {
    params.parameters_mut().swap_remove(i).1
}
