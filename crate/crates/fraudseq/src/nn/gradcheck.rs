//! Central finite-difference gradient verification.
//!
//! Used by the test suites to validate every hand-written backward pass.
//! The numeric side only ever calls the loss closure, so it stays
//! independent of the analytic gradient path it checks.

use crate::nn::params::{Gradients, ParameterStore};

/// Default perturbation for central differences at 64-bit precision.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Worst relative error found by [`check_gradients`].
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
}

/// Compare analytic gradients against central finite differences of `loss`
/// over every element of every parameter. The relative error for one
/// element is |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn check_gradients<F>(
    params: &mut ParameterStore,
    analytic: &Gradients,
    epsilon: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParameterStore) -> f64,
{
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0;
    let mut worst_name = String::new();
    for name in names {
        let grad = analytic
            .get(&name)
            .unwrap_or_else(|| panic!("no analytic gradient for `{name}`"))
            .clone();
        for idx in 0..grad.len() {
            let original = params.get(&name).data()[idx];
            params.get_mut(&name).data_mut()[idx] = original + epsilon;
            let up = loss(params);
            params.get_mut(&name).data_mut()[idx] = original - epsilon;
            let down = loss(params);
            params.get_mut(&name).data_mut()[idx] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.data()[idx];
            let scale = 1.0f64.max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / scale;
            if rel > worst {
                worst = rel;
                worst_name = format!("{name}[{idx}]");
            }
        }
    }
    GradCheckReport {
        max_relative_error: worst,
        worst_parameter: worst_name,
    }
}
