//! Finite-difference verification of analytic gradients.
//!
//! The checked function must be deterministic: re-evaluating it with the
//! same parameter values has to reproduce the same loss (freeze dropout
//! masks by reseeding, or run with p = 0).

use super::params::ParamSet;
use super::tape::{Gradients, Tape};
use super::tensor::Tensor;
use super::NumericsError;

/// Relative-error floor: entries where both routes are below this magnitude
/// compare against the floor instead of each other.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamGradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamGradReport>,
    pub step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamGradReport> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamGradReport> {
        self.per_param.iter().filter(|p| !p.pass)
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(REL_FLOOR);
    (a - n).abs() / denom
}

/// Compare analytic gradients (computed here via one backward pass) against
/// central finite differences over every trainable coordinate.
pub fn check_gradient<F>(
    loss_fn: F,
    sets: &[&ParamSet],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    let tape = Tape::recording();
    let loss = loss_fn(&tape)?;
    let grads = tape.backward(&loss)?;
    check_gradient_against(&grads, loss_fn, sets, step, tolerance)
}

/// Compare a supplied analytic gradient against finite differences of the
/// loss function. Exposed separately so fault-injection tests can hand in a
/// deliberately corrupted gradient and watch the check name the culprit.
pub fn check_gradient_against<F>(
    grads: &Gradients,
    loss_fn: F,
    sets: &[&ParamSet],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    let mut per_param = Vec::new();
    for set in sets {
        for param in set.trainable_entries() {
            let Some(analytic) = grads.get(&param.name) else {
                continue;
            };
            let mut worst = ParamGradReport {
                name: param.name.clone(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic_at_worst: 0.0,
                numeric_at_worst: 0.0,
                pass: true,
            };
            for idx in 0..param.numel() {
                param.nudge(idx, step);
                let up = loss_fn(&Tape::inference())?.item()?;
                param.nudge(idx, -2.0 * step);
                let down = loss_fn(&Tape::inference())?.item()?;
                param.nudge(idx, step);
                let numeric = (up - down) / (2.0 * step);
                let err = rel_error(analytic[idx], numeric);
                if err > worst.max_rel_error {
                    worst.max_rel_error = err;
                    worst.worst_index = idx;
                    worst.analytic_at_worst = analytic[idx];
                    worst.numeric_at_worst = numeric;
                }
            }
            worst.pass = worst.max_rel_error < tolerance;
            per_param.push(worst);
        }
    }
    let pass = per_param.iter().all(|p| p.pass);
    Ok(GradCheckReport { per_param, step, tolerance, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares_set() -> ParamSet {
        let mut set = ParamSet::new();
        set.add("w", vec![2, 2], vec![0.3, -1.2, 2.0, 0.7], true).unwrap();
        set
    }

    #[test]
    fn sum_of_squares_passes() {
        let set = sum_of_squares_set();
        let report = check_gradient(
            |tape| {
                let w = tape.param(&set, "w")?;
                let sq = tape.mul(&w, &w)?;
                tape.sum_all(&sq)
            },
            &[&set],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "worst: {:?}", report.worst());
    }

    #[test]
    fn corrupted_gradient_fails_and_names_parameter() {
        let set = sum_of_squares_set();
        let loss_fn = |tape: &Tape| {
            let w = tape.param(&set, "w")?;
            let sq = tape.mul(&w, &w)?;
            tape.sum_all(&sq)
        };
        let tape = Tape::recording();
        let loss = loss_fn(&tape).unwrap();
        let mut grads = tape.backward(&loss).unwrap();
        grads.perturb("w", 2, 1.10); // +10% on one entry
        let report = check_gradient_against(&grads, loss_fn, &[&set], 1e-5, 1e-3).unwrap();
        assert!(!report.pass);
        let failing: Vec<_> = report.failures().collect();
        assert_eq!(failing.len(), 1);
        assert_eq!(failing[0].name, "w");
        assert_eq!(failing[0].worst_index, 2);
    }
}
