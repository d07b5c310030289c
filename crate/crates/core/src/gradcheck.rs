//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`]: the largest relative error and where it occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares tape gradients of `f` against central differences, coordinate by
/// coordinate. The relative error of one coordinate is
/// `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
///
/// `f` receives a fresh tape and the parameters recorded on it, and must return
/// a scalar.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out)?;
        if v.numel() != 1 {
            return Err(Error::Usage("grad_check function must return a scalar".into()));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value is {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out)?.data().first().copied().unwrap_or(f64::NAN);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value is {v}")));
    }
    let grads = tape.backward(out)?;
    let analytic = vars.iter().map(|&v| grads.get(v)).collect::<Result<Vec<_>>>()?;

    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        coordinates: 0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + epsilon;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - epsilon;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * epsilon);
            let ad = analytic[p].data()[i];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = p;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
