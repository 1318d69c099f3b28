//! Central finite-difference gradient checking.
//!
//! The numeric side never calls [`Tape::backward`]; it only re-evaluates the
//! forward function with perturbed inputs.

use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::tensor::{RealTensor, Tape, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
    /// per input.
    pub rel_err: Vec<f64>,
    /// Reverse-mode and finite-difference gradients of the checked inputs.
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `h`, for every input flagged in `check`.
pub fn check<F>(inputs: &[RealTensor], check: &[bool], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().zip(check).map(|(t, &c)| tape.leaf(t.clone(), c)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |xs: &[RealTensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.item(o))
    };

    let mut rel_err = Vec::new();
    let (mut analytic_all, mut numeric_all) = (Vec::new(), Vec::new());
    let mut work: Vec<RealTensor> = inputs.to_vec();
    for (k, &c) in check.iter().enumerate() {
        if !c {
            continue;
        }
        let analytic = grads.get(vars[k]).expect("leaf requires grad").to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * h));
        }
        rel_err.push(relative_error(&analytic, &numeric));
        analytic_all.push(analytic);
        numeric_all.push(numeric);
    }
    Ok(GradCheck { rel_err, analytic: analytic_all, numeric: numeric_all })
}

/// Norm-wise relative error between two gradient vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let na = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum());
    let denom = na.max(nb);
    if denom < 1e-12 {
        0.0
    } else {
        diff / denom
    }
}
