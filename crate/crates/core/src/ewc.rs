//! Fisher-weighted quadratic anchor `Σ_i F_i (θ_i − θ_S,i)²`.

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

/// A penalty term borrowed by a training step: anchor values, per-parameter
/// importance, and the weight applied to the penalty.
#[derive(Clone, Copy, Debug)]
pub struct EwcTerm<'a> {
    pub anchor: &'a [f64],
    pub fisher: &'a [f64],
    pub lambda: f64,
}

impl<'a> EwcTerm<'a> {
    pub fn new(anchor: &'a [f64], fisher: &'a [f64], lambda: f64) -> Result<Self> {
        if anchor.len() != fisher.len() {
            return Err(Error::Contract(format!(
                "anchor has {} entries, importance has {}",
                anchor.len(),
                fisher.len()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be finite and ≥ 0, got {lambda}")));
        }
        Ok(Self {
            anchor,
            fisher,
            lambda,
        })
    }

    /// Records the unweighted penalty for the flat parameter node `theta`.
    pub fn record(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        penalty_on_tape(tape, theta, self.anchor, self.fisher)
    }
}

pub fn penalty_on_tape(tape: &mut Tape, theta: Var, anchor: &[f64], fisher: &[f64]) -> Result<Var> {
    let n = tape.value(theta).len();
    if anchor.len() != n || fisher.len() != n {
        return Err(Error::Contract(format!(
            "penalty layout mismatch: θ has {n} entries, anchor {}, importance {}",
            anchor.len(),
            fisher.len()
        )));
    }
    let shape = tape.value(theta).shape().to_vec();
    let a = tape.constant(Array::new(shape.clone(), anchor.to_vec())?)?;
    let f = tape.constant(Array::new(shape, fisher.to_vec())?)?;
    let diff = tape.sub(theta, a)?;
    let sq = tape.square(diff)?;
    let weighted = tape.mul(sq, f)?;
    tape.sum(weighted)
}

/// Penalty value and its gradient `2·F_i·(θ_i − θ_S,i)`.
pub fn penalty_with_grad(theta: &[f64], anchor: &[f64], fisher: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let th = tape.param(Array::vector(theta.to_vec()))?;
    let p = penalty_on_tape(&mut tape, th, anchor, fisher)?;
    let value = tape.value(p).item()?;
    Ok((value, tape.backward(p)?.wrt(th)))
}
