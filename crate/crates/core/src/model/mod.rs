//! Mean and standard-deviation models, datasets, hypotheses and the Δ
//! surface the tests are built on.

mod data;
mod family;
mod grid;
mod hypothesis;
mod sigma;

pub use data::{Dataset, Domain, Observation};
pub(crate) use data::in_domain;
pub use family::{td2pll_ec50, CustomFamily, Family, FamilyRegistry};
pub use grid::{linspace, AxisSpec, EvalGrid};
pub use hypothesis::{Dimension, Form, Hypothesis, Side};
pub use sigma::{SigmaDesign, SigmaModel, SigmaTerm};

use crate::error::{Error, Result};

/// A mean-model family with a validated parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    family: Family,
    theta: Vec<f64>,
}

impl MeanModel {
    pub fn new(family: Family, theta: Vec<f64>) -> Result<Self> {
        family.validate(&theta)?;
        Ok(Self { family, theta })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.family.eval(&self.theta, x1, x2)
    }
}

/// Checked evaluation of `f(x1, x2, θ)`.
pub fn eval_mean(model: &MeanModel, x1: f64, x2: f64) -> Result<f64> {
    if !model.family.supports(x1, x2) {
        return Err(Error::invalid(format!(
            "({x1}, {x2}) outside the support of family `{}`",
            model.family.name()
        )));
    }
    let v = model.eval(x1, x2);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("non-finite mean at ({x1}, {x2})")))
    }
}

/// Checked evaluation of `σ(x1, x2)`.
pub fn eval_sigma(model: &SigmaModel, x1: f64, x2: f64) -> Result<f64> {
    let s = model.eval(x1, x2);
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(Error::invalid(format!("sigma not positive and finite at ({x1}, {x2})")))
    }
}

/// Evaluates Δ for a hypothesis.
///
/// Centered forms return `|f(x1, x2) − f(ref)|` with the reference chosen by
/// [`Hypothesis::reference`]; the undercut and exceeded forms return `f`.
#[derive(Debug, Clone, Copy)]
pub struct DeltaFn<'a> {
    family: &'a Family,
    centered_at: Option<(f64, f64)>,
}

impl<'a> DeltaFn<'a> {
    pub fn new(family: &'a Family, hyp: &Hypothesis, data_reference: (f64, f64)) -> Self {
        let centered_at = match hyp.form {
            Form::Centered => Some(hyp.reference(data_reference)),
            Form::Undercut | Form::Exceeded => None,
        };
        Self {
            family,
            centered_at,
        }
    }

    #[inline]
    pub fn at(&self, theta: &[f64], x1: f64, x2: f64) -> f64 {
        let f = self.family.eval(theta, x1, x2);
        match self.centered_at {
            Some((r1, r2)) => (f - self.family.eval(theta, r1, r2)).abs(),
            None => f,
        }
    }

    /// Δ over every grid point, row-major in `(x1, x2)`.
    pub fn over_grid(&self, theta: &[f64], grid: &EvalGrid, out: &mut [f64]) {
        let n2 = grid.x2().len();
        debug_assert_eq!(out.len(), grid.len());
        let base = self.centered_at.map(|(r1, r2)| self.family.eval(theta, r1, r2));
        for (row, &x1) in out.chunks_mut(n2).zip(grid.x1()) {
            self.family.eval_row(theta, x1, grid.x2(), row);
            if let Some(b) = base {
                for v in row.iter_mut() {
                    *v = (*v - b).abs();
                }
            }
        }
    }
}

/// `Δ(x1, x2, θ)` for a single point.
pub fn delta(
    model: &MeanModel,
    hyp: &Hypothesis,
    data_reference: (f64, f64),
    x1: f64,
    x2: f64,
) -> Result<f64> {
    let f = eval_mean(model, x1, x2)?;
    Ok(match hyp.form {
        Form::Centered => {
            let (r1, r2) = hyp.reference(data_reference);
            (f - eval_mean(model, r1, r2)?).abs()
        }
        Form::Undercut | Form::Exceeded => f,
    })
}
