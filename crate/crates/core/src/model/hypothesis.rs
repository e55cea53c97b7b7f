use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{in_domain, Domain, EvalGrid};

/// Which part of `T × D` the hypothesis quantifies over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dimension", content = "fixed_value", rename_all = "snake_case")]
pub enum Dimension {
    /// `{x1} × D`; the alert is a value of x2.
    FixedX1(f64),
    /// `T × {x2}`; the alert is a value of x1.
    FixedX2(f64),
    /// All of `T × D`; the alert is a curve `x1 ↦ x2`.
    Surface,
}

impl Dimension {
    pub fn is_surface(self) -> bool {
        matches!(self, Dimension::Surface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// `|f − f(reference)| > λ` somewhere.
    Centered,
    /// `f < λ` somewhere.
    Undercut,
    /// `f > λ` somewhere.
    Exceeded,
}

impl Form {
    /// Band side the test decision is based on.
    pub fn side(self) -> Side {
        match self {
            Form::Undercut => Side::Upper,
            Form::Centered | Form::Exceeded => Side::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    #[serde(flatten)]
    pub dimension: Dimension,
    pub form: Form,
    pub lambda: f64,
    pub alpha: f64,
}

impl Hypothesis {
    pub fn new(dimension: Dimension, form: Form, lambda: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !lambda.is_finite() || (form == Form::Centered && lambda <= 0.0) {
            return Err(Error::invalid(format!(
                "threshold {lambda} invalid for {form:?} hypothesis"
            )));
        }
        match dimension {
            Dimension::FixedX1(v) | Dimension::FixedX2(v) if !v.is_finite() => {
                return Err(Error::invalid("fixed covariate value must be finite"))
            }
            _ => {}
        }
        Ok(Self {
            dimension,
            form,
            lambda,
            alpha,
        })
    }

    /// Same test over the full surface.
    pub fn to_surface(self) -> Self {
        Self {
            dimension: Dimension::Surface,
            ..self
        }
    }

    pub fn side(&self) -> Side {
        self.form.side()
    }

    /// Checks that a fixed covariate value lies inside its domain.
    pub fn check_domains(&self, d1: Domain, d2: Domain) -> Result<()> {
        let ok = match self.dimension {
            Dimension::FixedX1(v) => in_domain(d1, v),
            Dimension::FixedX2(v) => in_domain(d2, v),
            Dimension::Surface => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("fixed covariate value lies outside its domain"))
        }
    }

    /// Reference point of the centered form.
    pub fn reference(&self, data_reference: (f64, f64)) -> (f64, f64) {
        match self.dimension {
            Dimension::FixedX1(t) => (t, data_reference.1),
            Dimension::FixedX2(d) => (data_reference.0, d),
            Dimension::Surface => data_reference,
        }
    }

    /// Evaluation set of the hypothesis on `grid`: the fixed slice or the
    /// whole grid.
    pub fn evaluation_grid(&self, grid: &EvalGrid) -> Result<EvalGrid> {
        match self.dimension {
            Dimension::FixedX1(t) => EvalGrid::slice_x1(t, grid.x2().to_vec()),
            Dimension::FixedX2(d) => EvalGrid::slice_x2(grid.x1().to_vec(), d),
            Dimension::Surface => Ok(grid.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Hypothesis::new(Dimension::Surface, Form::Centered, 0.0, 0.05).is_err());
        assert!(Hypothesis::new(Dimension::Surface, Form::Undercut, 0.0, 0.05).is_ok());
        assert!(Hypothesis::new(Dimension::Surface, Form::Exceeded, 1.0, 1.0).is_err());
        let h = Hypothesis::new(Dimension::FixedX1(4.0), Form::Undercut, 50.0, 0.05).unwrap();
        assert!(h.check_domains((1.0, 7.0), (0.0, 10.0)).is_ok());
        assert!(h.check_domains((5.0, 7.0), (0.0, 10.0)).is_err());
        assert_eq!(h.side(), Side::Upper);
    }

    #[test]
    fn references_follow_dimension() {
        let r = (1.0, 0.0);
        let h = |d| Hypothesis::new(d, Form::Centered, 1.0, 0.05).unwrap();
        assert_eq!(h(Dimension::FixedX1(4.0)).reference(r), (4.0, 0.0));
        assert_eq!(h(Dimension::FixedX2(3.0)).reference(r), (1.0, 3.0));
        assert_eq!(h(Dimension::Surface).reference(r), (1.0, 0.0));
    }

    #[test]
    fn serde_shape() {
        let h = Hypothesis::new(Dimension::FixedX1(4.0), Form::Undercut, 50.0, 0.05).unwrap();
        let v = serde_json::to_value(h).unwrap();
        assert_eq!(v["dimension"], "fixed_x1");
        assert_eq!(v["fixed_value"], 4.0);
        assert_eq!(v["form"], "undercut");
        let back: Hypothesis = serde_json::from_value(v).unwrap();
        assert_eq!(back, h);
        let s: Hypothesis = serde_json::from_str(
            r#"{"dimension":"surface","form":"exceeded","lambda":1.5,"alpha":0.1}"#,
        )
        .unwrap();
        assert_eq!(s.dimension, Dimension::Surface);
    }
}
