use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One basis function of the log-linear standard-deviation model. Covariates
/// enter on their raw scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaTerm {
    Intercept,
    X2,
    X2Sq,
    X1,
    X2SqX1,
}

impl SigmaTerm {
    #[inline]
    pub fn value(self, x1: f64, x2: f64) -> f64 {
        match self {
            SigmaTerm::Intercept => 1.0,
            SigmaTerm::X2 => x2,
            SigmaTerm::X2Sq => x2 * x2,
            SigmaTerm::X1 => x1,
            SigmaTerm::X2SqX1 => x2 * x2 * x1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SigmaTerm::Intercept => "intercept",
            SigmaTerm::X2 => "x2",
            SigmaTerm::X2Sq => "x2_sq",
            SigmaTerm::X1 => "x1",
            SigmaTerm::X2SqX1 => "x2_sq_x1",
        }
    }
}

impl FromStr for SigmaTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "intercept" => SigmaTerm::Intercept,
            "x2" => SigmaTerm::X2,
            "x2_sq" => SigmaTerm::X2Sq,
            "x1" => SigmaTerm::X1,
            "x2_sq_x1" => SigmaTerm::X2SqX1,
            other => return Err(Error::invalid(format!("unknown sigma term `{other}`"))),
        })
    }
}

impl fmt::Display for SigmaTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered term list of the log-σ linear predictor; always starts with the
/// intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SigmaTerm>", into = "Vec<SigmaTerm>")]
pub struct SigmaDesign(Vec<SigmaTerm>);

impl SigmaDesign {
    pub fn new(terms: Vec<SigmaTerm>) -> Result<Self> {
        if terms.first() != Some(&SigmaTerm::Intercept) {
            return Err(Error::invalid("sigma design must begin with the intercept"));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::invalid(format!("duplicate sigma term `{t}`")));
            }
        }
        Ok(Self(terms))
    }

    /// Intercept only.
    pub fn constant() -> Self {
        Self(vec![SigmaTerm::Intercept])
    }

    /// Intercept, x2, x2², x1, x2²·x1.
    pub fn complex() -> Self {
        Self(vec![
            SigmaTerm::Intercept,
            SigmaTerm::X2,
            SigmaTerm::X2Sq,
            SigmaTerm::X1,
            SigmaTerm::X2SqX1,
        ])
    }

    /// Parses `constant`, `complex` or a comma-separated term list.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "constant" => Ok(Self::constant()),
            "complex" => Ok(Self::complex()),
            list => Self::new(
                list.split(',')
                    .map(|t| t.trim().parse())
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }

    pub fn terms(&self) -> &[SigmaTerm] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.0.len() == 1
    }

    /// Row of basis values at a covariate pair.
    pub fn row(&self, x1: f64, x2: f64) -> Vec<f64> {
        self.0.iter().map(|t| t.value(x1, x2)).collect()
    }

    /// Linear predictor `g = Σ βᵢ·termᵢ` (log σ).
    #[inline]
    pub fn predictor(&self, coef: &[f64], x1: f64, x2: f64) -> f64 {
        self.0
            .iter()
            .zip(coef)
            .map(|(t, b)| b * t.value(x1, x2))
            .sum()
    }
}

impl TryFrom<Vec<SigmaTerm>> for SigmaDesign {
    type Error = Error;

    fn try_from(v: Vec<SigmaTerm>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SigmaDesign> for Vec<SigmaTerm> {
    fn from(d: SigmaDesign) -> Self {
        d.0
    }
}

/// `σ(x1, x2) = exp(Σ ϑᵢ·termᵢ(x1, x2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaModel {
    design: SigmaDesign,
    coef: Vec<f64>,
}

impl SigmaModel {
    pub fn new(design: SigmaDesign, coef: Vec<f64>) -> Result<Self> {
        if design.len() != coef.len() {
            return Err(Error::SigmaLength {
                terms: design.len(),
                coefs: coef.len(),
            });
        }
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("sigma coefficients must be finite"));
        }
        Ok(Self { design, coef })
    }

    pub fn constant(log_sigma: f64) -> Self {
        Self {
            design: SigmaDesign::constant(),
            coef: vec![log_sigma],
        }
    }

    pub fn design(&self) -> &SigmaDesign {
        &self.design
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    #[inline]
    pub fn log_sigma(&self, x1: f64, x2: f64) -> f64 {
        self.design.predictor(&self.coef, x1, x2)
    }

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.log_sigma(x1, x2).exp()
    }
}
