use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed covariate interval `[lo, hi]`.
pub type Domain = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x1: f64,
    pub x2: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(x1: f64, x2: f64, y: f64) -> Self {
        Self { x1, x2, y }
    }
}

/// Observations together with their covariate domains and the reference
/// (control) point used by centered hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    domain_x1: Domain,
    domain_x2: Domain,
    reference: (f64, f64),
}

pub(crate) fn in_domain(d: Domain, v: f64) -> bool {
    v >= d.0 && v <= d.1
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        domain_x1: Domain,
        domain_x2: Domain,
        reference: (f64, f64),
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty("dataset has no observations"));
        }
        for d in [domain_x1, domain_x2] {
            if !(d.0.is_finite() && d.1.is_finite() && d.0 <= d.1) {
                return Err(Error::invalid(format!("invalid domain [{}, {}]", d.0, d.1)));
            }
        }
        for (i, o) in observations.iter().enumerate() {
            if !(o.x1.is_finite() && o.x2.is_finite() && o.y.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
            if !in_domain(domain_x1, o.x1) || !in_domain(domain_x2, o.x2) {
                return Err(Error::invalid(format!(
                    "observation {i} at ({}, {}) lies outside the covariate domains",
                    o.x1, o.x2
                )));
            }
        }
        if !in_domain(domain_x1, reference.0) || !in_domain(domain_x2, reference.1) {
            return Err(Error::invalid("reference point lies outside the domains"));
        }
        Ok(Self {
            observations,
            domain_x1,
            domain_x2,
            reference,
        })
    }

    /// Domains spanning the observed covariates; reference at their minima.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty("dataset has no observations"));
        }
        let span = |f: fn(&Observation) -> f64| {
            observations
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let d1 = span(|o| o.x1);
        let d2 = span(|o| o.x2);
        Self::new(observations, d1, d2, (d1.0, d2.0))
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn domain_x1(&self) -> Domain {
        self.domain_x1
    }

    pub fn domain_x2(&self) -> Domain {
        self.domain_x2
    }

    pub fn reference(&self) -> (f64, f64) {
        self.reference
    }

    pub fn with_domains(self, domain_x1: Domain, domain_x2: Domain) -> Result<Self> {
        let reference = self.reference;
        Self::new(self.observations, domain_x1, domain_x2, reference)
    }

    pub fn with_reference(self, reference: (f64, f64)) -> Result<Self> {
        Self::new(self.observations, self.domain_x1, self.domain_x2, reference)
    }

    /// Distinct `(x1, x2)` pairs in order of first appearance, with counts.
    pub fn design_points(&self) -> Vec<(f64, f64, usize)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        let mut index: std::collections::HashMap<(u64, u64), usize> = std::collections::HashMap::new();
        for o in &self.observations {
            let key = (o.x1.to_bits(), o.x2.to_bits());
            match index.get(&key) {
                Some(&i) => out[i].2 += 1,
                None => {
                    index.insert(key, out.len());
                    out.push((o.x1, o.x2, 1));
                }
            }
        }
        out
    }
}
