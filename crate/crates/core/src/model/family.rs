//! Parametric mean-model families.
//!
//! Two families ship with the crate:
//!
//! * `td2pll`: time-dependent two-parameter log-logistic surface,
//!   `f(t, d) = 100 / (1 + (d / EC50(t))^h)` with `EC50(t) = δ·t^(−γ) + c0`
//!   and parameters ordered `(h, δ, γ, c0)`, all positive.
//! * `emax2`: additive two-compound Emax surface with a product interaction,
//!   `f(d1, d2) = θ0 + E1·d1/(h1 + d1) + E2·d2/(h2 + d2) + τ·d1·d2`
//!   with parameters ordered `(θ0, E1, h1, E2, h2, τ)`; `h1, h2 > 0`.
//!
//! Further families are added at runtime through [`CustomFamily`] and a
//! [`FamilyRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::Dataset;

pub type EvalFn = dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync;
pub type StartFn = dyn Fn(&Dataset) -> Vec<f64> + Send + Sync;

/// A user-supplied mean-model family.
pub struct CustomFamily {
    name: String,
    positive: Vec<bool>,
    eval: Box<EvalFn>,
    gradient: Option<Box<GradFn>>,
    start: Option<Box<StartFn>>,
}

impl CustomFamily {
    /// `positive[i]` marks parameter `i` as constrained to `(0, ∞)`; its
    /// length fixes the parameter count.
    pub fn new(
        name: impl Into<String>,
        positive: Vec<bool>,
        eval: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            positive,
            eval: Box::new(eval),
            gradient: None,
            start: None,
        }
    }

    /// Analytic gradient of the mean with respect to the parameters.
    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    /// Data-driven starting values for the optimizer.
    pub fn with_start(
        mut self,
        start: impl Fn(&Dataset) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.start = Some(Box::new(start));
        self
    }
}

#[derive(Clone)]
pub enum Family {
    Td2pll,
    Emax2,
    Custom(Arc<CustomFamily>),
}

const TD2PLL_POSITIVE: [bool; 4] = [true, true, true, true];
const EMAX2_POSITIVE: [bool; 6] = [false, false, true, false, true, false];

impl Family {
    pub fn name(&self) -> &str {
        match self {
            Family::Td2pll => "td2pll",
            Family::Emax2 => "emax2",
            Family::Custom(c) => &c.name,
        }
    }

    pub fn n_params(&self) -> usize {
        self.positive_mask().len()
    }

    pub fn positive_mask(&self) -> &[bool] {
        match self {
            Family::Td2pll => &TD2PLL_POSITIVE,
            Family::Emax2 => &EMAX2_POSITIVE,
            Family::Custom(c) => &c.positive,
        }
    }

    /// Whether the family is defined at the covariate pair.
    pub fn supports(&self, x1: f64, x2: f64) -> bool {
        match self {
            Family::Td2pll => x1 > 0.0 && x2 >= 0.0,
            Family::Emax2 => x1 >= 0.0 && x2 >= 0.0,
            Family::Custom(_) => true,
        }
    }

    /// Unchecked evaluation; `theta` must have the family's length.
    #[inline]
    pub fn eval(&self, theta: &[f64], x1: f64, x2: f64) -> f64 {
        match self {
            Family::Td2pll => {
                let ec50 = td2pll_ec50(theta, x1);
                td2pll_at(theta[0], ec50, x2)
            }
            Family::Emax2 => {
                theta[0]
                    + theta[1] * x1 / (theta[2] + x1)
                    + theta[3] * x2 / (theta[4] + x2)
                    + theta[5] * x1 * x2
            }
            Family::Custom(c) => (c.eval)(theta, x1, x2),
        }
    }

    /// Evaluates along a row of fixed `x1`, writing into `out`.
    pub fn eval_row(&self, theta: &[f64], x1: f64, x2s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x2s.len(), out.len());
        match self {
            Family::Td2pll => {
                let ec50 = td2pll_ec50(theta, x1);
                for (o, &x2) in out.iter_mut().zip(x2s) {
                    *o = td2pll_at(theta[0], ec50, x2);
                }
            }
            _ => {
                for (o, &x2) in out.iter_mut().zip(x2s) {
                    *o = self.eval(theta, x1, x2);
                }
            }
        }
    }

    /// Writes `∂f/∂θ` into `out` and returns `true` when the family has an
    /// analytic gradient; returns `false` (leaving `out` untouched) otherwise.
    pub fn gradient(&self, theta: &[f64], x1: f64, x2: f64, out: &mut [f64]) -> bool {
        match self {
            Family::Td2pll => {
                let (h, delta, gamma) = (theta[0], theta[1], theta[2]);
                let tpow = x1.powf(-gamma);
                let ec50 = delta * tpow + theta[3];
                if x2 <= 0.0 {
                    out[..4].fill(0.0);
                    return true;
                }
                let ratio = x2 / ec50;
                let q = ratio.powf(h);
                let df_dq = -100.0 / ((1.0 + q) * (1.0 + q));
                let dq_dec50 = -h * q / ec50;
                out[0] = df_dq * q * ratio.ln();
                out[1] = df_dq * dq_dec50 * tpow;
                out[2] = df_dq * dq_dec50 * (-delta * tpow * x1.ln());
                out[3] = df_dq * dq_dec50;
                true
            }
            Family::Emax2 => {
                let a1 = theta[2] + x1;
                let a2 = theta[4] + x2;
                out[0] = 1.0;
                out[1] = x1 / a1;
                out[2] = -theta[1] * x1 / (a1 * a1);
                out[3] = x2 / a2;
                out[4] = -theta[3] * x2 / (a2 * a2);
                out[5] = x1 * x2;
                true
            }
            Family::Custom(c) => match &c.gradient {
                Some(g) => {
                    g(theta, x1, x2, out);
                    true
                }
                None => false,
            },
        }
    }

    /// Default optimizer start for a dataset.
    pub fn start(&self, data: &Dataset) -> Vec<f64> {
        match self {
            Family::Td2pll => td2pll_start(data),
            Family::Emax2 => emax2_start(data),
            Family::Custom(c) => match &c.start {
                Some(s) => s(data),
                None => vec![1.0; c.positive.len()],
            },
        }
    }

    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        let mask = self.positive_mask();
        if theta.len() != mask.len() {
            return Err(Error::ParamLength {
                family: self.name().to_string(),
                expected: mask.len(),
                got: theta.len(),
            });
        }
        for (index, (&v, &pos)) in theta.iter().zip(mask).enumerate() {
            if !v.is_finite() || (pos && v <= 0.0) {
                return Err(Error::Constraint {
                    family: self.name().to_string(),
                    index,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Family({})", self.name())
    }
}

impl PartialEq for Family {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Family::Td2pll, Family::Td2pll) | (Family::Emax2, Family::Emax2) => true,
            (Family::Custom(a), Family::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// `EC50(t) = δ·t^(−γ) + c0` for a td2pll parameter vector.
#[inline]
pub fn td2pll_ec50(theta: &[f64], t: f64) -> f64 {
    theta[1] * t.powf(-theta[2]) + theta[3]
}

#[inline]
fn td2pll_at(h: f64, ec50: f64, dose: f64) -> f64 {
    100.0 / (1.0 + (dose / ec50).powf(h))
}

/// Start from the per-time doses at which cell means cross 50.
fn td2pll_start(data: &Dataset) -> Vec<f64> {
    let mut cells: BTreeMap<(u64, u64), (f64, f64, f64, usize)> = BTreeMap::new();
    for o in data.observations() {
        let e = cells
            .entry((o.x1.to_bits(), o.x2.to_bits()))
            .or_insert((o.x1, o.x2, 0.0, 0));
        e.2 += o.y;
        e.3 += 1;
    }
    let mut by_time: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for &(t, d, s, n) in cells.values() {
        match by_time.iter_mut().find(|(tt, _)| *tt == t) {
            Some((_, curve)) => curve.push((d, s / n as f64)),
            None => by_time.push((t, vec![(d, s / n as f64)])),
        }
    }
    let d_max = data.domain_x2().1.max(f64::MIN_POSITIVE);
    let mut points = Vec::new();
    for (t, mut curve) in by_time {
        if t <= 0.0 {
            continue;
        }
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        let crossing = curve.windows(2).find_map(|w| {
            let ((d0, y0), (d1, y1)) = (w[0], w[1]);
            ((y0 - 50.0) * (y1 - 50.0) <= 0.0 && y0 != y1)
                .then(|| d0 + (y0 - 50.0) / (y0 - y1) * (d1 - d0))
        });
        let ec = match crossing {
            Some(ec) => ec,
            None if curve.iter().all(|p| p.1 > 50.0) => 2.0 * d_max,
            None => {
                let lowest = curve.iter().map(|p| p.0).find(|&d| d > 0.0);
                0.5 * lowest.unwrap_or(d_max)
            }
        };
        points.push((t, ec.max(1e-6 * d_max)));
    }
    if points.is_empty() {
        return vec![1.0, 1.0, 1.0, 0.5 * d_max];
    }
    let c0 = 0.5 * points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let n = points.len() as f64;
    let (lt, le): (Vec<f64>, Vec<f64>) = points
        .iter()
        .map(|&(t, ec)| (t.ln(), (ec - c0).ln()))
        .unzip();
    let mt = lt.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let sxx: f64 = lt.iter().map(|x| (x - mt).powi(2)).sum();
    let sxy: f64 = lt.iter().zip(&le).map(|(x, y)| (x - mt) * (y - me)).sum();
    let gamma = if sxx > 1e-12 { (-sxy / sxx).clamp(0.1, 5.0) } else { 1.0 };
    let delta = (me + gamma * mt).exp();
    vec![1.0, delta, gamma, c0]
}

fn emax2_start(data: &Dataset) -> Vec<f64> {
    let (lo, hi) = data
        .observations()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| {
            (lo.min(o.y), hi.max(o.y))
        });
    let range = (hi - lo).max(f64::EPSILON);
    let (d1, d2) = (data.domain_x1(), data.domain_x2());
    let mid1 = (0.5 * (d1.0 + d1.1)).max(1e-3);
    let mid2 = (0.5 * (d2.0 + d2.1)).max(1e-3);
    vec![lo, range, mid1, range, mid2, 0.0]
}

/// Name-to-family lookup with the built-in families preloaded.
#[derive(Clone)]
pub struct FamilyRegistry {
    families: BTreeMap<String, Family>,
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut families = BTreeMap::new();
        families.insert("td2pll".to_string(), Family::Td2pll);
        families.insert("emax2".to_string(), Family::Emax2);
        Self { families }
    }
}

impl FamilyRegistry {
    pub fn register(&mut self, family: CustomFamily) -> Family {
        let f = Family::Custom(Arc::new(family));
        self.families.insert(f.name().to_string(), f.clone());
        f
    }

    pub fn get(&self, name: &str) -> Result<Family> {
        self.families
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }
}
