//! Maximum-likelihood fitting of the joint mean / log-σ model, and the
//! θ-only least-squares fit used by the fast second-level bootstrap.
//!
//! Both fits run a damped Fisher-scoring iteration (Levenberg–Marquardt
//! damping on the expected information) in a transformed parameter space where
//! positivity-constrained mean parameters are optimized on the log scale. A
//! Nelder–Mead search takes over when scoring stalls away from a stationary
//! point, after which scoring polishes the result.

mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Family, MeanModel, SigmaDesign, SigmaModel};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const JITTER_SEED: u64 = 0x5eed_a1e7;
/// Largest coordinate move per scoring step in `u`-space.
const MAX_STEP: f64 = 2.0;

/// Explicit optimizer start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Start {
    pub theta: Vec<f64>,
    /// Log-σ coefficients; derived from a θ-only pre-fit when absent.
    pub vartheta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Absolute objective change (or relative parameter step) that counts as
    /// converged.
    pub tolerance: f64,
    /// Number of jittered multistarts in addition to the primary start.
    pub restarts: usize,
    pub start: Option<Start>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-8,
            restarts: 10,
            start: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("fit tolerance must be positive"));
        }
        if self.restarts > 50 {
            return Err(Error::invalid("at most 50 restarts are allowed"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        Ok(())
    }

    /// Single warm start at the given estimates, no multistarts.
    pub fn warm(&self, theta: &[f64], vartheta: Option<&[f64]>) -> Self {
        Self {
            restarts: 0,
            start: Some(Start {
                theta: theta.to_vec(),
                vartheta: vartheta.map(<[f64]>::to_vec),
            }),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: Family,
    pub sigma_design: SigmaDesign,
    pub theta_hat: Vec<f64>,
    /// Log-σ coefficients; `None` for θ-only fits.
    pub vartheta_hat: Option<Vec<f64>>,
    /// Pooled `sqrt(RSS / n)` of θ-only fits.
    pub sigma_hat: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn mean_model(&self) -> Result<MeanModel> {
        MeanModel::new(self.family.clone(), self.theta_hat.clone())
    }

    /// Fitted σ model; θ-only fits yield the constant model at the pooled σ̂.
    pub fn sigma_model(&self) -> Result<SigmaModel> {
        match (&self.vartheta_hat, self.sigma_hat) {
            (Some(v), _) => SigmaModel::new(self.sigma_design.clone(), v.clone()),
            (None, Some(s)) => Ok(SigmaModel::constant(s.ln())),
            (None, None) => Err(Error::invalid("fit carries no sigma estimate")),
        }
    }
}

/// `Σᵢ [½ln(2π) + g(xᵢ) + (yᵢ − f(xᵢ))² / (2·exp(2g(xᵢ)))]`.
pub fn negloglik(data: &Dataset, mean: &MeanModel, sigma: &SigmaModel) -> Result<f64> {
    let mut total = 0.0;
    for (i, o) in data.observations().iter().enumerate() {
        let g = sigma.log_sigma(o.x1, o.x2);
        let r = o.y - mean.eval(o.x1, o.x2);
        let term = HALF_LN_2PI + g + r * r / (2.0 * (2.0 * g).exp());
        if !term.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        total += term;
    }
    Ok(total)
}

/// Gradient of [`negloglik`] with respect to `(θ, ϑ)`, using the family's
/// analytic mean gradient when available and central differences otherwise.
pub fn negloglik_gradient(data: &Dataset, mean: &MeanModel, sigma: &SigmaModel) -> Vec<f64> {
    let p = mean.theta().len();
    let q = sigma.coef().len();
    let mut grad = vec![0.0; p + q];
    let mut jac = vec![0.0; p];
    for o in data.observations() {
        mean_gradient(mean.family(), mean.theta(), o.x1, o.x2, &mut jac);
        let g = sigma.log_sigma(o.x1, o.x2);
        let var = (2.0 * g).exp();
        let r = o.y - mean.eval(o.x1, o.x2);
        for k in 0..p {
            grad[k] -= r / var * jac[k];
        }
        for (k, t) in sigma.design().terms().iter().enumerate() {
            grad[p + k] += (1.0 - r * r / var) * t.value(o.x1, o.x2);
        }
    }
    grad
}

fn mean_gradient(family: &Family, theta: &[f64], x1: f64, x2: f64, out: &mut [f64]) {
    if family.gradient(theta, x1, x2, out) {
        return;
    }
    let mut work = theta.to_vec();
    for k in 0..theta.len() {
        let h = 6e-6 * (1.0 + theta[k].abs());
        work[k] = theta[k] + h;
        let up = family.eval(&work, x1, x2);
        work[k] = theta[k] - h;
        let dn = family.eval(&work, x1, x2);
        work[k] = theta[k];
        out[k] = (up - dn) / (2.0 * h);
    }
}

/// Joint ML fit of `(θ, ϑ)` under `y ~ N(f(x; θ), exp(g(x; ϑ))²)`.
pub fn fit_gamlss(
    data: &Dataset,
    family: &Family,
    sigma_design: &SigmaDesign,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit(data, family, Some(sigma_design), opts)
}

/// Least-squares fit of θ alone (ML under iid normal errors); records the
/// pooled `σ̂ = sqrt(RSS / n)`.
pub fn fit_theta_ml(data: &Dataset, family: &Family, opts: &FitOptions) -> Result<FitResult> {
    fit(data, family, None, opts)
}

#[derive(Clone)]
struct Cell {
    x1: f64,
    x2: f64,
    m: f64,
    mean: f64,
    ss: f64,
    z: Vec<f64>,
}

/// Data reduced to per-design-point sufficient statistics.
struct Problem<'a> {
    family: &'a Family,
    positive: &'a [bool],
    cells: Vec<Cell>,
    p: usize,
    q: usize,
    n: f64,
}

struct Iterate {
    u: Vec<f64>,
    obj: f64,
    decrement: f64,
    criterion_met: bool,
    /// Stopped because no step could lower the objective at working
    /// precision.
    stalled: bool,
    iterations: usize,
}

impl<'a> Problem<'a> {
    fn new(data: &Dataset, family: &'a Family, sigma: Option<&SigmaDesign>) -> Self {
        let mut cells: Vec<Cell> = data
            .design_points()
            .into_iter()
            .map(|(x1, x2, _)| Cell {
                x1,
                x2,
                m: 0.0,
                mean: 0.0,
                ss: 0.0,
                z: sigma.map(|s| s.row(x1, x2)).unwrap_or_default(),
            })
            .collect();
        let index: std::collections::HashMap<(u64, u64), usize> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.x1.to_bits(), c.x2.to_bits()), i))
            .collect();
        let owner: Vec<usize> = data
            .observations()
            .iter()
            .map(|o| index[&(o.x1.to_bits(), o.x2.to_bits())])
            .collect();
        for (o, &c) in data.observations().iter().zip(&owner) {
            cells[c].m += 1.0;
            cells[c].mean += o.y;
        }
        for c in cells.iter_mut() {
            c.mean /= c.m;
        }
        for (o, &c) in data.observations().iter().zip(&owner) {
            let d = o.y - cells[c].mean;
            cells[c].ss += d * d;
        }
        Self {
            family,
            positive: family.positive_mask(),
            p: family.n_params(),
            q: sigma.map_or(0, SigmaDesign::len),
            n: data.len() as f64,
            cells,
        }
    }

    fn dim(&self) -> usize {
        self.p + self.q
    }

    fn theta(&self, u: &[f64]) -> Vec<f64> {
        u[..self.p]
            .iter()
            .zip(self.positive)
            .map(|(&v, &pos)| if pos { v.exp() } else { v })
            .collect()
    }

    fn to_u(&self, theta: &[f64], vartheta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.positive)
            .map(|(&v, &pos)| if pos { v.max(1e-12).ln() } else { v })
            .chain(vartheta.iter().copied())
            .collect()
    }

    fn rss(&self, theta: &[f64]) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let r = c.mean - self.family.eval(theta, c.x1, c.x2);
                c.ss + c.m * r * r
            })
            .sum()
    }

    /// Joint negative log-likelihood, or half the RSS for θ-only problems.
    fn objective(&self, u: &[f64]) -> f64 {
        let theta = self.theta(u);
        if self.q == 0 {
            let v = 0.5 * self.rss(&theta);
            return if v.is_finite() { v } else { f64::INFINITY };
        }
        let vt = &u[self.p..];
        let mut total = 0.0;
        for c in &self.cells {
            let g: f64 = c.z.iter().zip(vt).map(|(z, b)| z * b).sum();
            let r = c.mean - self.family.eval(&theta, c.x1, c.x2);
            total += c.m * (HALF_LN_2PI + g) + (c.ss + c.m * r * r) / (2.0 * (2.0 * g).exp());
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    /// Score (negative gradient) and expected information in `u`.
    fn score_info(&self, u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (p, q) = (self.p, self.q);
        let d = self.dim();
        let theta = self.theta(u);
        let mut score = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        let mut jac = vec![0.0; p];
        let chain: Vec<f64> = theta
            .iter()
            .zip(self.positive)
            .map(|(&t, &pos)| if pos { t } else { 1.0 })
            .collect();
        for c in &self.cells {
            mean_gradient(self.family, &theta, c.x1, c.x2, &mut jac);
            for k in 0..p {
                jac[k] *= chain[k];
            }
            let r = c.mean - self.family.eval(&theta, c.x1, c.x2);
            let (w, var) = if q == 0 {
                (c.m, 1.0)
            } else {
                let g: f64 = c.z.iter().zip(&u[p..]).map(|(z, b)| z * b).sum();
                let var = (2.0 * g).exp();
                (c.m / var, var)
            };
            for a in 0..p {
                score[a] += w * r * jac[a];
                for b in 0..=a {
                    info[(a, b)] += w * jac[a] * jac[b];
                }
            }
            if q > 0 {
                let s = (c.ss + c.m * r * r) / var - c.m;
                for a in 0..q {
                    score[p + a] += s * c.z[a];
                    for b in 0..=a {
                        info[(p + a, p + b)] += 2.0 * c.m * c.z[a] * c.z[b];
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (score, info)
    }

    fn solve(info: &DMatrix<f64>, score: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
        let mut a = info.clone();
        let scale = info.diagonal().amax().max(f64::MIN_POSITIVE);
        for i in 0..a.nrows() {
            a[(i, i)] += mu * info[(i, i)].max(1e-12 * scale);
        }
        let step = a.cholesky()?.solve(score);
        step.iter().all(|v| v.is_finite()).then_some(step)
    }

    fn decrement(info: &DMatrix<f64>, score: &DVector<f64>) -> f64 {
        match Self::solve(info, score, 0.0) {
            Some(s) => score.dot(&s).max(0.0),
            None => f64::INFINITY,
        }
    }

    /// Damped scoring from `u0`.
    fn scoring(&self, u0: Vec<f64>, opts: &FitOptions) -> Iterate {
        let tol = opts.tolerance;
        let mut u = u0;
        let mut obj = self.objective(&u);
        let mut mu = 1e-3;
        let mut criterion_met = false;
        let mut stalled = false;
        let mut iterations = 0;
        let (mut score, mut info) = self.score_info(&u);
        let mut decrement = Self::decrement(&info, &score);
        while iterations < opts.max_iterations && obj.is_finite() {
            iterations += 1;
            if decrement <= 1e-24 * (1.0 + obj.abs()) {
                criterion_met = true;
                break;
            }
            let mut accepted = None;
            while mu < 1e16 {
                if let Some(mut step) = Self::solve(&info, &score, mu) {
                    let big = step.amax();
                    if big > MAX_STEP {
                        step *= MAX_STEP / big;
                    }
                    let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                    let cand_obj = self.objective(&cand);
                    if cand_obj <= obj {
                        mu = (mu / 3.0).max(1e-12);
                        accepted = Some((cand, cand_obj, step));
                        break;
                    }
                }
                mu *= 4.0;
            }
            let Some((cand, cand_obj, step)) = accepted else {
                stalled = true;
                break;
            };
            let rel_step = step
                .iter()
                .zip(&u)
                .map(|(s, x)| s.abs() / (1.0 + x.abs()))
                .fold(0.0, f64::max);
            let change = obj - cand_obj;
            u = cand;
            obj = cand_obj;
            (score, info) = self.score_info(&u);
            decrement = Self::decrement(&info, &score);
            if change < tol || rel_step < tol {
                criterion_met = true;
            }
            if rel_step < 1e-14 || change <= 1e-15 * (1.0 + obj.abs()) {
                stalled = true;
                break;
            }
        }
        Iterate {
            u,
            obj,
            decrement,
            criterion_met,
            stalled,
            iterations,
        }
    }

    /// The decreed criterion held, and either the Newton decrement is small
    /// or the objective cannot be lowered further in floating point (near-
    /// noiseless data, where rounding in the residuals dominates the score).
    fn converged(&self, it: &Iterate, tol: f64) -> bool {
        it.obj.is_finite()
            && it.criterion_met
            && it.decrement.is_finite()
            && (0.5 * it.decrement <= 10.0 * tol || it.stalled)
    }

    /// Scoring, with a simplex rescue when scoring stops short.
    fn run(&self, u0: Vec<f64>, opts: &FitOptions) -> Iterate {
        let first = self.scoring(u0, opts);
        if self.converged(&first, opts.tolerance) {
            return first;
        }
        let nm = simplex::minimize(
            |u| self.objective(u),
            &first.u,
            opts.max_iterations,
            1e-12,
        );
        let start = if nm.f < first.obj { nm.x } else { first.u.clone() };
        let mut polished = self.scoring(start, opts);
        polished.iterations += first.iterations;
        if polished.obj <= first.obj || !first.obj.is_finite() {
            polished
        } else {
            first
        }
    }

    /// Full start vector in `u`-space, pre-fitting θ when ϑ is not given.
    fn start_u(&self, theta: &[f64], vartheta: Option<&[f64]>, opts: &FitOptions) -> Vec<f64> {
        if self.q == 0 {
            return self.to_u(theta, &[]);
        }
        if let Some(v) = vartheta.filter(|v| v.len() == self.q) {
            return self.to_u(theta, v);
        }
        let pre = Problem {
            family: self.family,
            positive: self.positive,
            cells: self
                .cells
                .iter()
                .map(|c| Cell {
                    z: Vec::new(),
                    ..c.clone()
                })
                .collect(),
            p: self.p,
            q: 0,
            n: self.n,
        };
        let it = pre.run(pre.to_u(theta, &[]), opts);
        let (th, rss) = if it.obj.is_finite() {
            let th = pre.theta(&it.u);
            let rss = pre.rss(&th);
            (th, rss)
        } else {
            (theta.to_vec(), self.rss(theta))
        };
        let mut vt = vec![0.0; self.q];
        vt[0] = 0.5 * (rss / self.n).max(1e-300).ln();
        self.to_u(&th, &vt)
    }
}


fn fit(
    data: &Dataset,
    family: &Family,
    sigma: Option<&SigmaDesign>,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    let prob = Problem::new(data, family, sigma);
    let distinct = prob.cells.len();
    if distinct < prob.p || distinct < prob.q {
        return Err(Error::Identifiability {
            distinct,
            params: prob.p.max(prob.q),
        });
    }

    let (base_theta, base_vartheta) = match &opts.start {
        Some(s) => {
            family.validate(&s.theta)?;
            (s.theta.clone(), s.vartheta.clone())
        }
        None => (family.start(data), None),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    let mut best: Option<Iterate> = None;
    let mut total_iterations = 0;
    for attempt in 0..=opts.restarts {
        let theta: Vec<f64> = if attempt == 0 {
            base_theta.clone()
        } else {
            base_theta
                .iter()
                .map(|&t| t * rng.random_range(0.8..1.2))
                .collect()
        };
        let vt = if attempt == 0 { base_vartheta.as_deref() } else { None };
        let u0 = prob.start_u(&theta, vt, opts);
        let it = prob.run(u0, opts);
        total_iterations += it.iterations;
        if prob.converged(&it, opts.tolerance)
            && best.as_ref().is_none_or(|b| it.obj < b.obj)
        {
            best = Some(it);
        }
    }

    let Some(best) = best else {
        return Err(Error::NonConvergence {
            attempts: opts.restarts + 1,
        });
    };
    let theta_hat = prob.theta(&best.u);
    let sigma_design = sigma.cloned().unwrap_or_else(SigmaDesign::constant);
    let result = if prob.q == 0 {
        let rss = prob.rss(&theta_hat);
        let s2 = (rss / prob.n).max(f64::MIN_POSITIVE);
        FitResult {
            family: family.clone(),
            sigma_design,
            theta_hat,
            vartheta_hat: None,
            sigma_hat: Some(s2.sqrt()),
            loglik: -0.5 * prob.n * ((2.0 * std::f64::consts::PI).ln() + s2.ln() + 1.0),
            converged: true,
            n: data.len(),
            iterations: total_iterations,
        }
    } else {
        FitResult {
            family: family.clone(),
            sigma_design,
            theta_hat,
            vartheta_hat: Some(best.u[prob.p..].to_vec()),
            sigma_hat: None,
            loglik: -best.obj,
            converged: true,
            n: data.len(),
            iterations: total_iterations,
        }
    };
    Ok(result)
}

#[cfg(test)]
mod tests;
