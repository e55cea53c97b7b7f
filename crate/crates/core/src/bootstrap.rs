//! Parametric data generation and the nested two-level bootstrap that
//! produces simultaneous confidence bands (fixed slice) and planes (surface).
//!
//! For a fitted model `(θ̂, ϑ̂)` and a Δ variant chosen by the hypothesis:
//!
//! 1. `B1` first-level datasets are drawn from `(θ̂, ϑ̂)` on the observed
//!    design and refitted jointly, giving `θ̂*ₗ, ϑ̂*ₗ`.
//! 2. `σ̂_Δ` at each grid point is the sample SD of `Δ(θ̂*ₗ)` over `l`.
//! 3. For each `l`, `B2` second-level datasets are drawn from
//!    `(θ̂*ₗ, ϑ̂*ₗ)` and refitted (jointly, or θ-only for the fast algorithm);
//!    their Δ values give the standardizer `σ̂_Δ,ₗ`.
//! 4. `D*,ₗ = max (Δ(θ̂*ₗ) − Δ(θ̂)) / σ̂_Δ,ₗ` over the evaluation set
//!    (numerator negated for upper bands), skipping points whose standardizer
//!    is below the floor; `c` is the `⌈(1 − α)·B1⌉`-th order statistic.
//! 5. The band is `Δ(θ̂) ∓ c·σ̂_Δ`.
//!
//! Replicate `l` (with its nested second level) is one work unit. Units run
//! in parallel and are reduced in index order, so results do not depend on
//! the number of worker threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_gamlss, fit_theta_ml, FitOptions, FitResult};
use crate::model::{
    Dataset, DeltaFn, Domain, EvalGrid, Hypothesis, MeanModel, Observation, SigmaModel, Side,
};
use crate::rng::Substream;

/// Default standardization floor for `σ̂_Δ,ₗ`.
pub const SD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x1: f64,
    pub x2: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    points: Vec<DesignPoint>,
}

impl Design {
    pub fn new(points: Vec<DesignPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("design has no points"));
        }
        if let Some(p) = points.iter().find(|p| p.replicates == 0) {
            return Err(Error::invalid(format!(
                "design point ({}, {}) has no replicates",
                p.x1, p.x2
            )));
        }
        Ok(Self { points })
    }

    /// Spreads `n` observations over `cells` round-robin: every cell gets
    /// `⌊n / k⌋`, the first `n mod k` cells one more.
    pub fn round_robin(cells: &[(f64, f64)], n: usize) -> Result<Self> {
        let k = cells.len();
        if k == 0 {
            return Err(Error::Empty("design has no points"));
        }
        if n < k {
            return Err(Error::invalid(format!(
                "{n} observations cannot cover {k} design points"
            )));
        }
        Self::new(
            cells
                .iter()
                .enumerate()
                .map(|(i, &(x1, x2))| DesignPoint {
                    x1,
                    x2,
                    replicates: n / k + usize::from(i < n % k),
                })
                .collect(),
        )
    }

    /// The design a dataset was observed on.
    pub fn of(data: &Dataset) -> Self {
        Self {
            points: data
                .design_points()
                .into_iter()
                .map(|(x1, x2, replicates)| DesignPoint { x1, x2, replicates })
                .collect(),
        }
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn total(&self) -> usize {
        self.points.iter().map(|p| p.replicates).sum()
    }
}

/// Covariate domains and reference point attached to simulated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub domain_x1: Domain,
    pub domain_x2: Domain,
    pub reference: (f64, f64),
}

impl Frame {
    pub fn of(data: &Dataset) -> Self {
        Self {
            domain_x1: data.domain_x1(),
            domain_x2: data.domain_x2(),
            reference: data.reference(),
        }
    }
}

/// Draws `y = f(x) + ε`, `ε ~ N(0, σ(x)²)` for every replicate of every
/// design point. Point `j` draws from stream `j` of `stream`.
pub fn simulate_dataset(
    design: &Design,
    mean: &MeanModel,
    sigma: &SigmaModel,
    stream: Substream,
    frame: &Frame,
) -> Result<Dataset> {
    let mut obs = Vec::with_capacity(design.total());
    for (j, p) in design.points().iter().enumerate() {
        let f = mean.eval(p.x1, p.x2);
        let s = sigma.eval(p.x1, p.x2);
        let mut rng = stream.rng(j as u64);
        for _ in 0..p.replicates {
            let z: f64 = StandardNormal.sample(&mut rng);
            obs.push(Observation::new(p.x1, p.x2, f + s * z));
        }
    }
    Dataset::new(obs, frame.domain_x1, frame.domain_x2, frame.reference)
}

/// The `⌈level·m⌉`-th order statistic of `m` values.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of no values"));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::invalid(format!("quantile level {level} outside (0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    // the epsilon absorbs representation error in level·m (e.g. 0.95·20)
    let k = ((level * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    Ok(sorted[k - 1])
}

/// Two-pass sample standard deviation (divisor `n − 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for v in values {
        let d = v - mean;
        ss += d * d;
    }
    (ss / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Joint `(θ, ϑ)` refits at both levels.
    Normal,
    /// θ-only least-squares refits at the second level.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b1: usize,
    pub b2: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub retry_limit: usize,
    #[serde(default = "default_floor")]
    pub sd_floor: f64,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_floor() -> f64 {
    SD_FLOOR
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b1: 500,
            b2: 25,
            algorithm: Algorithm::Fast,
            seed: 0,
            retry_limit: 20,
            sd_floor: SD_FLOOR,
            fit: FitOptions::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b1 < 2 || self.b2 < 2 {
            return Err(Error::invalid("b1 and b2 must both be at least 2"));
        }
        if !(self.sd_floor >= 0.0) {
            return Err(Error::invalid("sd_floor must be non-negative"));
        }
        self.fit.validate()
    }

    /// Stream for first-level replicate `l`, regeneration `attempt`.
    pub fn first_level_stream(&self, l: usize, attempt: usize) -> Substream {
        Substream::root(self.seed).path(&[1, l as u64, attempt as u64])
    }

    /// Stream for second-level replicate `k` under first-level `l`.
    pub fn second_level_stream(&self, l: usize, k: usize, attempt: usize) -> Substream {
        Substream::root(self.seed).path(&[2, l as u64, k as u64, attempt as u64])
    }
}

/// Confidence band (slice grid) or plane (full grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSurface {
    pub grid: EvalGrid,
    /// `Δ(θ̂)`, row-major over `(x1, x2)`.
    pub delta_hat: Vec<f64>,
    pub sigma_delta: Vec<f64>,
    pub quantile_c: f64,
    pub side: Side,
    pub band: Vec<f64>,
    /// The `D*,ₗ` statistics, in replicate order.
    pub statistics: Vec<f64>,
}

impl ConfidenceSurface {
    pub fn assemble(
        grid: EvalGrid,
        delta_hat: Vec<f64>,
        sigma_delta: Vec<f64>,
        quantile_c: f64,
        side: Side,
        statistics: Vec<f64>,
    ) -> Self {
        let band = band_values(&delta_hat, &sigma_delta, quantile_c, side);
        Self {
            grid,
            delta_hat,
            sigma_delta,
            quantile_c,
            side,
            band,
            statistics,
        }
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.grid.x2().len() + i2
    }

    pub fn band_at(&self, i1: usize, i2: usize) -> f64 {
        self.band[self.index(i1, i2)]
    }

    /// Re-derives the band for another significance level from the stored
    /// statistics (same draws).
    pub fn at_level(&self, alpha: f64) -> Result<Self> {
        let c = empirical_quantile(&self.statistics, 1.0 - alpha)?;
        Ok(Self::assemble(
            self.grid.clone(),
            self.delta_hat.clone(),
            self.sigma_delta.clone(),
            c,
            self.side,
            self.statistics.clone(),
        ))
    }
}

/// `Δ − c·σ̂_Δ` (lower) or `Δ + c·σ̂_Δ` (upper), elementwise.
pub fn band_values(delta_hat: &[f64], sigma_delta: &[f64], c: f64, side: Side) -> Vec<f64> {
    delta_hat
        .iter()
        .zip(sigma_delta)
        .map(|(&d, &s)| match side {
            Side::Lower => d - c * s,
            Side::Upper => d + c * s,
        })
        .collect()
}

/// One band to build from shared bootstrap draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRequest {
    pub hypothesis: Hypothesis,
    pub side: Side,
}

impl BandRequest {
    pub fn new(hypothesis: Hypothesis, side: Side) -> Self {
        Self { hypothesis, side }
    }

    /// The side implied by the hypothesis form.
    pub fn natural(hypothesis: Hypothesis) -> Self {
        Self::new(hypothesis, hypothesis.side())
    }
}

/// Builds a single confidence band or plane.
pub fn confidence_surface(
    data: &Dataset,
    fit: &FitResult,
    hyp: &Hypothesis,
    grid: &EvalGrid,
    cfg: &BootstrapConfig,
    side: Side,
) -> Result<ConfidenceSurface> {
    let mut out = confidence_surfaces(data, fit, &[BandRequest::new(*hyp, side)], grid, cfg)?;
    Ok(out.remove(0))
}

struct Target<'a> {
    delta: DeltaFn<'a>,
    grid: EvalGrid,
    side: Side,
    alpha: f64,
    delta_hat: Vec<f64>,
}

struct Unit {
    deltas: Vec<Vec<f64>>,
    stats: Vec<f64>,
}

/// Builds several bands from one set of bootstrap draws.
///
/// Every request is evaluated on its hypothesis's evaluation set within
/// `grid`. Because all draws are keyed by replicate indices only, the output
/// for a request is identical whether it is computed alone or in a batch.
pub fn confidence_surfaces(
    data: &Dataset,
    fit: &FitResult,
    requests: &[BandRequest],
    grid: &EvalGrid,
    cfg: &BootstrapConfig,
) -> Result<Vec<ConfidenceSurface>> {
    cfg.validate()?;
    if !fit.converged {
        return Err(Error::invalid("parent fit did not converge"));
    }
    let mean = fit.mean_model()?;
    let sigma = fit.sigma_model()?;
    let family = &fit.family;
    let targets: Vec<Target> = requests
        .iter()
        .map(|r| {
            let hyp = &r.hypothesis;
            hyp.check_domains(data.domain_x1(), data.domain_x2())?;
            let eval_grid = hyp.evaluation_grid(grid)?;
            let delta = DeltaFn::new(family, hyp, data.reference());
            let mut delta_hat = vec![0.0; eval_grid.len()];
            delta.over_grid(&fit.theta_hat, &eval_grid, &mut delta_hat);
            Ok(Target {
                delta,
                grid: eval_grid,
                side: r.side,
                alpha: hyp.alpha,
                delta_hat,
            })
        })
        .collect::<Result<_>>()?;

    let design = Design::of(data);
    let frame = Frame::of(data);
    let parent_vartheta = fit.sigma_model()?.coef().to_vec();

    let units: Vec<Unit> = (0..cfg.b1)
        .into_par_iter()
        .map(|l| {
            run_unit(
                l,
                &design,
                &frame,
                &mean,
                &sigma,
                &parent_vartheta,
                fit,
                &targets,
                cfg,
            )
        })
        .collect::<Result<_>>()?;

    targets
        .into_iter()
        .enumerate()
        .map(|(t, target)| {
            let npts = target.delta_hat.len();
            let mut column = vec![0.0; cfg.b1];
            let sigma_delta: Vec<f64> = (0..npts)
                .map(|p| {
                    for (slot, u) in column.iter_mut().zip(&units) {
                        *slot = u.deltas[t][p];
                    }
                    sample_sd(&column)
                })
                .collect();
            let stats: Vec<f64> = units.iter().map(|u| u.stats[t]).collect();
            let c = empirical_quantile(&stats, 1.0 - target.alpha)?;
            Ok(ConfidenceSurface::assemble(
                target.grid,
                target.delta_hat,
                sigma_delta,
                c,
                target.side,
                stats,
            ))
        })
        .collect()
}

/// Refit with a warm start, then with multistarts around it.
fn refit(
    data: &Dataset,
    fit: &FitResult,
    theta: &[f64],
    vartheta: Option<&[f64]>,
    joint: bool,
    opts: &FitOptions,
) -> Option<FitResult> {
    let attempt = |o: &FitOptions| {
        if joint {
            fit_gamlss(data, &fit.family, &fit.sigma_design, o)
        } else {
            fit_theta_ml(data, &fit.family, o)
        }
    };
    let warm = opts.warm(theta, vartheta);
    attempt(&warm).ok().or_else(|| {
        if opts.restarts == 0 {
            return None;
        }
        let wide = FitOptions {
            restarts: opts.restarts,
            ..warm
        };
        attempt(&wide).ok()
    })
}

#[allow(clippy::too_many_arguments)]
fn run_unit(
    l: usize,
    design: &Design,
    frame: &Frame,
    mean: &MeanModel,
    sigma: &SigmaModel,
    parent_vartheta: &[f64],
    fit: &FitResult,
    targets: &[Target],
    cfg: &BootstrapConfig,
) -> Result<Unit> {
    let mut first = None;
    for attempt in 0..=cfg.retry_limit {
        let sample = simulate_dataset(design, mean, sigma, cfg.first_level_stream(l, attempt), frame)?;
        if let Some(f) = refit(&sample, fit, &fit.theta_hat, Some(parent_vartheta), true, &cfg.fit) {
            first = Some(f);
            break;
        }
    }
    let star = first.ok_or(Error::BootstrapExhausted {
        level: 1,
        replicate: l,
        retries: cfg.retry_limit,
    })?;
    let star_mean = star.mean_model()?;
    let star_sigma = star.sigma_model()?;
    let star_vartheta = star_sigma.coef().to_vec();

    let deltas: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| {
            let mut d = vec![0.0; t.grid.len()];
            t.delta.over_grid(&star.theta_hat, &t.grid, &mut d);
            d
        })
        .collect();

    // second-level Δ values, [target][replicate][point]
    let mut second: Vec<Vec<Vec<f64>>> = targets
        .iter()
        .map(|t| vec![vec![0.0; t.grid.len()]; cfg.b2])
        .collect();
    let joint = cfg.algorithm == Algorithm::Normal;
    for k in 0..cfg.b2 {
        let mut inner = None;
        for attempt in 0..=cfg.retry_limit {
            let sample = simulate_dataset(
                design,
                &star_mean,
                &star_sigma,
                cfg.second_level_stream(l, k, attempt),
                frame,
            )?;
            let vt = joint.then_some(star_vartheta.as_slice());
            if let Some(f) = refit(&sample, fit, &star.theta_hat, vt, joint, &cfg.fit) {
                inner = Some(f);
                break;
            }
        }
        let inner = inner.ok_or(Error::BootstrapExhausted {
            level: 2,
            replicate: l * cfg.b2 + k,
            retries: cfg.retry_limit,
        })?;
        for (t, target) in targets.iter().enumerate() {
            target
                .delta
                .over_grid(&inner.theta_hat, &target.grid, &mut second[t][k]);
        }
    }

    let mut column = vec![0.0; cfg.b2];
    let stats = targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let mut best = f64::NEG_INFINITY;
            for p in 0..target.grid.len() {
                for (slot, rep) in column.iter_mut().zip(&second[t]) {
                    *slot = rep[p];
                }
                let sd = sample_sd(&column);
                if !(sd >= cfg.sd_floor) || sd == 0.0 {
                    continue;
                }
                let diff = deltas[t][p] - target.delta_hat[p];
                let z = match target.side {
                    Side::Lower => diff / sd,
                    Side::Upper => -diff / sd,
                };
                if z > best {
                    best = z;
                }
            }
            // no admissible point: the statistic is degenerate, take 0
            if best == f64::NEG_INFINITY {
                0.0
            } else {
                best
            }
        })
        .collect();

    Ok(Unit { deltas, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, SigmaDesign};
    use proptest::prelude::*;

    fn td_model() -> MeanModel {
        MeanModel::new(Family::Td2pll, vec![2.9, 5.9, 1.8, 4.8]).unwrap()
    }

    fn frame() -> Frame {
        Frame {
            domain_x1: (1.0, 7.0),
            domain_x2: (0.0, 10.0),
            reference: (1.0, 0.0),
        }
    }

    #[test]
    fn quantile_convention() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&[3.5], 0.95).unwrap(), 3.5);
        let v20: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v20, 0.95).unwrap(), 19.0);
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_then_index(
            v in proptest::collection::vec(-1e3f64..1e3, 1..200),
            level in 0.01f64..0.999,
        ) {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = s.len();
            let mut k = 1;
            while (k as f64) < level * m as f64 - 1e-9 {
                k += 1;
            }
            prop_assert_eq!(empirical_quantile(&v, level).unwrap(), s[k.min(m) - 1]);
        }
    }

    #[test]
    fn round_robin_allocation() {
        let cells: Vec<(f64, f64)> = (0..18).map(|i| (i as f64, 0.0)).collect();
        let d = Design::round_robin(&cells, 250).unwrap();
        assert_eq!(d.total(), 250);
        assert_eq!(d.points()[0].replicates, 14);
        assert_eq!(d.points()[15].replicates, 14);
        assert_eq!(d.points()[16].replicates, 13);
        assert!(Design::round_robin(&cells, 10).is_err());
        assert!(Design::new(vec![DesignPoint { x1: 1.0, x2: 0.0, replicates: 0 }]).is_err());
    }

    #[test]
    fn vanishing_noise_reproduces_the_mean() {
        let design = Design::round_robin(&[(1.0, 0.0), (4.0, 5.0), (7.0, 10.0)], 30).unwrap();
        let sigma = SigmaModel::constant(-30.0);
        let data = simulate_dataset(&design, &td_model(), &sigma, Substream::root(1), &frame()).unwrap();
        assert_eq!(data.len(), 30);
        for o in data.observations() {
            assert!((o.y - td_model().eval(o.x1, o.x2)).abs() < 1e-9);
        }
        assert_eq!(Design::of(&data), design);
    }

    #[test]
    fn cell_means_follow_central_limit() {
        let design = Design::new(vec![DesignPoint { x1: 4.0, x2: 5.0, replicates: 100_000 }]).unwrap();
        let sigma = SigmaModel::constant(2.081);
        let data = simulate_dataset(&design, &td_model(), &sigma, Substream::root(9), &frame()).unwrap();
        let mean = data.observations().iter().map(|o| o.y).sum::<f64>() / 1e5;
        let s = 2.081f64.exp();
        assert!((mean - td_model().eval(4.0, 5.0)).abs() < 3.0 * s / 1e5f64.sqrt());
    }

    #[test]
    fn streams_are_per_point() {
        // replicate counts at one point do not shift the draws of another
        let sigma = SigmaModel::constant(0.0);
        let a = Design::new(vec![
            DesignPoint { x1: 1.0, x2: 0.0, replicates: 2 },
            DesignPoint { x1: 2.0, x2: 1.0, replicates: 3 },
        ])
        .unwrap();
        let b = Design::new(vec![
            DesignPoint { x1: 1.0, x2: 0.0, replicates: 5 },
            DesignPoint { x1: 2.0, x2: 1.0, replicates: 3 },
        ])
        .unwrap();
        let da = simulate_dataset(&a, &td_model(), &sigma, Substream::root(3), &frame()).unwrap();
        let db = simulate_dataset(&b, &td_model(), &sigma, Substream::root(3), &frame()).unwrap();
        assert_eq!(da.observations()[2..], db.observations()[5..]);
    }

    #[test]
    fn band_is_exactly_delta_minus_c_sigma() {
        let grid = EvalGrid::uniform((1.0, 7.0), 3, (0.0, 10.0), 3).unwrap();
        let s = ConfidenceSurface::assemble(
            grid,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            vec![0.5; 9],
            1.7,
            Side::Lower,
            vec![1.7],
        );
        for (b, d) in s.band.iter().zip(&s.delta_hat) {
            assert_eq!(*b, d - 1.7 * 0.5);
        }
        let u = band_values(&s.delta_hat, &s.sigma_delta, 1.7, Side::Upper);
        assert_eq!(u[0], 1.0 + 1.7 * 0.5);
    }

    #[test]
    fn config_validation() {
        let cfg = BootstrapConfig { b1: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(BootstrapConfig::default().validate().is_ok());
        let _ = SigmaDesign::constant();
    }
}
