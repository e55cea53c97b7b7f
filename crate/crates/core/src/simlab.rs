//! Simulation scenarios and Monte Carlo studies.
//!
//! A study simulates `runs` datasets from a scenario's true model, fits the
//! assumed model to each, builds the fixed-slice band and the surface plane
//! from shared bootstrap draws, and scores the decisions against the oracle
//! alerts of the true model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alert::{decide, interval_metrics, med_contour, true_alert_curve, AlertCurve, IntervalMetrics};
use crate::bootstrap::{
    confidence_surfaces, sample_sd, simulate_dataset, BandRequest, BootstrapConfig, Design, DesignPoint,
    Frame,
};
use crate::error::{Error, Result};
use crate::estimator::fit_gamlss;
use crate::model::{
    AxisSpec, Dimension, EvalGrid, Family, FamilyRegistry, Form, Hypothesis, MeanModel, SigmaDesign,
    SigmaModel,
};
use crate::rng::Substream;

const D_OPTIMAL_PLACEHOLDER: &str = include_str!("../data/d_optimal_placeholder.csv");

const THETA_1: [f64; 4] = [2.9, 5.9, 1.8, 4.8];
const THETA_2: [f64; 6] = [0.0, 80.0, 3.0, 120.0, 10.0, 0.02];
const VARTHETA_SIMPLE: [f64; 1] = [2.081];
const VARTHETA_SMALL: [f64; 5] = [2.081, 0.162, -0.019, 0.06, -0.001];
const VARTHETA_MEDIUM: [f64; 5] = [2.081, 0.215, -0.025, 0.08, -0.002];
const VARTHETA_LARGE: [f64; 5] = [2.081, 0.269, -0.032, 0.1, -0.002];
const VARTHETA_2: [f64; 1] = [3.401];

/// Names of the built-in scenarios.
pub const SCENARIOS: [&str; 14] = [
    "1 - Full - Simple",
    "1 - Full - Small",
    "1 - Full - Medium",
    "1 - Full - Large",
    "1 - Reduced - Simple",
    "1 - Reduced - Small",
    "1 - Reduced - Medium",
    "1 - Reduced - Large",
    "2 - Factorial 3x3 - N152",
    "2 - Factorial 3x3 - N90",
    "2 - Factorial 3x3 - N45",
    "2 - D-optimal - N152",
    "2 - D-optimal - N90",
    "2 - D-optimal - N45",
];

/// A fully specified simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub truth: MeanModel,
    pub sigma: SigmaModel,
    pub design: Design,
    pub frame: Frame,
    pub hypothesis: Hypothesis,
    pub grid: EvalGrid,
    /// σ structure assumed when fitting; may differ from the truth.
    pub fit_sigma: SigmaDesign,
}

impl ScenarioSpec {
    pub fn with_fit_sigma(self, fit_sigma: SigmaDesign) -> Self {
        Self { fit_sigma, ..self }
    }

    pub fn with_hypothesis(self, hypothesis: Hypothesis) -> Self {
        Self { hypothesis, ..self }
    }
}

/// Serializable scenario description for custom studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub family: String,
    pub theta: Vec<f64>,
    pub sigma_terms: SigmaDesign,
    pub vartheta: Vec<f64>,
    pub design: Vec<DesignPoint>,
    /// Expected total number of observations.
    pub n: usize,
    pub domain_x1: (f64, f64),
    pub domain_x2: (f64, f64),
    pub reference: (f64, f64),
    pub hypothesis: Hypothesis,
    pub grid_x1: AxisSpec,
    pub grid_x2: AxisSpec,
    pub fit_sigma_terms: SigmaDesign,
}

impl ScenarioConfig {
    pub fn build(&self, registry: &FamilyRegistry) -> Result<ScenarioSpec> {
        let design = Design::new(self.design.clone())?;
        if design.total() != self.n {
            return Err(Error::invalid(format!(
                "scenario {:?}: design holds {} observations, expected {}",
                self.name,
                design.total(),
                self.n
            )));
        }
        let truth = MeanModel::new(registry.get(&self.family)?, self.theta.clone())?;
        let sigma = SigmaModel::new(self.sigma_terms.clone(), self.vartheta.clone())?;
        let frame = Frame {
            domain_x1: self.domain_x1,
            domain_x2: self.domain_x2,
            reference: self.reference,
        };
        for p in design.points() {
            if !truth.family().supports(p.x1, p.x2)
                || !(frame.domain_x1.0..=frame.domain_x1.1).contains(&p.x1)
                || !(frame.domain_x2.0..=frame.domain_x2.1).contains(&p.x2)
            {
                return Err(Error::invalid(format!(
                    "design point ({}, {}) lies outside the scenario domains",
                    p.x1, p.x2
                )));
            }
        }
        self.hypothesis.check_domains(self.domain_x1, self.domain_x2)?;
        let grid = EvalGrid::from_axes(self.grid_x1, self.grid_x2)?;
        if !grid.covers(self.domain_x1, self.domain_x2) {
            return Err(Error::invalid("scenario grid does not cover the domains"));
        }
        Ok(ScenarioSpec {
            name: self.name.clone(),
            truth,
            sigma,
            design,
            frame,
            hypothesis: self.hypothesis,
            grid,
            fit_sigma: self.fit_sigma_terms.clone(),
        })
    }
}

fn scenario1_cells() -> Vec<(f64, f64)> {
    let doses = [0.0, 0.1, 10f64.powf(-0.5), 1.0, 10f64.powf(0.5), 10.0];
    [1.0, 2.0, 7.0]
        .iter()
        .flat_map(|&t| doses.iter().map(move |&d| (t, d)))
        .collect()
}

fn factorial_cells() -> Vec<(f64, f64)> {
    [0.0, 5.0, 10.0]
        .iter()
        .flat_map(|&a| [0.0, 6.0, 12.0].iter().map(move |&b| (a, b)))
        .collect()
}

/// Parses a `d1,d2,weight` design file; `#` lines are comments.
pub fn parse_weighted_design(text: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[a, b, w]) if a.is_finite() && b.is_finite() && w > 0.0 => out.push((a, b, w)),
            _ => {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("expected d1,d2,weight with a positive weight, got {line:?}"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("design file has no support points"));
    }
    Ok(out)
}

/// Rounds `n · weight` to integers by largest remainder; ties go to the
/// earlier support point.
pub fn allocate_weighted(support: &[(f64, f64, f64)], n: usize) -> Result<Design> {
    let total: f64 = support.iter().map(|s| s.2).sum();
    let exact: Vec<f64> = support.iter().map(|s| n as f64 * s.2 / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    Design::new(
        support
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(s, replicates)| DesignPoint {
                x1: s.0,
                x2: s.1,
                replicates,
            })
            .collect(),
    )
}

/// Builds one of the built-in scenarios by name (see [`SCENARIOS`]).
///
/// The fitted σ structure defaults to a constant; use
/// [`ScenarioSpec::with_fit_sigma`] for the complex assumption.
pub fn build_scenario(name: &str) -> Result<ScenarioSpec> {
    let parts: Vec<&str> = name.split(" - ").map(str::trim).collect();
    let unknown = || Error::invalid(format!("unknown scenario {name:?}"));
    let (truth, sigma, design, frame, hypothesis, grid) = match parts.as_slice() {
        ["1", size, case] => {
            let n = match *size {
                "Full" => 250,
                "Reduced" => 54,
                _ => return Err(unknown()),
            };
            let sigma = match *case {
                "Simple" => SigmaModel::new(SigmaDesign::constant(), VARTHETA_SIMPLE.to_vec())?,
                "Small" => SigmaModel::new(SigmaDesign::complex(), VARTHETA_SMALL.to_vec())?,
                "Medium" => SigmaModel::new(SigmaDesign::complex(), VARTHETA_MEDIUM.to_vec())?,
                "Large" => SigmaModel::new(SigmaDesign::complex(), VARTHETA_LARGE.to_vec())?,
                _ => return Err(unknown()),
            };
            (
                MeanModel::new(Family::Td2pll, THETA_1.to_vec())?,
                sigma,
                Design::round_robin(&scenario1_cells(), n)?,
                Frame {
                    domain_x1: (1.0, 7.0),
                    domain_x2: (0.0, 10.0),
                    reference: (1.0, 0.0),
                },
                Hypothesis::new(Dimension::FixedX1(4.0), Form::Undercut, 50.0, 0.05)?,
                EvalGrid::uniform((1.0, 7.0), 61, (0.0, 10.0), 101)?,
            )
        }
        ["2", kind, size] => {
            let n = match *size {
                "N152" => 152,
                "N90" => 90,
                "N45" => 45,
                _ => return Err(unknown()),
            };
            let design = match *kind {
                "Factorial 3x3" => Design::round_robin(&factorial_cells(), n)?,
                "D-optimal" => allocate_weighted(&parse_weighted_design(D_OPTIMAL_PLACEHOLDER)?, n)?,
                _ => return Err(unknown()),
            };
            let truth = MeanModel::new(Family::Emax2, THETA_2.to_vec())?;
            let grid = EvalGrid::uniform((0.0, 10.0), 101, (0.0, 12.0), 121)?;
            let lambda = med_contour(&truth, &grid, 80.0)?.response_level();
            (
                truth,
                SigmaModel::new(SigmaDesign::constant(), VARTHETA_2.to_vec())?,
                design,
                Frame {
                    domain_x1: (0.0, 10.0),
                    domain_x2: (0.0, 12.0),
                    reference: (0.0, 0.0),
                },
                Hypothesis::new(Dimension::FixedX1(7.0), Form::Exceeded, lambda, 0.05)?,
                grid,
            )
        }
        _ => return Err(unknown()),
    };
    Ok(ScenarioSpec {
        name: name.to_string(),
        truth,
        sigma,
        design,
        frame,
        hypothesis,
        grid,
        fit_sigma: SigmaDesign::constant(),
    })
}

/// Alert error quantiles at one x1 grid value, over runs where both the
/// estimated and the true alert exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertErrorQuantiles {
    pub x1: f64,
    pub count: usize,
    pub q10: Option<f64>,
    pub median: Option<f64>,
    pub q90: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: String,
    pub runs: usize,
    pub excluded: usize,
    /// Fixed-slice test.
    pub rejection_proportion: f64,
    pub alert_median: Option<f64>,
    pub alert_sd: Option<f64>,
    pub recall_mean: Option<f64>,
    pub recall_sd: Option<f64>,
    pub precision_mean: Option<f64>,
    pub precision_sd: Option<f64>,
    pub onset_mean: Option<f64>,
    pub onset_sd: Option<f64>,
    pub offset_mean: Option<f64>,
    pub offset_sd: Option<f64>,
    /// 25%, 50% and 75% quantiles.
    pub rmse_quartiles: Option<[f64; 3]>,
    /// Surface test.
    pub rejection_proportion_3d: f64,
    pub alert_errors: Vec<AlertErrorQuantiles>,
    pub true_alert: Option<f64>,
    pub fit_sigma_terms: SigmaDesign,
    pub config: BootstrapConfig,
    pub seed: u64,
}

/// Outcome of one analyzed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub reject: bool,
    pub alert: Option<f64>,
    pub reject_3d: bool,
    pub curve: AlertCurve,
    pub metrics: IntervalMetrics,
}

fn excludable(e: &Error) -> bool {
    matches!(
        e,
        Error::NonConvergence { .. } | Error::Identifiability { .. } | Error::BootstrapExhausted { .. }
    )
}

/// Simulates and analyzes run `run`; `Ok(None)` when the run is excluded.
pub fn run_once(
    spec: &ScenarioSpec,
    truth_curve: &AlertCurve,
    cfg: &BootstrapConfig,
    seed: u64,
    run: usize,
) -> Result<Option<RunOutcome>> {
    let root = Substream::root(seed).child(run as u64);
    let data = simulate_dataset(&spec.design, &spec.truth, &spec.sigma, root.child(0), &spec.frame)?;
    let fit = match fit_gamlss(&data, spec.truth.family(), &spec.fit_sigma, &cfg.fit) {
        Ok(f) => f,
        Err(e) if excludable(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let run_cfg = BootstrapConfig {
        seed: root.child(1).seed(),
        ..cfg.clone()
    };
    let requests = [
        BandRequest::natural(spec.hypothesis),
        BandRequest::natural(spec.hypothesis.to_surface()),
    ];
    let surfaces = match confidence_surfaces(&data, &fit, &requests, &spec.grid, &run_cfg) {
        Ok(s) => s,
        Err(e) if excludable(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let slice = decide(&surfaces[0], &spec.hypothesis)?;
    let plane = decide(&surfaces[1], &requests[1].hypothesis)?;
    let curve = plane
        .alert_curve
        .ok_or_else(|| Error::invalid("surface decision carries no alert curve"))?;
    let metrics = interval_metrics(truth_curve, &curve)?;
    Ok(Some(RunOutcome {
        reject: slice.reject,
        alert: slice.alert_dose,
        reject_3d: plane.reject,
        curve,
        metrics,
    }))
}

/// Linear-interpolation quantile of sorted values (R's type 7).
fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        1 => Some(sorted[0]),
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
        }
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn mean_sd(values: Vec<f64>) -> (Option<f64>, Option<f64>) {
    let v = sorted(values);
    if v.is_empty() {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.len() >= 2).then(|| sample_sd(&v));
    (Some(mean), sd)
}

/// Runs a Monte Carlo study. Run `r` draws from substream `r` of `seed`, so
/// results do not depend on the worker count.
pub fn run_study(spec: &ScenarioSpec, runs: usize, cfg: &BootstrapConfig, seed: u64) -> Result<StudySummary> {
    if runs == 0 {
        return Err(Error::invalid("a study needs at least one run"));
    }
    cfg.validate()?;
    let truth_curve = true_alert_curve(&spec.truth, &spec.hypothesis, spec.frame.reference, &spec.grid);
    let true_alert =
        crate::alert::true_alert(&spec.truth, &spec.hypothesis, spec.frame.reference, &spec.grid);
    let outcomes: Vec<Option<RunOutcome>> = (0..runs)
        .into_par_iter()
        .map(|r| run_once(spec, &truth_curve, cfg, seed, r))
        .collect::<Result<_>>()?;
    let analyzed: Vec<&RunOutcome> = outcomes.iter().flatten().collect();
    if analyzed.is_empty() {
        return Err(Error::Empty("every simulation run was excluded"));
    }
    let m = analyzed.len() as f64;
    let alerts = sorted(analyzed.iter().filter_map(|o| o.alert).collect());
    let collect = |f: fn(&IntervalMetrics) -> Option<f64>| -> Vec<f64> {
        analyzed.iter().filter_map(|o| f(&o.metrics)).collect()
    };
    let (recall_mean, recall_sd) = mean_sd(collect(|m| m.recall));
    let (precision_mean, precision_sd) = mean_sd(collect(|m| m.precision));
    let (onset_mean, onset_sd) = mean_sd(collect(|m| m.onset_error));
    let (offset_mean, offset_sd) = mean_sd(collect(|m| m.offset_error));
    let rmse = sorted(collect(|m| m.rmse));
    let rmse_quartiles = (!rmse.is_empty()).then(|| {
        [0.25, 0.5, 0.75].map(|p| quantile_sorted(&rmse, p).unwrap_or(f64::NAN))
    });

    let alert_errors = truth_curve
        .x1
        .iter()
        .enumerate()
        .map(|(i, &x1)| {
            let errs = sorted(
                analyzed
                    .iter()
                    .filter_map(|o| Some(o.curve.alerts[i]? - truth_curve.alerts[i]?))
                    .collect(),
            );
            AlertErrorQuantiles {
                x1,
                count: errs.len(),
                q10: quantile_sorted(&errs, 0.1),
                median: quantile_sorted(&errs, 0.5),
                q90: quantile_sorted(&errs, 0.9),
            }
        })
        .collect();

    Ok(StudySummary {
        scenario: spec.name.clone(),
        runs,
        excluded: runs - analyzed.len(),
        rejection_proportion: analyzed.iter().filter(|o| o.reject).count() as f64 / m,
        alert_median: quantile_sorted(&alerts, 0.5),
        alert_sd: (alerts.len() >= 2).then(|| sample_sd(&alerts)),
        recall_mean,
        recall_sd,
        precision_mean,
        precision_sd,
        onset_mean,
        onset_sd,
        offset_mean,
        offset_sd,
        rmse_quartiles,
        rejection_proportion_3d: analyzed.iter().filter(|o| o.reject_3d).count() as f64 / m,
        alert_errors,
        true_alert,
        fit_sigma_terms: spec.fit_sigma.clone(),
        config: cfg.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_table() {
        for name in SCENARIOS {
            let s = build_scenario(name).unwrap();
            let n: usize = name
                .rsplit("N")
                .next()
                .and_then(|v| v.parse().ok())
                .unwrap_or(if name.contains("Full") { 250 } else { 54 });
            assert_eq!(s.design.total(), n, "{name}");
        }
        let r = build_scenario("1 - Reduced - Simple").unwrap();
        assert_eq!(r.design.points().len(), 18);
        assert!(r.design.points().iter().all(|p| p.replicates == 3));
        assert_eq!(r.truth.theta(), &THETA_1);
        assert_eq!(r.sigma.coef(), &[2.081]);
        let f = build_scenario("2 - Factorial 3x3 - N90").unwrap();
        assert_eq!(f.design.points().len(), 9);
        assert!(f.design.points().iter().all(|p| p.replicates == 10));
        assert_eq!(f.sigma.coef(), &[3.401]);
        assert!((f.hypothesis.lambda - 0.8 * 129.394).abs() < 1e-2);
        assert!(build_scenario("3 - Full - Simple").is_err());
        assert!(build_scenario("1 - Full - Huge").is_err());
    }

    #[test]
    fn full_design_round_robin() {
        let s = build_scenario("1 - Full - Small").unwrap();
        let reps: Vec<usize> = s.design.points().iter().map(|p| p.replicates).collect();
        assert_eq!(reps.iter().filter(|&&r| r == 14).count(), 16);
        assert_eq!(reps.iter().filter(|&&r| r == 13).count(), 2);
    }

    #[test]
    fn weighted_allocation() {
        let support = parse_weighted_design(D_OPTIMAL_PLACEHOLDER).unwrap();
        assert_eq!(support.len(), 8);
        let d = allocate_weighted(&support, 45).unwrap();
        let reps: Vec<usize> = d.points().iter().map(|p| p.replicates).collect();
        assert_eq!(reps, vec![7, 4, 4, 7, 6, 6, 6, 5]);
        assert!(parse_weighted_design("d1,d2,weight\n1,2,x\n").is_err());
    }

    #[test]
    fn custom_config_total_must_match() {
        let cfg = ScenarioConfig {
            name: "custom".into(),
            family: "td2pll".into(),
            theta: THETA_1.to_vec(),
            sigma_terms: SigmaDesign::constant(),
            vartheta: vec![2.081],
            design: scenario1_cells()
                .into_iter()
                .map(|(x1, x2)| DesignPoint { x1, x2, replicates: 2 })
                .collect(),
            n: 54,
            domain_x1: (1.0, 7.0),
            domain_x2: (0.0, 10.0),
            reference: (1.0, 0.0),
            hypothesis: Hypothesis::new(Dimension::FixedX1(4.0), Form::Undercut, 50.0, 0.05).unwrap(),
            grid_x1: AxisSpec::new(1.0, 7.0, 7),
            grid_x2: AxisSpec::new(0.0, 10.0, 11),
            fit_sigma_terms: SigmaDesign::constant(),
        };
        assert!(cfg.build(&FamilyRegistry::default()).is_err());
        let ok = ScenarioConfig { n: 36, ..cfg };
        assert!(ok.build(&FamilyRegistry::default()).is_ok());
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&v, 0.25), Some(1.75));
        assert_eq!(quantile_sorted(&[], 0.5), None);
    }

    fn small_cfg() -> BootstrapConfig {
        BootstrapConfig {
            b1: 20,
            b2: 4,
            fit: crate::estimator::FitOptions {
                restarts: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn coarse(name: &str) -> ScenarioSpec {
        let s = build_scenario(name).unwrap();
        ScenarioSpec {
            grid: EvalGrid::uniform(s.frame.domain_x1, 13, s.frame.domain_x2, 21).unwrap(),
            ..s
        }
    }

    #[test]
    fn study_is_reproducible_and_consistent() {
        let spec = coarse("1 - Full - Simple");
        let a = run_study(&spec, 4, &small_cfg(), 9).unwrap();
        let b = run_study(&spec, 4, &small_cfg(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs, 4);
        assert!((0.0..=1.0).contains(&a.rejection_proportion));
        assert!(a.rejection_proportion >= a.rejection_proportion_3d);
        let json = serde_json::to_value(&a).unwrap();
        for key in [
            "scenario",
            "runs",
            "excluded",
            "rejection_proportion",
            "alert_median",
            "alert_sd",
            "recall_mean",
            "recall_sd",
            "precision_mean",
            "precision_sd",
            "onset_mean",
            "onset_sd",
            "offset_mean",
            "offset_sd",
            "rmse_quartiles",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn zero_runs_is_an_error() {
        let spec = coarse("1 - Reduced - Simple");
        assert!(run_study(&spec, 0, &small_cfg(), 1).is_err());
    }

    #[test]
    fn all_runs_excluded_is_an_error() {
        // three design points cannot identify four mean parameters
        let s = coarse("1 - Reduced - Simple");
        let design = Design::round_robin(&[(1.0, 0.0), (2.0, 1.0), (7.0, 10.0)], 9).unwrap();
        let spec = ScenarioSpec { design, ..s };
        assert!(matches!(
            run_study(&spec, 2, &small_cfg(), 1),
            Err(Error::Empty(_))
        ));
    }
}
