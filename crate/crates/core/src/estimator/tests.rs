use super::*;
use rand::Rng;
use crate::bootstrap::{simulate_dataset, Design, Frame};
use crate::model::{CustomFamily, FamilyRegistry, Observation};
use crate::rng::Substream;

const TRUTH: [f64; 4] = [2.9, 5.9, 1.8, 4.8];

fn scenario1_cells() -> Vec<(f64, f64)> {
    let doses = [0.0, 0.1, 10f64.powf(-0.5), 1.0, 10f64.powf(0.5), 10.0];
    [1.0, 2.0, 7.0]
        .iter()
        .flat_map(|&t| doses.iter().map(move |&d| (t, d)))
        .collect()
}

fn frame() -> Frame {
    Frame {
        domain_x1: (1.0, 7.0),
        domain_x2: (0.0, 10.0),
        reference: (1.0, 0.0),
    }
}

fn simulate(n: usize, sigma: SigmaModel, seed: u64) -> Dataset {
    let design = Design::round_robin(&scenario1_cells(), n).unwrap();
    let mean = MeanModel::new(Family::Td2pll, TRUTH.to_vec()).unwrap();
    simulate_dataset(&design, &mean, &sigma, Substream::root(seed), &frame()).unwrap()
}

/// Log-density summation written independently of `negloglik`.
fn oracle_negloglik(data: &Dataset, mean: &MeanModel, sigma: &SigmaModel) -> f64 {
    data.observations()
        .iter()
        .map(|o| {
            let s = sigma.eval(o.x1, o.x2);
            let z = (o.y - mean.eval(o.x1, o.x2)) / s;
            -(-(s * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * z * z)
        })
        .sum()
}

#[test]
fn negloglik_closed_forms() {
    let mean = MeanModel::new(Family::Td2pll, TRUTH.to_vec()).unwrap();
    let f = mean.eval(4.0, 3.0);
    let one = |y: f64| {
        Dataset::new(vec![Observation::new(4.0, 3.0, y)], (1.0, 7.0), (0.0, 10.0), (1.0, 0.0)).unwrap()
    };
    let v = negloglik(&one(f), &mean, &SigmaModel::constant(0.0)).unwrap();
    assert!((v - 0.918_938_533_204_672_7).abs() < 1e-15);
    let v = negloglik(&one(f + 2.0), &mean, &SigmaModel::constant(2f64.ln())).unwrap();
    assert!((v - (0.918_938_533_204_672_7 + 2f64.ln() + 0.5)).abs() < 1e-12);
    assert!((v - 2.1121).abs() < 1e-4);
}

#[test]
fn negloglik_reports_overflow_index() {
    let mean = MeanModel::new(Family::Td2pll, TRUTH.to_vec()).unwrap();
    let data = simulate(18, SigmaModel::constant(0.0), 1);
    let sigma = SigmaModel::constant(-400.0);
    assert!(matches!(
        negloglik(&data, &mean, &sigma),
        Err(Error::NonFinite { index: 0 })
    ));
}

#[test]
fn negloglik_matches_oracle_on_random_datasets() {
    for seed in 0..100u64 {
        let mut rng = Substream::root(seed).rng(0);
        let coef: Vec<f64> = (0..5).map(|_| rng.random_range(-0.05..0.05)).collect();
        let mut coef = coef;
        coef[0] = rng.random_range(0.0..3.0);
        let sigma = SigmaModel::new(SigmaDesign::complex(), coef).unwrap();
        let data = simulate(54, sigma.clone(), seed);
        let theta: Vec<f64> = TRUTH.iter().map(|t| t * rng.random_range(0.8..1.2)).collect();
        let mean = MeanModel::new(Family::Td2pll, theta).unwrap();
        let a = negloglik(&data, &mean, &sigma).unwrap();
        let b = oracle_negloglik(&data, &mean, &sigma);
        assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let sigma = SigmaModel::new(SigmaDesign::complex(), vec![2.081, 0.162, -0.019, 0.06, -0.001]).unwrap();
    let data = simulate(54, sigma.clone(), 4);
    let theta = vec![2.5, 6.3, 1.6, 5.0];
    let mean = MeanModel::new(Family::Td2pll, theta.clone()).unwrap();
    let analytic = negloglik_gradient(&data, &mean, &sigma);
    let mut params: Vec<f64> = theta.iter().chain(sigma.coef()).copied().collect();
    for k in 0..params.len() {
        let h = 1e-6 * (1.0 + params[k].abs());
        let eval = |p: &[f64]| {
            let m = MeanModel::new(Family::Td2pll, p[..4].to_vec()).unwrap();
            let s = SigmaModel::new(SigmaDesign::complex(), p[4..].to_vec()).unwrap();
            negloglik(&data, &m, &s).unwrap()
        };
        let orig = params[k];
        params[k] = orig + h;
        let up = eval(&params);
        params[k] = orig - h;
        let dn = eval(&params);
        params[k] = orig;
        let fd = (up - dn) / (2.0 * h);
        assert!(
            (fd - analytic[k]).abs() <= 1e-4 * (1.0 + analytic[k].abs()),
            "param {k}: fd {fd} vs analytic {}",
            analytic[k]
        );
    }
}

#[test]
fn near_noiseless_recovery() {
    let data = simulate(250, SigmaModel::constant(-5.0), 11);
    let fit = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::constant(), &FitOptions::default()).unwrap();
    assert!(fit.converged);
    for (a, b) in fit.theta_hat.iter().zip(&TRUTH) {
        assert!((a - b).abs() < 1e-2, "{:?}", fit.theta_hat);
    }
    let vt = fit.vartheta_hat.as_ref().unwrap();
    assert!((vt[0] + 5.0).abs() < 0.2, "{vt:?}");
}

#[test]
fn fits_are_deterministic() {
    let data = simulate(152, SigmaModel::constant(2.081), 5);
    let opts = FitOptions::default();
    let a = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::complex(), &opts).unwrap();
    let b = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::complex(), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn too_few_design_points() {
    let obs = vec![
        Observation::new(4.0, 1.0, 70.0),
        Observation::new(4.0, 1.0, 72.0),
        Observation::new(4.0, 3.0, 40.0),
    ];
    let data = Dataset::from_observations(obs).unwrap();
    let err = fit_theta_ml(&data, &Family::Td2pll, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Identifiability { distinct: 2, params: 4 }));
    let err = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::constant(), &FitOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::Identifiability { .. }));
}

#[test]
fn theta_ml_recovers_noiseless_truth_and_is_a_fixed_point() {
    let data = simulate(54, SigmaModel::constant(-60.0), 2);
    let fit = fit_theta_ml(&data, &Family::Td2pll, &FitOptions::default()).unwrap();
    for (a, b) in fit.theta_hat.iter().zip(&TRUTH) {
        assert!((a - b).abs() < 1e-8, "{:?}", fit.theta_hat);
    }
    let warm = FitOptions::default().warm(&TRUTH, None);
    let fixed = fit_theta_ml(&data, &Family::Td2pll, &warm).unwrap();
    for (a, b) in fixed.theta_hat.iter().zip(&TRUTH) {
        assert!((a - b).abs() < 1e-10, "{:?}", fixed.theta_hat);
    }
}

#[test]
fn theta_ml_and_constant_gamlss_share_the_argmin() {
    for seed in [3u64, 8, 21] {
        let data = simulate(250, SigmaModel::constant(2.081), seed);
        let opts = FitOptions::default();
        let a = fit_theta_ml(&data, &Family::Td2pll, &opts).unwrap();
        let b = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::constant(), &opts).unwrap();
        for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
            assert!((x - y).abs() < 1e-6, "seed {seed}: {:?} vs {:?}", a.theta_hat, b.theta_hat);
        }
        let s = a.sigma_hat.unwrap();
        assert!((s.ln() - b.vartheta_hat.as_ref().unwrap()[0]).abs() < 1e-6);
        assert!((a.loglik - b.loglik).abs() < 1e-6);
    }
}

#[test]
fn pooled_sigma_is_root_mean_square_residual() {
    let mut reg = FamilyRegistry::default();
    let level = reg.register(CustomFamily::new("level", vec![false], |t, _, _| t[0]));
    let obs = vec![Observation::new(1.0, 1.0, 9.0), Observation::new(1.0, 1.0, 11.0)];
    let data = Dataset::from_observations(obs).unwrap();
    let fit = fit_theta_ml(&data, &level, &FitOptions::default()).unwrap();
    assert!((fit.theta_hat[0] - 10.0).abs() < 1e-10);
    assert!((fit.sigma_hat.unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn fitted_likelihood_beats_truth() {
    let truth_sigma =
        SigmaModel::new(SigmaDesign::complex(), vec![2.081, 0.162, -0.019, 0.06, -0.001]).unwrap();
    let truth_mean = MeanModel::new(Family::Td2pll, TRUTH.to_vec()).unwrap();
    let opts = FitOptions {
        restarts: 3,
        ..FitOptions::default()
    };
    let runs = 40;
    let mut wins = 0;
    for seed in 0..runs {
        let data = simulate(250, truth_sigma.clone(), 100 + seed);
        let Ok(fit) = fit_gamlss(&data, &Family::Td2pll, &SigmaDesign::complex(), &opts) else {
            continue;
        };
        let at_fit = negloglik(&data, &fit.mean_model().unwrap(), &fit.sigma_model().unwrap()).unwrap();
        let at_truth = negloglik(&data, &truth_mean, &truth_sigma).unwrap();
        assert!((at_fit + fit.loglik).abs() < 1e-8 * (1.0 + at_fit.abs()));
        if at_fit <= at_truth {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.95 * runs as f64, "{wins}/{runs}");
}

#[test]
fn emax2_fit_recovers_parameters() {
    let cells: Vec<(f64, f64)> = [0.0, 5.0, 10.0]
        .iter()
        .flat_map(|&a| [0.0, 6.0, 12.0].iter().map(move |&b| (a, b)))
        .collect();
    let design = Design::round_robin(&cells, 90).unwrap();
    let theta = vec![0.0, 80.0, 3.0, 120.0, 10.0, 0.02];
    let mean = MeanModel::new(Family::Emax2, theta.clone()).unwrap();
    let fr = Frame {
        domain_x1: (0.0, 10.0),
        domain_x2: (0.0, 12.0),
        reference: (0.0, 0.0),
    };
    let data = simulate_dataset(&design, &mean, &SigmaModel::constant(-6.0), Substream::root(3), &fr).unwrap();
    let fit = fit_theta_ml(&data, &Family::Emax2, &FitOptions::default()).unwrap();
    for (a, b) in fit.theta_hat.iter().zip(&theta) {
        assert!((a - b).abs() < 0.05 * (1.0 + b.abs()), "{:?}", fit.theta_hat);
    }
}

#[test]
fn options_validation() {
    let bad = FitOptions {
        restarts: 51,
        ..FitOptions::default()
    };
    assert!(bad.validate().is_err());
    let bad = FitOptions {
        tolerance: 0.0,
        ..FitOptions::default()
    };
    assert!(bad.validate().is_err());
}


