//! Test decisions, alert doses and curves, MED contours and the span metrics
//! used to score estimated alert curves against the truth.

use serde::{Deserialize, Serialize};

use crate::bootstrap::ConfidenceSurface;
use crate::error::{Error, Result};
use crate::model::{DeltaFn, Dimension, EvalGrid, Form, Hypothesis, MeanModel};

/// Per-x1 alerts of a surface analysis; `None` where no alert exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertCurve {
    pub x1: Vec<f64>,
    pub alerts: Vec<Option<f64>>,
}

impl AlertCurve {
    pub fn new(x1: Vec<f64>, alerts: Vec<Option<f64>>) -> Result<Self> {
        if x1.len() != alerts.len() {
            return Err(Error::invalid("alert curve axis and values differ in length"));
        }
        Ok(Self { x1, alerts })
    }

    /// A span given as a closed interval on `grid`, every member carrying the
    /// same alert value.
    pub fn from_interval(grid: &[f64], lo: f64, hi: f64, alert: f64) -> Self {
        let eps = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        Self {
            x1: grid.to_vec(),
            alerts: grid
                .iter()
                .map(|&t| (t >= lo - eps && t <= hi + eps).then_some(alert))
                .collect(),
        }
    }

    /// Grid values with an alert (the estimated or true span).
    pub fn span(&self) -> Vec<f64> {
        self.x1
            .iter()
            .zip(&self.alerts)
            .filter_map(|(&t, a)| a.map(|_| t))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertOutcome {
    pub reject: bool,
    /// Alert on the free axis of a fixed-slice test.
    pub alert_dose: Option<f64>,
    pub alert_curve: Option<AlertCurve>,
    /// x1 values with an alert (surface tests).
    pub t_est: Option<Vec<f64>>,
    pub c: f64,
    pub lambda: f64,
    pub alpha: f64,
}

#[inline]
fn crosses(form: Form, value: f64, lambda: f64) -> bool {
    match form {
        Form::Undercut => value < lambda,
        Form::Centered | Form::Exceeded => value > lambda,
    }
}

/// Test decision and alerts read from a band or plane.
pub fn decide(surface: &ConfidenceSurface, hyp: &Hypothesis) -> Result<AlertOutcome> {
    if surface.side != hyp.form.side() {
        return Err(Error::SideMismatch {
            side: surface.side,
            form: hyp.form,
        });
    }
    let grid = &surface.grid;
    let (n1, n2) = grid.shape();
    let hit = |i1: usize, i2: usize| crosses(hyp.form, surface.band_at(i1, i2), hyp.lambda);
    let base = AlertOutcome {
        reject: false,
        alert_dose: None,
        alert_curve: None,
        t_est: None,
        c: surface.quantile_c,
        lambda: hyp.lambda,
        alpha: hyp.alpha,
    };
    Ok(match hyp.dimension {
        Dimension::FixedX1(_) => {
            let alert = (0..n2).find(|&j| hit(0, j)).map(|j| grid.x2()[j]);
            AlertOutcome {
                reject: alert.is_some(),
                alert_dose: alert,
                ..base
            }
        }
        Dimension::FixedX2(_) => {
            let alert = (0..n1).find(|&i| hit(i, 0)).map(|i| grid.x1()[i]);
            AlertOutcome {
                reject: alert.is_some(),
                alert_dose: alert,
                ..base
            }
        }
        Dimension::Surface => {
            let alerts: Vec<Option<f64>> = (0..n1)
                .map(|i| (0..n2).find(|&j| hit(i, j)).map(|j| grid.x2()[j]))
                .collect();
            let curve = AlertCurve::new(grid.x1().to_vec(), alerts)?;
            let span = curve.span();
            AlertOutcome {
                reject: !span.is_empty(),
                alert_dose: None,
                t_est: Some(span),
                alert_curve: Some(curve),
                ..base
            }
        }
    })
}

fn bisect_crossing(g: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    // invariant: g(lo) false, g(hi) true
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// True alert along the free axis of one slice of the true model.
///
/// The first grid point where the condition holds brackets the crossing,
/// which is then located by bisection.
fn true_alert_on(axis: &[f64], condition: impl Fn(f64) -> bool) -> Option<f64> {
    let k = axis.iter().position(|&v| condition(v))?;
    if k == 0 {
        return Some(axis[0]);
    }
    Some(bisect_crossing(&condition, axis[k - 1], axis[k]))
}

/// Oracle alert for a fixed-slice hypothesis under the true model.
pub fn true_alert(
    model: &MeanModel,
    hyp: &Hypothesis,
    reference: (f64, f64),
    grid: &EvalGrid,
) -> Option<f64> {
    let delta = DeltaFn::new(model.family(), hyp, reference);
    let theta = model.theta();
    match hyp.dimension {
        Dimension::FixedX1(t) => true_alert_on(grid.x2(), |d| {
            crosses(hyp.form, delta.at(theta, t, d), hyp.lambda)
        }),
        Dimension::FixedX2(d) => true_alert_on(grid.x1(), |t| {
            crosses(hyp.form, delta.at(theta, t, d), hyp.lambda)
        }),
        Dimension::Surface => None,
    }
}

/// Oracle alert curve over the grid's x1 values under the true model.
pub fn true_alert_curve(
    model: &MeanModel,
    hyp: &Hypothesis,
    reference: (f64, f64),
    grid: &EvalGrid,
) -> AlertCurve {
    let surface = hyp.to_surface();
    let delta = DeltaFn::new(model.family(), &surface, reference);
    let theta = model.theta();
    let alerts = grid
        .x1()
        .iter()
        .map(|&t| {
            true_alert_on(grid.x2(), |d| {
                crosses(hyp.form, delta.at(theta, t, d), hyp.lambda)
            })
        })
        .collect();
    AlertCurve {
        x1: grid.x1().to_vec(),
        alerts,
    }
}

/// Level-set points of a normalized surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedContour {
    pub p: f64,
    pub points: Vec<(f64, f64)>,
    pub r_max: f64,
    pub min: f64,
}

impl MedContour {
    /// Response level `min f + p/100 · R_max` of the contour.
    pub fn response_level(&self) -> f64 {
        self.min + self.p / 100.0 * self.r_max
    }
}

/// The `p`% MED contour of `model` on `grid`.
///
/// The surface is normalized to `(f − min f) / R_max` over the grid nodes.
/// Grid nodes sitting exactly on the level are emitted as-is; along every
/// horizontal and vertical grid edge whose endpoints straddle the level, the
/// crossing is placed by linear interpolation.
pub fn med_contour(model: &MeanModel, grid: &EvalGrid, p: f64) -> Result<MedContour> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid(format!("MED percentage {p} outside (0, 100]")));
    }
    let (n1, n2) = grid.shape();
    let mut f = vec![0.0; n1 * n2];
    for (row, &x1) in f.chunks_mut(n2).zip(grid.x1()) {
        model.family().eval_row(model.theta(), x1, grid.x2(), row);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mean surface is not finite on the grid"));
    }
    let min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r_max = max - min;
    if r_max <= 0.0 {
        return Err(Error::invalid("constant surface: R_max is zero"));
    }
    let level = p / 100.0;
    let norm: Vec<f64> = f.iter().map(|v| (v - min) / r_max - level).collect();
    let at = |i: usize, j: usize| norm[i * n2 + j];
    let (x1, x2) = (grid.x1(), grid.x2());

    let mut points = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let v = at(i, j);
            if v == 0.0 {
                points.push((x1[i], x2[j]));
            }
            if j + 1 < n2 {
                let w = at(i, j + 1);
                if v * w < 0.0 {
                    let s = v / (v - w);
                    points.push((x1[i], x2[j] + s * (x2[j + 1] - x2[j])));
                }
            }
            if i + 1 < n1 {
                let w = at(i + 1, j);
                if v * w < 0.0 {
                    let s = v / (v - w);
                    points.push((x1[i] + s * (x1[i + 1] - x1[i]), x2[j]));
                }
            }
        }
    }
    Ok(MedContour {
        p,
        points,
        r_max,
        min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub onset_error: Option<f64>,
    pub offset_error: Option<f64>,
    pub rmse: Option<f64>,
}

/// Recall, precision, onset/offset error and alert RMSE of an estimated
/// alert curve against the true one, counted on their shared x1 grid.
pub fn interval_metrics(truth: &AlertCurve, est: &AlertCurve) -> Result<IntervalMetrics> {
    if truth.x1 != est.x1 {
        return Err(Error::invalid("true and estimated spans use different grids"));
    }
    let n_true = truth.alerts.iter().filter(|a| a.is_some()).count();
    let n_est = est.alerts.iter().filter(|a| a.is_some()).count();
    let overlap: Vec<(f64, f64)> = truth
        .alerts
        .iter()
        .zip(&est.alerts)
        .filter_map(|(t, e)| Some(((*t)?, (*e)?)))
        .collect();
    let n_both = overlap.len();

    let recall = (n_true > 0).then(|| n_both as f64 / n_true as f64);
    if n_est == 0 {
        return Ok(IntervalMetrics {
            recall: recall.map(|_| 0.0),
            precision: None,
            onset_error: None,
            offset_error: None,
            rmse: None,
        });
    }
    let precision = Some(n_both as f64 / n_est as f64);
    let span_true = truth.span();
    let span_est = est.span();
    let (onset_error, offset_error) = match (span_true.first(), span_true.last()) {
        (Some(&t0), Some(&t1)) => (
            Some(span_est[0] - t0),
            Some(span_est[span_est.len() - 1] - t1),
        ),
        _ => (None, None),
    };
    let rmse = (n_both > 0).then(|| {
        let ss: f64 = overlap.iter().map(|(t, e)| (e - t) * (e - t)).sum();
        (ss / n_both as f64).sqrt()
    });
    Ok(IntervalMetrics {
        recall,
        precision,
        onset_error,
        offset_error,
        rmse,
    })
}
