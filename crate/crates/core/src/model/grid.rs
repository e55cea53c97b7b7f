use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Domain;

/// Rectangular evaluation grid over `T × D`.
///
/// Full grids carry at least two points per axis. Slice grids, produced for
/// fixed-covariate hypotheses, carry a single point on the fixed axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    x1: Vec<f64>,
    x2: Vec<f64>,
}

fn check_axis(name: &str, pts: &[f64], min_len: usize) -> Result<()> {
    if pts.len() < min_len {
        return Err(Error::invalid(format!(
            "grid axis {name} needs at least {min_len} points, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|v| !v.is_finite()) || pts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "grid axis {name} must be finite and strictly ascending"
        )));
    }
    Ok(())
}

/// `n` equidistant points from `lo` to `hi`; the last point is exactly `hi`.
///
/// Points are computed as `lo + (hi − lo)·i/(n − 1)`, so values such as
/// 4.0 on `linspace(1, 7, 61)` land exactly.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let span = hi - lo;
            let last = (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + span * i as f64 / last).collect();
            v[n - 1] = hi;
            v
        }
    }
}

/// One axis of a uniform grid: `points` values from `min` to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.points)
    }
}

impl EvalGrid {
    pub fn from_axes(x1: AxisSpec, x2: AxisSpec) -> Result<Self> {
        Self::new(x1.values(), x2.values())
    }

    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        check_axis("x1", &x1, 2)?;
        check_axis("x2", &x2, 2)?;
        Ok(Self { x1, x2 })
    }

    pub fn uniform(d1: Domain, n1: usize, d2: Domain, n2: usize) -> Result<Self> {
        Self::new(linspace(d1.0, d1.1, n1), linspace(d2.0, d2.1, n2))
    }

    /// `{x1} × x2` slice.
    pub fn slice_x1(x1: f64, x2: Vec<f64>) -> Result<Self> {
        check_axis("x1", &[x1], 1)?;
        check_axis("x2", &x2, 2)?;
        Ok(Self { x1: vec![x1], x2 })
    }

    /// `x1 × {x2}` slice.
    pub fn slice_x2(x1: Vec<f64>, x2: f64) -> Result<Self> {
        check_axis("x1", &x1, 2)?;
        check_axis("x2", &[x2], 1)?;
        Ok(Self { x1, x2: vec![x2] })
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x1.len(), self.x2.len())
    }

    pub fn len(&self) -> usize {
        self.x1.len() * self.x2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covers(&self, d1: Domain, d2: Domain) -> bool {
        let (a, b) = (self.x1[0], self.x1[self.x1.len() - 1]);
        let (c, d) = (self.x2[0], self.x2[self.x2.len() - 1]);
        a <= d1.0 && b >= d1.1 && c <= d2.0 && d >= d2.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints_are_exact() {
        let v = linspace(1.0, 7.0, 101);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[100], 7.0);
        assert_eq!(v[50], 4.0);
        assert_eq!(linspace(1.0, 7.0, 61)[30], 4.0);
        assert_eq!(linspace(0.0, 10.0, 101)[70], 7.0);
        assert_eq!(linspace(0.0, 10.0, 101)[3], 0.3);
    }

    #[test]
    fn rejects_short_or_unsorted_axes() {
        assert!(EvalGrid::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(EvalGrid::new(vec![1.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(EvalGrid::slice_x1(4.0, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn coverage() {
        let g = EvalGrid::uniform((1.0, 7.0), 5, (0.0, 10.0), 5).unwrap();
        assert!(g.covers((1.0, 7.0), (0.0, 10.0)));
        assert!(!g.covers((0.5, 7.0), (0.0, 10.0)));
    }
}
