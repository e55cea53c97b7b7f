//! CSV and JSON formats, and the analysis configuration file.
//!
//! CSV files are comma-separated with a header row and LF line endings.
//! Floating-point values are written in Rust's shortest round-trip decimal
//! form, so reading a written file reproduces every value exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{Algorithm, BootstrapConfig, ConfidenceSurface};
use crate::error::{Error, Result};
use crate::estimator::{FitOptions, FitResult};
use crate::model::{AxisSpec, Dataset, EvalGrid, Family, FamilyRegistry, Hypothesis, Observation, SigmaDesign};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ALERT_SURFACE_THREADS";

/// Header names of the x1, x2 and y columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub x1: String,
    pub x2: String,
    pub y: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            x1: "x1".into(),
            x2: "x2".into(),
            y: "y".into(),
        }
    }
}

impl ColumnMap {
    pub fn new(x1: impl Into<String>, x2: impl Into<String>, y: impl Into<String>) -> Self {
        Self {
            x1: x1.into(),
            x2: x2.into(),
            y: y.into(),
        }
    }
}

pub fn parse_dataset_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    read_dataset_csv(File::open(path)?, columns)
}

/// Reads observations from CSV. Line numbers in errors count the header as
/// line 1. Domains span the observed covariates; the reference sits at their
/// minima.
pub fn read_dataset_csv(reader: impl Read, columns: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty("CSV file has no header"));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let idx = [find(&columns.x1)?, find(&columns.x2)?, find(&columns.y)?];
    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut v = [0.0; 3];
        for (slot, &i) in v.iter_mut().zip(&idx) {
            let field = record.get(i).unwrap_or("");
            *slot = match field.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                Ok(_) => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value `{field}` in column `{}`", &headers[i]),
                    })
                }
                Err(_) => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-numeric value `{field}` in column `{}`", &headers[i]),
                    })
                }
            };
        }
        observations.push(Observation::new(v[0], v[1], v[2]));
    }
    if observations.is_empty() {
        return Err(Error::Empty("CSV file has no data rows"));
    }
    Dataset::from_observations(observations)
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_dataset_csv(out: &mut impl Write, data: &Dataset) -> Result<()> {
    writeln!(out, "x1,x2,y")?;
    for o in data.observations() {
        writeln!(out, "{},{},{}", o.x1, o.x2, o.y)?;
    }
    Ok(())
}

pub fn save_dataset_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_csv(&mut w, data)?;
    w.flush()?;
    Ok(())
}

/// Columns `x1,x2,delta,sigma_delta,band`, x2 varying fastest.
pub fn write_surface_csv(out: &mut impl Write, surface: &ConfidenceSurface) -> Result<()> {
    writeln!(out, "x1,x2,delta,sigma_delta,band")?;
    let grid = &surface.grid;
    for (i, x1) in grid.x1().iter().enumerate() {
        for (j, x2) in grid.x2().iter().enumerate() {
            let k = surface.index(i, j);
            writeln!(
                out,
                "{},{},{},{},{}",
                x1, x2, surface.delta_hat[k], surface.sigma_delta[k], surface.band[k]
            )?;
        }
    }
    Ok(())
}

pub fn save_surface_csv(path: impl AsRef<Path>, surface: &ConfidenceSurface) -> Result<()> {
    let mut w = create(path)?;
    write_surface_csv(&mut w, surface)?;
    w.flush()?;
    Ok(())
}

pub fn write_contour_csv(out: &mut impl Write, points: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "d1,d2")?;
    for (a, b) in points {
        writeln!(out, "{a},{b}")?;
    }
    Ok(())
}

pub fn save_contour_csv(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let mut w = create(path)?;
    write_contour_csv(&mut w, points)?;
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Serializable view of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: String,
    pub sigma_terms: SigmaDesign,
    pub theta_hat: Vec<f64>,
    pub vartheta_hat: Option<Vec<f64>>,
    pub sigma_hat: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n: usize,
    pub iterations: usize,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        Self {
            family: f.family.name().to_string(),
            sigma_terms: f.sigma_design.clone(),
            theta_hat: f.theta_hat.clone(),
            vartheta_hat: f.vartheta_hat.clone(),
            sigma_hat: f.sigma_hat,
            loglik: f.loglik,
            converged: f.converged,
            n: f.n,
            iterations: f.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub family: String,
    #[serde(default = "SigmaDesign::constant")]
    pub sigma_terms: SigmaDesign,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: "td2pll".into(),
            sigma_terms: SigmaDesign::constant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSection {
    pub b1: usize,
    pub b2: usize,
    pub algorithm: Algorithm,
    pub seed: Option<u64>,
    pub retry_limit: usize,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        Self {
            b1: d.b1,
            b2: d.b2,
            algorithm: d.algorithm,
            seed: None,
            retry_limit: d.retry_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub x1: AxisSpec,
    pub x2: AxisSpec,
}

/// Contents of a `--config` file. Every section is optional in the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub model: ModelSection,
    pub hypothesis: Option<Hypothesis>,
    pub bootstrap: BootstrapSection,
    pub grid: Option<GridSection>,
}

/// Grid points per axis when the configuration names no grid.
pub const DEFAULT_GRID_POINTS: usize = 101;

impl AnalysisConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn family(&self, registry: &FamilyRegistry) -> Result<Family> {
        registry.get(&self.model.family)
    }

    /// The hypothesis, re-validated after deserialization.
    pub fn hypothesis(&self) -> Result<Hypothesis> {
        let h = self
            .hypothesis
            .ok_or_else(|| Error::invalid("no hypothesis configured"))?;
        Hypothesis::new(h.dimension, h.form, h.lambda, h.alpha)
    }

    pub fn bootstrap_config(&self, fit: FitOptions) -> Result<BootstrapConfig> {
        let b = &self.bootstrap;
        let seed = b
            .seed
            .ok_or_else(|| Error::invalid("a bootstrap seed is required"))?;
        let cfg = BootstrapConfig {
            b1: b.b1,
            b2: b.b2,
            algorithm: b.algorithm,
            seed,
            retry_limit: b.retry_limit,
            fit,
            ..BootstrapConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configured grid, or a uniform grid over the data's domains. The
    /// grid must cover the observed covariate range.
    pub fn eval_grid(&self, data: &Dataset) -> Result<EvalGrid> {
        let (d1, d2) = (data.domain_x1(), data.domain_x2());
        let grid = match self.grid {
            Some(g) => EvalGrid::from_axes(g.x1, g.x2)?,
            None => EvalGrid::uniform(d1, DEFAULT_GRID_POINTS, d2, DEFAULT_GRID_POINTS)?,
        };
        if !grid.covers(d1, d2) {
            return Err(Error::invalid(format!(
                "grid does not cover the data range [{}, {}] x [{}, {}]",
                d1.0, d1.1, d2.0, d2.1
            )));
        }
        Ok(grid)
    }
}

/// Worker count requested through [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when
/// `None`. The worker count never changes results.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
