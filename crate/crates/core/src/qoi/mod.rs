//! Quantities of interest and the performance feature specification.
//!
//! A design is *safe* when the quantity of interest stays at or below a
//! threshold `c` for every point of a discretized range-parameter grid
//! (angular frequency, in rad/s, for the waveguide model).

mod oracle;
mod waveguide;

pub use oracle::{normal_cdf, normal_pdf, HalfspaceOracle, ShiftedOracle};
pub use waveguide::{waveguide_model, WaveguideConfig, WaveguideModel};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Monotone grid of range-parameter values the performance feature is
/// enforced on.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeGrid {
    points: Vec<f64>,
}

impl RangeGrid {
    /// `count` equidistant points covering `[lo, hi]`, endpoints included.
    pub fn equidistant(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::InvalidParameter(format!(
                "invalid grid range [{lo}, {hi}]"
            )));
        }
        if count == 1 {
            if hi > lo {
                return Err(Error::InvalidParameter(
                    "a single-point grid needs lo == hi".into(),
                ));
            }
            return Ok(Self { points: vec![lo] });
        }
        let step = (hi - lo) / (count - 1) as f64;
        let points = (0..count).map(|i| lo + step * i as f64).collect();
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Performance feature specification: `Q(p, d, r) <= threshold` for every
/// grid point `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSpec {
    pub grid: RangeGrid,
    pub threshold: f64,
}

impl PerformanceSpec {
    pub fn new(grid: RangeGrid, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter("threshold must be finite".into()));
        }
        Ok(Self { grid, threshold })
    }
}

/// A candidate design: the mean of the uncertain parameters plus the purely
/// deterministic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub uncertain_mean: DVector<f64>,
    pub deterministic: DVector<f64>,
}

/// A scalar quantity of interest `Q(p, d, r)` over uncertain parameters `p`,
/// deterministic parameters `d`, and range parameter `r`.
///
/// Implementations count evaluations: every call to [`QoiModel::evaluate`]
/// increments [`QoiModel::eval_count`] by exactly one (also on error), with an
/// atomic so concurrent classification loops keep exact totals.
pub trait QoiModel: Send + Sync {
    fn uncertain_dim(&self) -> usize;
    fn deterministic_dim(&self) -> usize;
    fn evaluate(&self, p: &DVector<f64>, d: &DVector<f64>, r: f64) -> Result<f64>;
    fn eval_count(&self) -> u64;
}

/// Outcome of checking one sample against the performance spec at every grid
/// point.
#[derive(Debug, Clone)]
pub struct SafeDomainCheck {
    /// True iff `Q <= threshold` holds at all grid points.
    pub safe: bool,
    /// `Q(p, d, r) - threshold` per grid point, in grid order.
    pub margins: Vec<f64>,
}

/// Evaluate the model on every grid point and compare against the threshold.
///
/// All grid points are evaluated even after a violation, so callers always
/// get the complete margin vector (surrogate training relies on it).
pub fn is_in_safe_domain(
    model: &dyn QoiModel,
    spec: &PerformanceSpec,
    p: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<SafeDomainCheck> {
    let mut margins = Vec::with_capacity(spec.grid.len());
    let mut safe = true;
    for &r in spec.grid.points() {
        let q = model.evaluate(p, d, r)?;
        let margin = q - spec.threshold;
        safe &= margin <= 0.0;
        margins.push(margin);
    }
    Ok(SafeDomainCheck { safe, margins })
}

pub(crate) fn check_dims(model: &dyn QoiModel, p: &DVector<f64>, d: &DVector<f64>) -> Result<()> {
    if p.len() != model.uncertain_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.uncertain_dim(),
            got: p.len(),
        });
    }
    if d.len() != model.deterministic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.deterministic_dim(),
            got: d.len(),
        });
    }
    Ok(())
}
