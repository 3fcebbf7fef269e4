//! The calibrated waveguide demonstration problem.
//!
//! All drivers, benches, and the command line default to this setup, so the
//! numbers here are the single source of truth for it.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::optimize::Problem;
use crate::qoi::{waveguide_model, PerformanceSpec, RangeGrid, WaveguideConfig};
use crate::uq::UncertainSpec;

/// Reflection must stay below this level across the whole band.
pub const BENCHMARK_THRESHOLD_DB: f64 = -24.0;

/// Frequency band of the benchmark, 11 equidistant points over
/// 6.5..7.5 GHz as angular frequencies.
pub fn benchmark_grid() -> RangeGrid {
    RangeGrid::equidistant(2.0 * PI * 6.5e9, 2.0 * PI * 7.5e9, 11).unwrap()
}

/// The standard demonstration problem: the default waveguide against a
/// -24 dB reflection spec, section lengths scattering around (9, 5) mm with
/// 0.9 mm standard deviation truncated at three sigma, material scalings
/// starting at (1, 1). The initial yield is near 0.44; designs on the
/// impedance-matched line reach yield 1.
pub fn waveguide_benchmark() -> Result<Problem> {
    let model = waveguide_model(WaveguideConfig::default())?;
    let spec = PerformanceSpec::new(benchmark_grid(), BENCHMARK_THRESHOLD_DB)?;
    let uncertain = UncertainSpec::new(
        DVector::from_row_slice(&[9.0, 5.0]),
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.81, 0.81])),
        DVector::from_row_slice(&[3.0, 3.0]),
    )?;
    Problem::new(
        Arc::new(model),
        spec,
        uncertain,
        DVector::from_row_slice(&[1.0, 1.0]),
    )
}
