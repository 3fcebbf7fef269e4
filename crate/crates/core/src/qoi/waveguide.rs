//! TE10 rectangular-waveguide reflection model.
//!
//! The guide (width `a`, vacuum-filled) contains a dielectric inlay of length
//! `p1` millimetres flanked by two vacuum offsets of length `p2` millimetres.
//! The inlay material is controlled by the deterministic parameters:
//! `eps_r = 1 + d1 * chi_e`, `mu_r = 1 + d2 * chi_m`.
//!
//! The quantity of interest is `20*log10 |S11|` from a 1-D transmission-line
//! cascade of the three sections. Each section carries the TE10 dispersion
//! relation `beta = sqrt(eps_r*mu_r*(w/c0)^2 - (pi/a)^2)` and the medium's
//! intrinsic wave impedance `sqrt(mu_r/eps_r)`, so an inlay with
//! `eps_r == mu_r` is impedance matched and reflects nothing at any
//! frequency. |S11| = 0 is clamped to the configured dB floor.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qoi::{check_dims, QoiModel};

const C0: f64 = 299_792_458.0; // m/s
const MM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveguideConfig {
    /// Guide width `a` in millimetres.
    pub width_mm: f64,
    /// Permittivity susceptibility: `eps_r = 1 + d1 * chi_e`.
    pub chi_e: f64,
    /// Permeability susceptibility: `mu_r = 1 + d2 * chi_m`.
    pub chi_m: f64,
    /// Lower clamp for the returned dB value.
    pub floor_db: f64,
}

impl Default for WaveguideConfig {
    /// Calibrated benchmark constants: with the standard initial design
    /// (mean [9, 5] mm, d = [1, 1], sigma 0.9 mm) the yield against a
    /// -24 dB spec over 6.5..7.5 GHz starts near 0.44.
    fn default() -> Self {
        Self {
            width_mm: 30.0,
            chi_e: 1.85,
            chi_m: 1.10,
            floor_db: -100.0,
        }
    }
}

pub fn waveguide_model(config: WaveguideConfig) -> Result<WaveguideModel> {
    if !(config.width_mm > 0.0) || !config.width_mm.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "waveguide width must be positive, got {}",
            config.width_mm
        )));
    }
    if !(config.chi_e > 0.0) || !(config.chi_m > 0.0) {
        return Err(Error::InvalidParameter(
            "material susceptibilities chi_e, chi_m must be positive".into(),
        ));
    }
    if !(config.floor_db < 0.0) || !config.floor_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dB floor must be negative and finite, got {}",
            config.floor_db
        )));
    }
    Ok(WaveguideModel {
        config,
        count: AtomicU64::new(0),
    })
}

#[derive(Debug)]
pub struct WaveguideModel {
    config: WaveguideConfig,
    count: AtomicU64,
}

impl WaveguideModel {
    pub fn config(&self) -> &WaveguideConfig {
        &self.config
    }
}

#[derive(Clone)]
struct Section {
    /// Length in metres.
    length: f64,
    eps_r: f64,
    mu_r: f64,
}

/// Propagation constant of the TE10 mode in rad/m, or an error below cutoff.
fn propagation_constant(omega: f64, eps_r: f64, mu_r: f64, width_m: f64) -> Result<f64> {
    let k0 = omega / C0;
    let kc = std::f64::consts::PI / width_m;
    let beta_sq = eps_r * mu_r * k0 * k0 - kc * kc;
    if beta_sq <= 0.0 {
        return Err(Error::BelowCutoff { omega });
    }
    Ok(beta_sq.sqrt())
}

/// Wave-transfer matrix of the section cascade, assuming matched semi-infinite
/// vacuum guides on both ends. Amplitudes at the input plane are the matrix
/// times amplitudes at the output plane; `S11 = m[1][0] / m[0][0]`.
fn cascade(sections: &[Section], omega: f64, width_m: f64) -> Result<[[Complex64; 2]; 2]> {
    // entering from vacuum: start with the identity and track the impedance
    // of the previous medium to insert interface matrices between sections
    // and back into vacuum at the end.
    let mut m = [[Complex64::ONE, Complex64::ZERO], [Complex64::ZERO, Complex64::ONE]];
    let mut z_prev = 1.0; // relative intrinsic impedance of vacuum
    for s in sections {
        let z = (s.mu_r / s.eps_r).sqrt();
        m = mul(m, interface(z_prev, z));
        let beta = propagation_constant(omega, s.eps_r, s.mu_r, width_m)?;
        m = mul(m, propagation(beta, s.length));
        z_prev = z;
    }
    m = mul(m, interface(z_prev, 1.0));
    Ok(m)
}

fn interface(z1: f64, z2: f64) -> [[Complex64; 2]; 2] {
    let r = z1 / z2;
    let a = Complex64::new(0.5 * (1.0 + r), 0.0);
    let b = Complex64::new(0.5 * (1.0 - r), 0.0);
    [[a, b], [b, a]]
}

fn propagation(beta: f64, length: f64) -> [[Complex64; 2]; 2] {
    let phase = Complex64::new(0.0, beta * length).exp();
    [[phase, Complex64::ZERO], [Complex64::ZERO, phase.conj()]]
}

fn mul(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

impl QoiModel for WaveguideModel {
    fn uncertain_dim(&self) -> usize {
        2
    }

    fn deterministic_dim(&self) -> usize {
        2
    }

    fn evaluate(&self, p: &DVector<f64>, d: &DVector<f64>, r: f64) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        check_dims(self, p, d)?;
        let (p1, p2) = (p[0], p[1]);
        if p1 < 0.0 {
            return Err(Error::NegativeSectionLength { name: "p1", value: p1 });
        }
        if p2 < 0.0 {
            return Err(Error::NegativeSectionLength { name: "p2", value: p2 });
        }
        let eps_r = 1.0 + d[0] * self.config.chi_e;
        let mu_r = 1.0 + d[1] * self.config.chi_m;
        if !(eps_r > 0.0) || !(mu_r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "non-physical inlay material: eps_r = {eps_r}, mu_r = {mu_r}"
            )));
        }
        let width_m = self.config.width_mm * MM;
        let sections = [
            Section { length: p2 * MM, eps_r: 1.0, mu_r: 1.0 },
            Section { length: p1 * MM, eps_r, mu_r },
            Section { length: p2 * MM, eps_r: 1.0, mu_r: 1.0 },
        ];
        let m = cascade(&sections, r, width_m)?;
        let s11 = m[1][0] / m[0][0];
        let mag = s11.norm();
        let db = if mag > 0.0 {
            20.0 * mag.log10()
        } else {
            f64::NEG_INFINITY
        };
        Ok(db.max(self.config.floor_db))
    }

    fn eval_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}
