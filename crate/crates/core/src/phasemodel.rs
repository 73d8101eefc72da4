//! Reflection physics of a single IRS element.
//!
//! Two views of the same element are provided. [`CircuitElement`] is the lumped
//! parallel-resonant circuit whose impedance mismatch against free space sets
//! the complex reflection coefficient. [`PhaseShiftModel`] is the closed-form
//! amplitude law that couples the reflection amplitude to the phase shift and
//! is what every optimizer in this crate works with.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Number of composite Simpson panels used for the power loss integral.
pub const LOSS_QUADRATURE_PANELS: usize = 4096;

/// Reduces a phase to the half-open interval `[-pi, pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut r = theta - TWO_PI * ((theta + PI) / TWO_PI).floor();
    if r >= PI {
        r -= TWO_PI;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Phase-dependent amplitude law of a reflecting element.
///
/// `beta(theta) = (1 - beta_min) * ((sin(theta - phi) + 1) / 2)^alpha + beta_min`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct PhaseShiftModel {
    beta_min: f64,
    phi: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    beta_min: f64,
    phi: f64,
    alpha: f64,
}

impl TryFrom<RawModel> for PhaseShiftModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        PhaseShiftModel::new(r.beta_min, r.phi, r.alpha)
    }
}

impl From<PhaseShiftModel> for RawModel {
    fn from(m: PhaseShiftModel) -> Self {
        RawModel {
            beta_min: m.beta_min,
            phi: m.phi,
            alpha: m.alpha,
        }
    }
}

impl PhaseShiftModel {
    pub fn new(beta_min: f64, phi: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_min) {
            return Err(Error::InvalidParameter(format!(
                "beta_min must lie in [0, 1], got {beta_min}"
            )));
        }
        if !(phi.is_finite() && phi >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phi must be finite and >= 0, got {phi}"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(Self { beta_min, phi, alpha })
    }

    /// Unit amplitude at every phase.
    pub fn ideal() -> Self {
        Self {
            beta_min: 1.0,
            phi: 0.0,
            alpha: 0.0,
        }
    }

    /// Parameters fitted to the varactor element used in the simulations
    /// (`beta_min = 0.2`, `phi = 0.43 pi`, `alpha = 1.6`).
    pub fn reference() -> Self {
        Self {
            beta_min: 0.2,
            phi: 0.43 * PI,
            alpha: 1.6,
        }
    }

    /// Same `phi` and `alpha`, different minimum amplitude.
    pub fn with_beta_min(&self, beta_min: f64) -> Result<Self> {
        Self::new(beta_min, self.phi, self.alpha)
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// True when the amplitude is identically one.
    pub fn is_ideal(&self) -> bool {
        self.beta_min == 1.0 || self.alpha == 0.0
    }

    pub fn amplitude(&self, theta: f64) -> f64 {
        if self.is_ideal() {
            return 1.0;
        }
        let s = ((wrap_phase(theta) - self.phi).sin() + 1.0) / 2.0;
        (1.0 - self.beta_min) * s.clamp(0.0, 1.0).powf(self.alpha) + self.beta_min
    }

    pub fn reflection_coefficient(&self, theta: f64) -> Complex64 {
        Complex64::from_polar(self.amplitude(theta), theta)
    }

    /// Squared mean amplitude over a uniformly distributed phase: the large-N
    /// receive power ratio between practical and ideal reflection when the
    /// phases are designed for the ideal model.
    pub fn power_loss_ratio(&self) -> f64 {
        let mean = simpson(|t| self.amplitude(t), -PI, PI, LOSS_QUADRATURE_PANELS) / TWO_PI;
        mean * mean
    }

    pub fn power_loss_db(&self) -> f64 {
        10.0 * self.power_loss_ratio().log10()
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = if panels.is_multiple_of(2) { panels } else { panels + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Lumped equivalent circuit of one reflecting element: the bottom-layer
/// inductance in parallel with the series top-layer branch (inductance,
/// tunable capacitance, loss resistance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitElement {
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub r: f64,
    pub z0: f64,
    pub omega: f64,
}

impl CircuitElement {
    pub fn new(l1: f64, l2: f64, c: f64, r: f64, z0: f64, omega: f64) -> Result<Self> {
        for (name, v) in [("l1", l1), ("l2", l2), ("c", c), ("z0", z0), ("omega", omega)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(r >= 0.0) {
            return Err(Error::InvalidParameter(format!("r must be >= 0, got {r}")));
        }
        Ok(Self {
            l1,
            l2,
            c,
            r,
            z0,
            omega,
        })
    }

    pub fn impedance(&self) -> Result<Complex64> {
        let j = Complex64::i();
        let bottom = j * self.omega * self.l1;
        let branch = j * self.omega * self.l2 + 1.0 / (j * self.omega * self.c) + self.r;
        let den = bottom + branch;
        if den.norm() == 0.0 || !den.is_finite() {
            return Err(Error::SingularImpedance);
        }
        Ok(bottom * branch / den)
    }

    pub fn reflection(&self) -> Result<Complex64> {
        let z = self.impedance()?;
        reflection_from_impedance(z, self.z0)
    }
}

/// `(Z - Z0) / (Z + Z0)`; an infinite impedance reflects fully.
pub fn reflection_from_impedance(z: Complex64, z0: f64) -> Result<Complex64> {
    if z.re.is_infinite() || z.im.is_infinite() {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let den = z + z0;
    if den.norm() == 0.0 {
        return Err(Error::SingularReflection);
    }
    Ok((z - z0) / den)
}

/// One point of a capacitance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub c: f64,
    pub phase: f64,
    pub amplitude: f64,
}

/// Evaluates the circuit reflection coefficient across a capacitance grid.
pub fn sample_circuit_curve(l1: f64, l2: f64, z0: f64, omega: f64, r: f64, c_grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if c_grid.is_empty() {
        return Err(Error::InvalidParameter("capacitance grid is empty".into()));
    }
    c_grid
        .iter()
        .map(|&c| {
            let v = CircuitElement::new(l1, l2, c, r, z0, omega)?.reflection()?;
            Ok(CurvePoint {
                c,
                phase: v.arg(),
                amplitude: v.norm(),
            })
        })
        .collect()
}

/// Phase vector together with the reflection coefficients it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionState {
    theta: Vec<f64>,
    v: Vec<Complex64>,
}

impl ReflectionState {
    pub fn from_theta(model: &PhaseShiftModel, theta: &[f64]) -> Self {
        let theta: Vec<f64> = theta.iter().map(|&t| wrap_phase(t)).collect();
        let v = theta.iter().map(|&t| model.reflection_coefficient(t)).collect();
        Self { theta, v }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn v(&self) -> &[Complex64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Same phases re-evaluated under another amplitude law.
    pub fn under(&self, model: &PhaseShiftModel) -> Self {
        Self::from_theta(model, &self.theta)
    }

    pub fn is_consistent(&self, model: &PhaseShiftModel, tol: f64) -> bool {
        self.theta
            .iter()
            .zip(&self.v)
            .all(|(&t, &v)| (v - model.reflection_coefficient(t)).norm() <= tol)
    }
}
