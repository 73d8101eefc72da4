//! Scalar numerical routines shared by the beamforming solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval given by its two endpoints. The endpoints may be in either
/// order; `lo` is the anchor point of a trust region and `hi` its far end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo).abs()
    }

    pub fn min(&self) -> f64 {
        self.lo.min(self.hi)
    }

    pub fn max(&self) -> f64 {
        self.lo.max(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min() && x <= self.max()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min(), self.max())
    }
}

/// Stopping thresholds and iteration caps for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverTolerances {
    /// Relative objective change that ends an inner loop.
    pub eps1: f64,
    /// Absolute constraint violation that ends an outer loop.
    pub eps2: f64,
    /// Bisection accuracy.
    pub eps3: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub max_fixed_point: usize,
    /// Relative change that ends a fixed-point iteration.
    pub fixed_point_tol: f64,
}

impl SolverTolerances {
    /// Single-user settings.
    pub fn single_user() -> Self {
        Self {
            eps2: 1e-8,
            ..Self::default()
        }
    }

    /// Multiuser settings.
    pub fn multiuser() -> Self {
        Self {
            eps2: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eps1 > 0.0
            && self.eps2 > 0.0
            && self.eps3 > 0.0
            && self.fixed_point_tol > 0.0
            && self.max_inner >= 1
            && self.max_outer >= 1
            && self.max_fixed_point >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid tolerances {self:?}")))
        }
    }
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            eps1: 1e-3,
            eps2: 1e-8,
            eps3: 1e-12,
            max_inner: 300,
            max_outer: 200,
            max_fixed_point: 10_000,
            fixed_point_tol: 1e-8,
        }
    }
}

/// Result of a three-point quadratic fit over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadFit {
    pub theta: f64,
    pub value: f64,
}

/// Fits a parabola through the two endpoints and the midpoint of `region`
/// and returns the best of its stationary point (clipped to the region) and
/// the three samples.
///
/// The returned value is never below the best sample.
pub fn quad_fit_extremum(f: impl Fn(f64) -> f64, region: Interval) -> QuadFit {
    let (ta, tc) = (region.lo, region.hi);
    let tb = region.midpoint();
    let (f1, f2, f3) = (f(ta), f(tb), f(tc));

    let mut best = QuadFit { theta: ta, value: f1 };
    for (t, v) in [(tb, f2), (tc, f3)] {
        if v > best.value {
            best = QuadFit { theta: t, value: v };
        }
    }

    let den = 4.0 * (f1 - 2.0 * f2 + f3);
    let scale = f1.abs().max(f2.abs()).max(f3.abs());
    if den.abs() > 1e-14 * scale && den.is_finite() {
        let num = ta * (f1 - 4.0 * f2 + 3.0 * f3) + tc * (3.0 * f1 - 4.0 * f2 + f3);
        let t = region.clamp(num / den);
        if t.is_finite() {
            let v = f(t);
            if v > best.value {
                best = QuadFit { theta: t, value: v };
            }
        }
    }
    best
}

/// Final bracket of a bisection search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub g_lo: f64,
    pub g_hi: f64,
}

impl Bracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo).abs()
    }
}

const BISECTION_CAP: usize = 200;

/// Bisection on a sign change of `g` between `lo` and `hi`.
///
/// The returned bracket keeps the sign pattern of the initial endpoints, so
/// callers can pick the side they need. When an endpoint is an exact root
/// the bracket collapses onto it.
pub fn bisect_root(g: impl Fn(f64) -> f64, lo: f64, hi: f64, eps3: f64) -> Result<Bracket> {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    if ga == 0.0 {
        return Ok(Bracket {
            lo: a,
            hi: a,
            g_lo: ga,
            g_hi: ga,
        });
    }
    if gb == 0.0 {
        return Ok(Bracket {
            lo: b,
            hi: b,
            g_lo: gb,
            g_hi: gb,
        });
    }
    if ga.signum() == gb.signum() || ga.is_nan() || gb.is_nan() {
        return Err(Error::Bracket {
            lo,
            hi,
            g_lo: ga,
            g_hi: gb,
        });
    }
    for _ in 0..BISECTION_CAP {
        if (b - a).abs() <= eps3 {
            break;
        }
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Ok(Bracket {
                lo: m,
                hi: m,
                g_lo: gm,
                g_hi: gm,
            });
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
            gb = gm;
        }
    }
    Ok(Bracket {
        lo: a,
        hi: b,
        g_lo: ga,
        g_hi: gb,
    })
}

/// Converged fixed point and the number of map evaluations it took.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x: Vec<f64>,
    pub iterations: usize,
}

/// Iterates `x <- map(x)` until the largest relative coordinate change drops
/// below `tol`.
pub fn fixed_point(mut map: impl FnMut(&[f64]) -> Vec<f64>, x0: &[f64], tol: f64, cap: usize) -> Result<FixedPoint> {
    let mut x = x0.to_vec();
    for it in 1..=cap {
        let next = map(&x);
        if next.len() != x.len() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::FixedPointDiverged { iterations: it });
        }
        let change = x
            .iter()
            .zip(&next)
            .map(|(&old, &new)| {
                let d = (new - old).abs();
                if new.abs() > 0.0 {
                    d / new.abs()
                } else {
                    d
                }
            })
            .fold(0.0, f64::max);
        x = next;
        if change < tol {
            return Ok(FixedPoint { x, iterations: it });
        }
    }
    Err(Error::FixedPointDiverged { iterations: cap })
}
