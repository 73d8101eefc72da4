//! Single-user reflect beamforming.
//!
//! With one user the optimal transmit beamformer is MRT and the required
//! power is `gamma * sigma2 / ||h||^2`, so the reflection design reduces to
//! maximizing the effective channel gain
//! `v^H Psi v + 2 Re(v^H h_hat) + c` with `Psi = Phi Phi^H`, `h_hat = Phi h_d`.
//! The same quadratic form, with summed weighted terms, is reused by the
//! first stage of the multiuser two-stage method.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::channel::{composite_matrix, effective_channel, CMatrix, CVector, ChannelSet, SolveStatus, TracePoint};
use crate::error::{Error, Result};
use crate::numopt::{quad_fit_extremum, Interval, QuadFit, SolverTolerances};
use crate::phasemodel::{wrap_phase, PhaseShiftModel, ReflectionState};

/// CCCP iterations per v-step and their relative stopping threshold.
const CCCP_MAX_ITER: usize = 100;
const CCCP_REL_TOL: f64 = 1e-6;
/// A CCCP step whose largest entry exceeds this multiple of `max(1, |a|)` is
/// rejected. Below the largest eigenvalue of `Psi` the v-subproblem is
/// unbounded and the iteration grows geometrically.
const CCCP_GROWTH_BOUND: f64 = 1e3;
/// Relative improvement an element update must achieve to be accepted.
const ACCEPT_REL: f64 = 1e-13;

/// `w = sqrt(P) h / ||h||` for the row-form channel `h^H`.
pub fn mrt_beamformer(h_row: &CVector, power: f64) -> Result<CVector> {
    let norm = h_row.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroChannel);
    }
    if !(power >= 0.0) {
        return Err(Error::InvalidParameter(format!("power must be >= 0, got {power}")));
    }
    Ok(h_row.conjugate() * Complex64::new(power.sqrt() / norm, 0.0))
}

/// Minimum power meeting SNR target `gamma` under MRT.
pub fn required_power(h_row: &CVector, gamma: f64, sigma2: f64) -> Result<f64> {
    let g = h_row.norm_squared();
    if !(g > 0.0) {
        return Err(Error::Infeasible("zero channel".into()));
    }
    Ok(gamma * sigma2 / g)
}

/// `||v^H Phi + h_d^H||^2`.
pub fn channel_gain(v: &CVector, phi: &CMatrix, h_d: &CVector) -> f64 {
    effective_channel(v, phi, h_d).norm_squared()
}

/// Gain written as the quadratic form `v^H Psi v + 2 Re(v^H h_hat) + constant`.
#[derive(Debug, Clone)]
pub struct QuadraticGain {
    pub psi: CMatrix,
    pub h_hat: CVector,
    pub constant: f64,
}

impl QuadraticGain {
    pub fn from_parts(phi: &CMatrix, h_d: &CVector) -> Self {
        Self {
            psi: phi * phi.adjoint(),
            h_hat: phi * h_d,
            constant: h_d.norm_squared(),
        }
    }

    /// Gain of the only user of a single-user channel set.
    pub fn single_user(channels: &ChannelSet) -> Result<Self> {
        if channels.users() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected one user, got {}",
                channels.users()
            )));
        }
        Ok(Self::from_parts(&channels.composite(0), &channels.h_d[0]))
    }

    /// `sum_k weights[k] ||v^H Phi_k + h_{d,k}^H||^2` with weights normalised
    /// to sum to one (the maximizer does not depend on the overall scale).
    pub fn weighted(channels: &ChannelSet, weights: &[f64]) -> Result<Self> {
        if weights.len() != channels.users() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} users",
                weights.len(),
                channels.users()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be non-negative with positive sum".into(),
            ));
        }
        let n = channels.elements();
        let mut out = Self {
            psi: CMatrix::zeros(n, n),
            h_hat: CVector::zeros(n),
            constant: 0.0,
        };
        for (k, &w) in weights.iter().enumerate() {
            let part = Self::from_parts(&composite_matrix(&channels.h_r[k], &channels.g), &channels.h_d[k]);
            let s = w / total;
            out.psi += part.psi * Complex64::new(s, 0.0);
            out.h_hat += part.h_hat * Complex64::new(s, 0.0);
            out.constant += s * part.constant;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.h_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_hat.is_empty()
    }

    pub fn gain(&self, v: &CVector) -> f64 {
        let quad = v.dotc(&(&self.psi * v)).re;
        quad + 2.0 * v.dotc(&self.h_hat).re + self.constant
    }

    pub fn gain_of(&self, state: &ReflectionState) -> f64 {
        self.gain(&CVector::from_column_slice(state.v()))
    }
}

/// Terms of the gain that depend on element `n` alone:
/// `f(theta) = beta^2(theta) psi_nn + beta(theta) |varphi| cos(arg(varphi) - theta)`.
#[derive(Debug, Clone, Copy)]
pub struct ElementSubproblem {
    pub psi_nn: f64,
    pub varphi: Complex64,
    pub model: PhaseShiftModel,
}

impl ElementSubproblem {
    pub fn value(&self, theta: f64) -> f64 {
        let b = self.model.amplitude(theta);
        b * b * self.psi_nn + b * self.varphi.norm() * (self.varphi.arg() - theta).cos()
    }
}

pub fn element_subproblem(
    v: &CVector,
    psi: &CMatrix,
    h_hat_d: &CVector,
    n: usize,
    model: &PhaseShiftModel,
) -> ElementSubproblem {
    let cross: Complex64 = (0..v.len()).filter(|&m| m != n).map(|m| psi[(n, m)] * v[m]).sum();
    ElementSubproblem {
        psi_nn: psi[(n, n)].re.max(0.0),
        varphi: (cross + h_hat_d[n]) * 2.0,
        model: *model,
    }
}

/// Region from `arg(varphi)` towards `pi` (non-negative argument) or `-pi`.
pub fn literal_trust_region(arg_varphi: f64) -> Interval {
    if arg_varphi >= 0.0 {
        Interval::new(arg_varphi, PI)
    } else {
        Interval::new(arg_varphi, -PI)
    }
}

/// Arc from `arg(varphi)` to the amplitude peak `phi + pi/2`, travelling away from
/// the amplitude trough `phi - pi/2`. The upper end may lie outside `[-pi, pi)`.
/// With `phi = pi/2` this is `literal_trust_region`.
pub fn amplitude_trust_region(arg_varphi: f64, model: &PhaseShiftModel) -> Interval {
    let two_pi = 2.0 * PI;
    let trough = model.phi() - FRAC_PI_2;
    let peak = model.phi() + FRAC_PI_2;
    if wrap_phase(arg_varphi - trough) >= 0.0 {
        Interval::new(arg_varphi, arg_varphi + (peak - arg_varphi).rem_euclid(two_pi))
    } else {
        Interval::new(arg_varphi, arg_varphi - (arg_varphi - peak).rem_euclid(two_pi))
    }
}

/// How each element is optimized inside an AO sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AoMode {
    /// Three-point quadratic fit over the trust region.
    QuadFit,
    /// Exhaustive search over this many equally spaced points of the trust region.
    Grid(usize),
}

fn grid_search(f: impl Fn(f64) -> f64, region: Interval, points: usize) -> QuadFit {
    let points = points.max(2);
    let mut best = QuadFit {
        theta: region.lo,
        value: f(region.lo),
    };
    for i in 1..points {
        let t = region.lo + (region.hi - region.lo) * i as f64 / (points - 1) as f64;
        let val = f(t);
        if val > best.value {
            best = QuadFit { theta: t, value: val };
        }
    }
    best
}

/// Output of the single-user (and weighted-gain) reflection solvers.
#[derive(Debug, Clone)]
pub struct SuOutcome {
    pub state: ReflectionState,
    pub gain: f64,
    pub trace: Vec<TracePoint>,
    pub status: SolveStatus,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// `sum_n |v_n - beta(theta_n) e^{j theta_n}|^2` at termination (penalty solver only).
    pub violation: f64,
}

/// Elementwise ascent on the gain, one full sweep over n = 1..N per iteration.
pub fn ao_solve(
    gain: &QuadraticGain,
    model: &PhaseShiftModel,
    init: &ReflectionState,
    tol: &SolverTolerances,
    mode: AoMode,
) -> SuOutcome {
    let n_el = gain.len();
    let mut theta = init.theta().to_vec();
    let start = init.under(model);
    let mut v = CVector::from_column_slice(start.v());
    let mut current = gain.gain(&v);
    let mut trace = vec![TracePoint {
        iter: 0,
        outer: 0,
        objective: current,
        violation: 0.0,
        mu: 0.0,
        nu: 0.0,
    }];
    let mut status = SolveStatus::MaxIterations;
    let mut sweeps = 0;

    for sweep in 1..=tol.max_inner {
        sweeps = sweep;
        let mut u = &gain.psi * &v;
        let threshold = ACCEPT_REL * current.abs();
        for n in 0..n_el {
            let cross = u[n] - gain.psi[(n, n)] * v[n];
            let sub = ElementSubproblem {
                psi_nn: gain.psi[(n, n)].re.max(0.0),
                varphi: (cross + gain.h_hat[n]) * 2.0,
                model: *model,
            };
            let f = |t: f64| sub.value(t);
            let region = amplitude_trust_region(sub.varphi.arg(), model);
            let cand = match mode {
                AoMode::QuadFit => quad_fit_extremum(f, region),
                AoMode::Grid(points) => grid_search(f, region, points),
            };
            if cand.value > f(theta[n]) + threshold {
                theta[n] = wrap_phase(cand.theta);
                let new_v = model.reflection_coefficient(theta[n]);
                let delta = new_v - v[n];
                for m in 0..n_el {
                    u[m] += gain.psi[(m, n)] * delta;
                }
                v[n] = new_v;
            }
        }
        let next = gain.gain(&v);
        trace.push(TracePoint {
            iter: sweep,
            outer: 0,
            objective: next,
            violation: 0.0,
            mu: 0.0,
            nu: 0.0,
        });
        let improvement = next - current;
        current = next;
        if improvement <= tol.eps1 * current.abs() {
            status = SolveStatus::Converged;
            break;
        }
    }
    SuOutcome {
        state: ReflectionState::from_theta(model, &theta),
        gain: current,
        trace,
        status,
        inner_iterations: sweeps,
        outer_iterations: 1,
        violation: 0.0,
    }
}

/// One CCCP step `(Psi v + h_hat + mu a) / mu`.
pub fn cccp_v_update(gain: &QuadraticGain, v: &CVector, a: &CVector, mu: f64) -> CVector {
    (&gain.psi * v + &gain.h_hat + a * Complex64::new(mu, 0.0)) / Complex64::new(mu, 0.0)
}

/// Penalized gain `gain(v) - mu ||v - a||^2`.
pub fn penalized_gain(gain: &QuadraticGain, v: &CVector, a: &CVector, mu: f64) -> f64 {
    gain.gain(v) - mu * (v - a).norm_squared()
}

fn max_abs(v: &CVector) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Runs CCCP on the v-subproblem from `v` until the penalized gain settles.
fn cccp_solve(gain: &QuadraticGain, mut v: CVector, a: &CVector, mu: f64) -> CVector {
    let bound = CCCP_GROWTH_BOUND * max_abs(a).max(1.0);
    let mut f = penalized_gain(gain, &v, a, mu);
    for _ in 0..CCCP_MAX_ITER {
        let next = cccp_v_update(gain, &v, a, mu);
        if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || max_abs(&next) > bound {
            break;
        }
        let f_next = penalized_gain(gain, &next, a, mu);
        v = next;
        let settled = (f_next - f).abs() <= CCCP_REL_TOL * f.abs();
        f = f_next;
        if settled {
            break;
        }
    }
    v
}

/// Region for the per-element target match `max 2 beta |v_n| cos(psi - theta) - beta^2`,
/// with `psi = arg(v_n)`. `None` when neither amplitude test is strict.
pub fn literal_matching_region(v_n: Complex64, model: &PhaseShiftModel, delta: f64) -> Option<Interval> {
    let psi = v_n.arg();
    let mag = v_n.norm();
    let sign = if psi >= 0.0 { 1.0 } else { -1.0 };
    let b0 = model.amplitude(psi);
    if 0.5 * (b0 + model.amplitude(psi + delta)) < mag {
        Some(Interval::new(psi, psi + sign * delta))
    } else if 0.5 * (b0 + model.amplitude(psi - delta)) > mag {
        Some(Interval::new(psi, psi - sign * delta))
    } else {
        None
    }
}

/// `literal_matching_region` with the side chosen by the direction in which the amplitude
/// rises, `+` between trough `phi - pi/2` and peak `phi + pi/2`. Both amplitude
/// tests look along that side. Coincides with `literal_matching_region` for `phi = pi/2`
/// and `arg(v_n) >= 0`.
pub fn amplitude_matching_region(v_n: Complex64, model: &PhaseShiftModel, delta: f64) -> Option<Interval> {
    let psi = v_n.arg();
    let mag = v_n.norm();
    let rise = if wrap_phase(psi - (model.phi() - FRAC_PI_2)) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let b0 = model.amplitude(psi);
    if 0.5 * (b0 + model.amplitude(psi + rise * delta)) < mag {
        Some(Interval::new(psi, psi + rise * delta))
    } else if 0.5 * (b0 + model.amplitude(psi - rise * delta)) > mag {
        Some(Interval::new(psi, psi - rise * delta))
    } else {
        None
    }
}

/// `2 beta(theta) |v_n| cos(arg(v_n) - theta) - beta(theta)^2`.
pub fn matching_objective(model: &PhaseShiftModel, v_n: Complex64, theta: f64) -> f64 {
    let b = model.amplitude(theta);
    2.0 * b * v_n.norm() * (v_n.arg() - theta).cos() - b * b
}

/// Best of the quadratic-fit candidate, `arg(v_n)` and the incumbent phase.
pub fn theta_element_update(model: &PhaseShiftModel, v_n: Complex64, current: f64, delta: f64) -> f64 {
    let f = |t: f64| matching_objective(model, v_n, t);
    let mut best = (current, f(current));
    let psi = v_n.arg();
    let mut candidates = vec![psi];
    if let Some(region) = amplitude_matching_region(v_n, model, delta) {
        candidates.push(quad_fit_extremum(f, region).theta);
    }
    for t in candidates {
        let t = wrap_phase(t);
        let val = f(t);
        if val > best.1 {
            best = (t, val);
        }
    }
    best.0
}

/// Independent per-element phase updates towards the unconstrained `v`.
pub fn theta_update(v: &CVector, theta: &[f64], model: &PhaseShiftModel, delta: f64) -> Vec<f64> {
    v.iter()
        .zip(theta)
        .map(|(&vn, &t)| theta_element_update(model, vn, t, delta))
        .collect()
}

/// Penalty coefficients and trust-region width for the penalty solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySchedule {
    /// Initial coefficient on the reflection-consistency penalty.
    pub mu0: f64,
    /// Initial coefficient on the auxiliary-signal penalty (multiuser only).
    pub nu0: f64,
    pub growth: f64,
    pub delta: f64,
}

impl PenaltySchedule {
    pub fn single_user() -> Self {
        Self {
            mu0: 1e-15,
            nu0: 10.0,
            growth: 1.3,
            delta: 0.05,
        }
    }

    pub fn multiuser() -> Self {
        Self {
            mu0: 1e-14,
            nu0: 10.0,
            growth: 1.3,
            delta: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu0 > 0.0 && self.nu0 > 0.0 && self.growth > 1.0 && self.delta > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid penalty schedule {self:?}")))
        }
    }
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self::single_user()
    }
}

fn targets(model: &PhaseShiftModel, theta: &[f64]) -> CVector {
    CVector::from_iterator(theta.len(), theta.iter().map(|&t| model.reflection_coefficient(t)))
}

/// Penalty method: CCCP on v, per-element phase matching, escalating mu.
pub fn penalty_solve(
    gain: &QuadraticGain,
    model: &PhaseShiftModel,
    init: &ReflectionState,
    schedule: &PenaltySchedule,
    tol: &SolverTolerances,
) -> SuOutcome {
    let mut theta = init.theta().to_vec();
    let mut a = targets(model, &theta);
    let mut v = a.clone();
    let mut mu = schedule.mu0;
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut inner_total = 0;
    let mut outer_done = 0;
    let mut violation = 0.0;

    for outer in 1..=tol.max_outer {
        outer_done = outer;
        let mut prev = penalized_gain(gain, &v, &a, mu);
        trace.push(TracePoint {
            iter: 0,
            outer,
            objective: prev,
            violation: (&v - &a).norm_squared(),
            mu,
            nu: 0.0,
        });
        for inner in 1..=tol.max_inner {
            inner_total += 1;
            v = cccp_solve(gain, v, &a, mu);
            theta = theta_update(&v, &theta, model, schedule.delta);
            a = targets(model, &theta);
            let obj = penalized_gain(gain, &v, &a, mu);
            let viol = (&v - &a).norm_squared();
            trace.push(TracePoint {
                iter: inner,
                outer,
                objective: obj,
                violation: viol,
                mu,
                nu: 0.0,
            });
            let settled = (obj - prev) <= tol.eps1 * prev.abs();
            prev = obj;
            if settled {
                break;
            }
        }
        violation = (&v - &a).norm_squared();
        if violation < tol.eps2 {
            status = SolveStatus::Converged;
            break;
        }
        mu *= schedule.growth;
    }
    let state = ReflectionState::from_theta(model, &theta);
    SuOutcome {
        gain: gain.gain_of(&state),
        state,
        trace,
        status,
        inner_iterations: inner_total,
        outer_iterations: outer_done,
        violation,
    }
}

/// `{0, dtheta, ..., dtheta (U - 1)}` wrapped to `[-pi, pi)`, `U = 2^bits`.
pub fn discrete_phase_set(bits: u32) -> Result<Vec<f64>> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidParameter(format!(
            "phase resolution must be 1..=16 bits, got {bits}"
        )));
    }
    let u = 1usize << bits;
    let step = 2.0 * PI / u as f64;
    Ok((0..u).map(|i| wrap_phase(step * i as f64)).collect())
}

/// AO sweeps where each phase is picked exhaustively from a discrete set.
/// Phases are selected with the amplitudes of `model`; callers evaluate the
/// returned phases under whichever model the hardware actually follows.
pub fn discrete_phase_search(
    gain: &QuadraticGain,
    model: &PhaseShiftModel,
    bits: u32,
    init: &ReflectionState,
    tol: &SolverTolerances,
) -> Result<SuOutcome> {
    let levels = discrete_phase_set(bits)?;
    let quantize = |t: f64| {
        *levels
            .iter()
            .min_by(|a, b| wrap_phase(*a - t).abs().total_cmp(&wrap_phase(*b - t).abs()))
            .expect("non-empty level set")
    };
    let mut theta: Vec<f64> = init.theta().iter().map(|&t| quantize(t)).collect();
    let mut v = targets(model, &theta);
    let mut current = gain.gain(&v);
    let mut trace = vec![TracePoint {
        iter: 0,
        outer: 0,
        objective: current,
        violation: 0.0,
        mu: 0.0,
        nu: 0.0,
    }];
    let mut status = SolveStatus::MaxIterations;
    let mut sweeps = 0;
    let coeffs: Vec<Complex64> = levels.iter().map(|&t| model.reflection_coefficient(t)).collect();

    for sweep in 1..=tol.max_inner {
        sweeps = sweep;
        let mut u = &gain.psi * &v;
        let threshold = ACCEPT_REL * current.abs();
        let mut changed = false;
        for n in 0..gain.len() {
            let sub = ElementSubproblem {
                psi_nn: gain.psi[(n, n)].re.max(0.0),
                varphi: (u[n] - gain.psi[(n, n)] * v[n] + gain.h_hat[n]) * 2.0,
                model: *model,
            };
            let incumbent = sub.value(theta[n]);
            let mut best = (theta[n], incumbent);
            for &t in &levels {
                let val = sub.value(t);
                if val > best.1 {
                    best = (t, val);
                }
            }
            if best.1 > incumbent + threshold {
                let idx = levels.iter().position(|&t| t == best.0).expect("level from set");
                let delta = coeffs[idx] - v[n];
                for m in 0..gain.len() {
                    u[m] += gain.psi[(m, n)] * delta;
                }
                v[n] = coeffs[idx];
                theta[n] = best.0;
                changed = true;
            }
        }
        let next = gain.gain(&v);
        trace.push(TracePoint {
            iter: sweep,
            outer: 0,
            objective: next,
            violation: 0.0,
            mu: 0.0,
            nu: 0.0,
        });
        let improvement = next - current;
        current = next;
        if !changed || improvement <= tol.eps1 * current.abs() {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SuOutcome {
        state: ReflectionState::from_theta(model, &theta),
        gain: current,
        trace,
        status,
        inner_iterations: sweeps,
        outer_iterations: 1,
        violation: 0.0,
    })
}

/// Every phase drawn independently from `{pi, -pi}` (both wrap to `-pi`,
/// the full-amplitude point of the practical model).
pub fn initial_state<R: Rng + ?Sized>(model: &PhaseShiftModel, n: usize, rng: &mut R) -> ReflectionState {
    let theta: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { PI } else { -PI }).collect();
    ReflectionState::from_theta(model, &theta)
}

/// Co-phasing of every reflected path with the direct link for a single
/// antenna: `theta_n = arg(G_n1) - arg(h_r,n) + arg(h_d)`.
pub fn ideal_alignment(channels: &ChannelSet) -> Result<Vec<f64>> {
    if channels.antennas() != 1 || channels.users() != 1 {
        return Err(Error::DimensionMismatch(
            "closed-form alignment needs M = 1 and K = 1".into(),
        ));
    }
    let hd = channels.h_d[0][0].arg();
    Ok((0..channels.elements())
        .map(|n| wrap_phase(channels.g[(n, 0)].arg() - channels.h_r[0][n].arg() + hd))
        .collect())
}
