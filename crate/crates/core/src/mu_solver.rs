//! Multiuser joint transmit and reflect beamforming.
//!
//! The extended penalty solver relaxes `h_k^H w_j = x_kj` and `v_n = beta e^{j theta_n}`
//! into penalties with coefficients `nu` and `mu` and runs block coordinate
//! descent over `(w, v, theta, x)`. The two-stage solver fixes the reflection
//! by maximizing a weighted sum of channel gains and then applies the
//! MMSE precoder obtained through uplink-downlink duality.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::channel::{
    all_sinr, apply_row, total_power, BeamformingSolution, CMatrix, CVector, ChannelSet, SolveStatus, TracePoint,
};
use crate::error::{Error, Result};
use crate::numopt::{bisect_root, fixed_point, SolverTolerances};
use crate::phasemodel::{PhaseShiftModel, ReflectionState};
use crate::su_solver::{
    mrt_beamformer, penalty_solve, required_power, theta_update, PenaltySchedule, QuadraticGain, SuOutcome,
};

/// Relative SINR shortfall still reported as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-3;
/// Outer rounds over which the transmit power must be flat to count as converged.
const STAGNATION_ROUNDS: usize = 3;
const STAGNATION_REL: f64 = 1e-6;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn hermitian_solve(a: CMatrix, b: &CMatrix) -> Result<CMatrix> {
    match Cholesky::new(a.clone()) {
        Some(ch) => Ok(ch.solve(b)),
        None => a
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Infeasible("singular system in block update".into())),
    }
}

/// `w_k = nu (I + nu sum_i h_i h_i^H)^{-1} sum_j h_j x_jk`, all users at once.
pub fn w_update(rows: &[CVector], x: &CMatrix, nu: f64) -> Vec<CVector> {
    let k = rows.len();
    let m = rows[0].len();
    let mut a = CMatrix::identity(m, m);
    // column m of H is h_m = conj(row_m)
    let h = CMatrix::from_fn(m, k, |i, j| rows[j][i].conj());
    a += &h * h.adjoint() * c(nu);
    let rhs = &h * x * c(nu);
    let sol = hermitian_solve(a, &rhs).expect("identity plus PSD is invertible");
    (0..k).map(|j| sol.column(j).into_owned()).collect()
}

/// Per-user composite matrices `Phi_k = diag(h_r,k^H) G`.
fn composites(channels: &ChannelSet) -> Vec<CMatrix> {
    (0..channels.users()).map(|k| channels.composite(k)).collect()
}

fn rows_for(phis: &[CMatrix], h_d: &[CVector], v: &CVector) -> Vec<CVector> {
    let vc = v.conjugate();
    phis.iter()
        .zip(h_d)
        .map(|(p, hd)| p.transpose() * &vc + hd.conjugate())
        .collect()
}

/// Exact minimizer of `mu ||v - a||^2 + nu sum_kj |v^H d_kj - C_kj|^2` with
/// `d_kj = Phi_k w_j` and `C_kj = x_kj - h_d,k^H w_j`.
pub fn v_update(channels: &ChannelSet, w: &[CVector], x: &CMatrix, a: &CVector, mu: f64, nu: f64) -> CVector {
    v_update_with(&composites(channels), &channels.h_d, w, x, a, mu, nu)
}

fn v_update_with(
    phis: &[CMatrix],
    h_d: &[CVector],
    w: &[CVector],
    x: &CMatrix,
    a: &CVector,
    mu: f64,
    nu: f64,
) -> CVector {
    let n = a.len();
    let mut lhs = CMatrix::identity(n, n) * c(mu);
    let mut rhs = a * c(mu);
    for (k, phi) in phis.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            let d = phi * wj;
            let cbar = x[(k, j)] - h_d[k].dotc(wj);
            lhs += &d * d.adjoint() * c(nu);
            rhs += &d * (cbar.conj() * nu);
        }
    }
    let sol =
        hermitian_solve(lhs, &CMatrix::from_column_slice(n, 1, rhs.as_slice())).expect("mu I plus PSD is invertible");
    sol.column(0).into_owned()
}

/// Result of the auxiliary-signal projection.
#[derive(Debug, Clone)]
pub struct XUpdate {
    /// Row k holds `x_k1 .. x_kK` of user k.
    pub x: CMatrix,
    pub lambda: Vec<f64>,
    /// Users whose desired signal vanished while the constraint was violated.
    pub infeasible: Vec<usize>,
}

impl XUpdate {
    pub fn check(&self) -> Result<()> {
        match self.infeasible.first() {
            Some(&k) => Err(Error::UserInfeasible(k)),
            None => Ok(()),
        }
    }
}

/// `|x_kk|^2 / (sum_{j != k} |x_kj|^2 + sigma2)`.
pub fn aux_sinr(x: &CMatrix, sigma2: &[f64], k: usize) -> f64 {
    let interference: f64 = (0..x.ncols()).filter(|&j| j != k).map(|j| x[(k, j)].norm_sqr()).sum();
    x[(k, k)].norm_sqr() / (interference + sigma2[k])
}

/// Projects each row of `[h_k^H w_j]` onto its SINR constraint.
pub fn x_update(rows: &[CVector], w: &[CVector], gamma: &[f64], sigma2: &[f64], eps3: f64) -> XUpdate {
    let k_users = rows.len();
    let mut x = CMatrix::zeros(k_users, k_users);
    let mut lambda = vec![0.0; k_users];
    let mut infeasible = Vec::new();
    for k in 0..k_users {
        let a: Vec<Complex64> = w.iter().map(|wj| apply_row(&rows[k], wj)).collect();
        let (g, s2) = (gamma[k], sigma2[k]);
        let desired = a[k].norm_sqr();
        let interf: f64 = (0..k_users).filter(|&j| j != k).map(|j| a[j].norm_sqr()).sum();
        if desired >= g * (interf + s2) {
            for j in 0..k_users {
                x[(k, j)] = a[j];
            }
            continue;
        }
        if desired == 0.0 {
            // Limit lambda -> 1: interference shrinks by 1/(1+gamma), desired term
            // takes the smallest magnitude meeting the constraint with zero phase.
            infeasible.push(k);
            lambda[k] = 1.0;
            let mut leak = 0.0;
            for j in (0..k_users).filter(|&j| j != k) {
                x[(k, j)] = a[j] / (1.0 + g);
                leak += x[(k, j)].norm_sqr();
            }
            x[(k, k)] = c((g * (leak + s2)).sqrt());
            continue;
        }
        let fun = |l: f64| desired / ((1.0 - l) * (1.0 - l)) - g * interf / ((1.0 + l * g) * (1.0 + l * g)) - g * s2;
        let hi = 1.0 - 0.5 * (desired / (g * (interf + s2))).sqrt();
        let l = match bisect_root(fun, 0.0, hi, eps3) {
            Ok(b) => {
                if b.g_hi >= 0.0 {
                    b.hi
                } else {
                    b.lo
                }
            }
            Err(_) => hi,
        };
        lambda[k] = l;
        for j in 0..k_users {
            x[(k, j)] = if j == k { a[j] / (1.0 - l) } else { a[j] / (1.0 + l * g) };
        }
    }
    XUpdate { x, lambda, infeasible }
}

/// MMSE precoder for row-form channels: beamformers and per-user powers.
pub fn mmse_precoder(
    rows: &[CVector],
    gamma: &[f64],
    sigma2: &[f64],
    tol: &SolverTolerances,
) -> Result<(Vec<CVector>, Vec<f64>)> {
    let k_users = rows.len();
    if k_users == 0 || gamma.len() != k_users || sigma2.len() != k_users {
        return Err(Error::DimensionMismatch("mmse precoder inputs".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| !(r.norm_squared() > 0.0)) {
        return Err(Error::Infeasible("zero channel".into()));
    }
    let h = CMatrix::from_fn(m, k_users, |i, j| rows[j][i].conj());

    let system = |rho: &[f64]| {
        let mut a = CMatrix::identity(m, m);
        for i in 0..k_users {
            let hi = h.column(i);
            a += hi * hi.adjoint() * c(rho[i] / sigma2[i]);
        }
        a
    };
    let map = |rho: &[f64]| {
        let a = system(rho);
        let ainv_h = match hermitian_solve(a, &h) {
            Ok(s) => s,
            Err(_) => return vec![f64::NAN; k_users],
        };
        (0..k_users)
            .map(|k| {
                let q = h.column(k).dotc(&ainv_h.column(k)).re;
                sigma2[k] / ((1.0 + 1.0 / gamma[k]) * q)
            })
            .collect()
    };
    let fp = fixed_point(map, sigma2, tol.fixed_point_tol, tol.max_fixed_point)
        .map_err(|e| Error::Infeasible(format!("dual power iteration: {e}")))?;
    let ainv_h = hermitian_solve(system(&fp.x), &h)?;
    let dirs: Vec<CVector> = (0..k_users)
        .map(|k| {
            let col = ainv_h.column(k).into_owned();
            let norm = col.norm();
            col / c(norm)
        })
        .collect();

    let powers = power_control(rows, &dirs, gamma, sigma2)
        .ok_or_else(|| Error::Infeasible("no positive power allocation".into()))?;
    let w = dirs.iter().zip(&powers).map(|(d, &pk)| d * c(pk.sqrt())).collect();
    Ok((w, powers))
}

/// Powers meeting every SINR target with equality for fixed beam directions,
/// `p = Q^{-1} sigma^2`. `None` if no positive allocation exists.
pub fn power_control(rows: &[CVector], dirs: &[CVector], gamma: &[f64], sigma2: &[f64]) -> Option<Vec<f64>> {
    let k_users = rows.len();
    let mut q = CMatrix::zeros(k_users, k_users);
    for i in 0..k_users {
        for j in 0..k_users {
            let g = apply_row(&rows[i], &dirs[j]).norm_sqr();
            q[(i, j)] = if i == j { c(g / gamma[i]) } else { c(-g) };
        }
    }
    let rhs = CMatrix::from_fn(k_users, 1, |i, _| c(sigma2[i]));
    let p = q.lu().solve(&rhs)?;
    let powers: Vec<f64> = p.iter().map(|z| z.re).collect();
    if powers.iter().all(|&x| x > 0.0 && x.is_finite()) {
        Some(powers)
    } else {
        None
    }
}

/// Reflection design maximizing `sum_k ||h_k||^2 / (gamma_k sigma_k^2)` with the
/// single-user penalty machinery applied to the summed quadratic form.
pub fn weighted_gain_solve(
    channels: &ChannelSet,
    model: &PhaseShiftModel,
    init: &ReflectionState,
    schedule: &PenaltySchedule,
    tol: &SolverTolerances,
) -> Result<SuOutcome> {
    let weights: Vec<f64> = channels
        .gamma
        .iter()
        .zip(&channels.sigma2)
        .map(|(g, s)| 1.0 / (g * s))
        .collect();
    let gain = QuadraticGain::weighted(channels, &weights)?;
    Ok(penalty_solve(&gain, model, init, schedule, tol))
}

/// Weighted-gain reflection followed by the MMSE precoder.
pub fn two_stage_solve(
    channels: &ChannelSet,
    model: &PhaseShiftModel,
    init: &ReflectionState,
    schedule: &PenaltySchedule,
    tol: &SolverTolerances,
) -> Result<BeamformingSolution> {
    let stage1 = weighted_gain_solve(channels, model, init, schedule, tol)?;
    let rows = channels.effective_rows(stage1.state.v());
    let (w, _) = mmse_precoder(&rows, &channels.gamma, &channels.sigma2, tol)?;
    let mut sol = BeamformingSolution::evaluate(channels, stage1.state, w, SolveStatus::Converged);
    if stage1.status != SolveStatus::Converged {
        sol.status = stage1.status;
    }
    if !sol.meets_targets(&channels.gamma, FEASIBILITY_TOL) {
        sol.status = SolveStatus::Infeasible;
    }
    sol.trace = stage1.trace;
    sol.inner_iterations = stage1.inner_iterations;
    sol.outer_iterations = stage1.outer_iterations;
    Ok(sol)
}

/// MMSE precoder on the direct links only.
pub fn no_irs_baseline(channels: &ChannelSet, tol: &SolverTolerances) -> Result<BeamformingSolution> {
    let rows = channels.direct_rows();
    let (w, _) = mmse_precoder(&rows, &channels.gamma, &channels.sigma2, tol)?;
    let sinr = all_sinr(&w, &rows, &channels.sigma2);
    let mut sol = BeamformingSolution {
        total_power: total_power(&w),
        w,
        reflection: ReflectionState::from_theta(&PhaseShiftModel::ideal(), &[]),
        sinr,
        trace: Vec::new(),
        status: SolveStatus::Converged,
        inner_iterations: 0,
        outer_iterations: 0,
        power_correction: 0.0,
    };
    if !sol.meets_targets(&channels.gamma, FEASIBILITY_TOL) {
        sol.status = SolveStatus::Infeasible;
    }
    Ok(sol)
}

/// Variables of the penalized multiuser problem.
#[derive(Debug, Clone)]
pub struct MultiuserPenaltyState {
    pub w: Vec<CVector>,
    pub v: CVector,
    pub theta: Vec<f64>,
    pub x: CMatrix,
    pub mu: f64,
    pub nu: f64,
}

struct Problem<'a> {
    channels: &'a ChannelSet,
    phis: Vec<CMatrix>,
    model: &'a PhaseShiftModel,
}

impl Problem<'_> {
    fn rows(&self, v: &CVector) -> Vec<CVector> {
        rows_for(&self.phis, &self.channels.h_d, v)
    }

    fn targets(&self, theta: &[f64]) -> CVector {
        CVector::from_iterator(theta.len(), theta.iter().map(|&t| self.model.reflection_coefficient(t)))
    }

    /// `sum_kj |h_k^H w_j - x_kj|^2`, optionally divided by `sigma_k^2`.
    fn x_residual(&self, rows: &[CVector], w: &[CVector], x: &CMatrix, normalised: bool) -> f64 {
        let mut acc = 0.0;
        for (k, row) in rows.iter().enumerate() {
            let scale = if normalised { 1.0 / self.channels.sigma2[k] } else { 1.0 };
            for (j, wj) in w.iter().enumerate() {
                acc += scale * (apply_row(row, wj) - x[(k, j)]).norm_sqr();
            }
        }
        acc
    }

    fn objective(&self, s: &MultiuserPenaltyState) -> f64 {
        let a = self.targets(&s.theta);
        let rows = self.rows(&s.v);
        total_power(&s.w) + s.mu * (&s.v - a).norm_squared() + s.nu * self.x_residual(&rows, &s.w, &s.x, false)
    }
}

fn initial_beamformers(rows: &[CVector], channels: &ChannelSet, tol: &SolverTolerances) -> Vec<CVector> {
    match mmse_precoder(rows, &channels.gamma, &channels.sigma2, tol) {
        Ok((w, _)) => w,
        Err(_) => rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                required_power(r, channels.gamma[k], channels.sigma2[k])
                    .and_then(|p| mrt_beamformer(r, p))
                    .unwrap_or_else(|_| CVector::zeros(r.len()))
            })
            .collect(),
    }
}

/// Block coordinate descent over `(w, v, theta, x)` with escalating penalties.
pub fn extended_penalty_solve(
    channels: &ChannelSet,
    model: &PhaseShiftModel,
    init: &ReflectionState,
    schedule: &PenaltySchedule,
    tol: &SolverTolerances,
) -> BeamformingSolution {
    let prob = Problem {
        channels,
        phis: composites(channels),
        model,
    };
    let theta = init.theta().to_vec();
    let v = prob.targets(&theta);
    let rows = prob.rows(&v);
    let w = initial_beamformers(&rows, channels, tol);
    let x = x_update(&rows, &w, &channels.gamma, &channels.sigma2, tol.eps3).x;
    let mut s = MultiuserPenaltyState {
        w,
        v,
        theta,
        x,
        mu: schedule.mu0,
        nu: schedule.nu0,
    };

    let mut trace = Vec::new();
    let mut inner_total = 0;
    let mut outer_done = 0;
    let mut powers: Vec<f64> = Vec::new();
    let mut converged = false;

    for outer in 1..=tol.max_outer {
        outer_done = outer;
        let mut prev = prob.objective(&s);
        let violation = |s: &MultiuserPenaltyState| {
            let rows = prob.rows(&s.v);
            (&s.v - prob.targets(&s.theta)).norm_squared() + prob.x_residual(&rows, &s.w, &s.x, true)
        };
        trace.push(TracePoint {
            iter: 0,
            outer,
            objective: prev,
            violation: violation(&s),
            mu: s.mu,
            nu: s.nu,
        });
        for inner in 1..=tol.max_inner {
            inner_total += 1;
            let mut current = prev;
            // Each block step is kept only if it does not increase the objective.
            let mut attempt = |s: &mut MultiuserPenaltyState, cand: MultiuserPenaltyState| {
                let val = prob.objective(&cand);
                if val <= current {
                    *s = cand;
                    current = val;
                }
            };

            let rows = prob.rows(&s.v);
            let cand = MultiuserPenaltyState {
                w: w_update(&rows, &s.x, s.nu),
                ..s.clone()
            };
            attempt(&mut s, cand);

            let a = prob.targets(&s.theta);
            let v_new = v_update_with(&prob.phis, &channels.h_d, &s.w, &s.x, &a, s.mu, s.nu);
            let cand = MultiuserPenaltyState { v: v_new, ..s.clone() };
            attempt(&mut s, cand);

            let th = theta_update(&s.v, &s.theta, model, schedule.delta);
            let cand = MultiuserPenaltyState { theta: th, ..s.clone() };
            attempt(&mut s, cand);

            let rows = prob.rows(&s.v);
            let xu = x_update(&rows, &s.w, &channels.gamma, &channels.sigma2, tol.eps3);
            let cand = MultiuserPenaltyState { x: xu.x, ..s.clone() };
            attempt(&mut s, cand);

            trace.push(TracePoint {
                iter: inner,
                outer,
                objective: current,
                violation: violation(&s),
                mu: s.mu,
                nu: s.nu,
            });
            let settled = prev - current <= tol.eps1 * prev.abs();
            prev = current;
            if settled {
                break;
            }
        }

        let rows = prob.rows(&s.v);
        let viol_v = (&s.v - prob.targets(&s.theta)).norm_squared();
        let viol_x = prob.x_residual(&rows, &s.w, &s.x, true);
        powers.push(total_power(&s.w));
        if viol_v < tol.eps2 && viol_x < tol.eps2 {
            converged = true;
            break;
        }
        if powers.len() > STAGNATION_ROUNDS {
            let recent = &powers[powers.len() - STAGNATION_ROUNDS - 1..];
            let flat = recent
                .windows(2)
                .all(|p| (p[1] - p[0]).abs() <= STAGNATION_REL * p[1].abs());
            let state = ReflectionState::from_theta(model, &s.theta);
            let true_rows = channels.effective_rows(state.v());
            let feasible = all_sinr(&s.w, &true_rows, &channels.sigma2)
                .iter()
                .zip(&channels.gamma)
                .all(|(&q, &g)| q >= g * (1.0 - FEASIBILITY_TOL));
            if flat && feasible {
                converged = true;
                break;
            }
        }
        s.mu *= schedule.growth;
        s.nu *= schedule.growth;
    }

    let state = ReflectionState::from_theta(model, &s.theta);
    let status = if converged {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    let raw_power = total_power(&s.w);
    // Penalties only enforce the SINR constraints in the limit. Two exact repairs on
    // the realized reflection: rescale the BCD beam directions, or replace them by the
    // MMSE precoder, which is power-optimal for fixed reflection. Keep the cheaper.
    let true_rows = channels.effective_rows(state.v());
    let dirs: Vec<CVector> =
        s.w.iter()
            .map(|w| if w.norm() > 0.0 { w / c(w.norm()) } else { w.clone() })
            .collect();
    let rescaled = power_control(&true_rows, &dirs, &channels.gamma, &channels.sigma2).map(|p| {
        dirs.iter()
            .zip(&p)
            .map(|(d, &pk)| d * c(pk.sqrt()))
            .collect::<Vec<CVector>>()
    });
    let mmse = mmse_precoder(&true_rows, &channels.gamma, &channels.sigma2, tol)
        .ok()
        .map(|(w, _)| w);
    let repaired = match (rescaled, mmse) {
        (Some(a), Some(b)) => Some(if total_power(&b) < total_power(&a) { b } else { a }),
        (a, b) => a.or(b),
    };
    let mut correction = 0.0;
    let w = match repaired {
        Some(w) => {
            correction = total_power(&w) / raw_power - 1.0;
            w
        }
        None => s.w,
    };
    let mut sol = BeamformingSolution::evaluate(channels, state, w, status);
    sol.power_correction = correction;
    if !sol.meets_targets(&channels.gamma, FEASIBILITY_TOL) {
        sol.status = SolveStatus::Infeasible;
    }
    sol.trace = trace;
    sol.inner_iterations = inner_total;
    sol.outer_iterations = outer_done;
    sol
}
