//! Channel realizations, effective channels and link metrics.
//!
//! Geometry: the AP reference antenna sits at `(d_x, 0, 0)`, the IRS reference
//! element at `(0, d_y, 0)`, and users are dropped uniformly on the disk of
//! radius `r` centred at `(d_x, d, 0)` in the `z = 0` plane. Every link is
//! i.i.d. Rayleigh with variance equal to its distance-based path loss.
//!
//! Effective channels are carried in *row form*: the entries of
//! `h_k^H = v^H Phi_k + h_{d,k}^H`, so that `h_k^H w = sum_m row[m] w[m]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::phasemodel::ReflectionState;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Deployment geometry and large-scale propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemGeometry {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub d_x: f64,
    pub d_y: f64,
    pub d: f64,
    pub r: f64,
    pub pl_ref_db: f64,
    pub exp_ap_irs: f64,
    pub exp_irs_user: f64,
    pub exp_ap_user: f64,
    /// IRS elements along the y axis. Layout only; the fading model ignores it.
    pub n_y: usize,
    /// Antenna/element spacing in meters. Layout only.
    pub spacing_m: f64,
}

impl Default for SystemGeometry {
    fn default() -> Self {
        Self {
            m: 4,
            n: 40,
            k: 1,
            d_x: 2.0,
            d_y: 400.0,
            d: 400.0,
            r: 0.0,
            pl_ref_db: 40.0,
            exp_ap_irs: 2.2,
            exp_irs_user: 2.8,
            exp_ap_user: 3.8,
            n_y: 5,
            spacing_m: 0.0625,
        }
    }
}

impl SystemGeometry {
    /// Multiuser deployment: four users on a 2.5 m cluster, 3.5 m AP offset.
    pub fn multiuser() -> Self {
        Self {
            m: 4,
            n: 40,
            k: 4,
            d_x: 3.5,
            r: 2.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::InvalidParameter(
                "antenna, element and user counts must be >= 1".into(),
            ));
        }
        let ok = [self.d_x, self.d_y, self.d, self.pl_ref_db]
            .iter()
            .all(|v| v.is_finite())
            && self.r.is_finite()
            && self.r >= 0.0
            && [self.exp_ap_irs, self.exp_irs_user, self.exp_ap_user]
                .iter()
                .all(|e| e.is_finite() && *e >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid geometry {self:?}")))
        }
    }

    pub fn ap_position(&self) -> [f64; 3] {
        [self.d_x, 0.0, 0.0]
    }

    pub fn irs_position(&self) -> [f64; 3] {
        [0.0, self.d_y, 0.0]
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Linear power gain `10^(-pl_ref_db/10) * distance^(-exponent)`.
pub fn path_loss(distance: f64, exponent: f64, pl_ref_db: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::NonPositiveDistance(distance));
    }
    Ok(10f64.powf(-pl_ref_db / 10.0) * distance.powf(-exponent))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// One realization of all links, noise powers and SINR targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// AP to user, length M each.
    pub h_d: Vec<CVector>,
    /// IRS to user, length N each.
    pub h_r: Vec<CVector>,
    /// AP to IRS, N x M.
    pub g: CMatrix,
    pub sigma2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub user_positions: Vec<[f64; 3]>,
}

impl ChannelSet {
    pub fn new(h_d: Vec<CVector>, h_r: Vec<CVector>, g: CMatrix, sigma2: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let k = h_d.len();
        let (n, m) = g.shape();
        let consistent = h_r.len() == k
            && sigma2.len() == k
            && gamma.len() == k
            && h_d.iter().all(|h| h.len() == m)
            && h_r.iter().all(|h| h.len() == n);
        if !consistent || k == 0 {
            return Err(Error::DimensionMismatch(format!(
                "K={k}, G {n}x{m}, h_r {}, sigma2 {}, gamma {}",
                h_r.len(),
                sigma2.len(),
                gamma.len()
            )));
        }
        if sigma2.iter().chain(&gamma).any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParameter(
                "noise powers and SINR targets must be > 0".into(),
            ));
        }
        Ok(Self {
            h_d,
            h_r,
            g,
            sigma2,
            gamma,
            user_positions: vec![[0.0; 3]; k],
        })
    }

    pub fn users(&self) -> usize {
        self.h_d.len()
    }

    pub fn antennas(&self) -> usize {
        self.g.ncols()
    }

    pub fn elements(&self) -> usize {
        self.g.nrows()
    }

    /// Restriction to a subset of users, in the given order.
    pub fn subset(&self, users: &[usize]) -> Self {
        Self {
            h_d: users.iter().map(|&k| self.h_d[k].clone()).collect(),
            h_r: users.iter().map(|&k| self.h_r[k].clone()).collect(),
            g: self.g.clone(),
            sigma2: users.iter().map(|&k| self.sigma2[k]).collect(),
            gamma: users.iter().map(|&k| self.gamma[k]).collect(),
            user_positions: users.iter().map(|&k| self.user_positions[k]).collect(),
        }
    }

    pub fn composite(&self, k: usize) -> CMatrix {
        composite_matrix(&self.h_r[k], &self.g)
    }

    /// Row-form effective channels of every user for reflection vector `v`.
    pub fn effective_rows(&self, v: &[Complex64]) -> Vec<CVector> {
        let v = CVector::from_column_slice(v);
        (0..self.users())
            .map(|k| effective_channel(&v, &self.composite(k), &self.h_d[k]))
            .collect()
    }

    /// Rows of the direct links alone.
    pub fn direct_rows(&self) -> Vec<CVector> {
        self.h_d.iter().map(|h| h.conjugate()).collect()
    }

    /// FNV-1a digest over every channel coefficient and target.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for c in self
            .g
            .iter()
            .chain(self.h_d.iter().flatten())
            .chain(self.h_r.iter().flatten())
        {
            feed(c.re);
            feed(c.im);
        }
        for &x in self.sigma2.iter().chain(&self.gamma) {
            feed(x);
        }
        h
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the independent stream used for trial `index` under `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn cn(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draws one channel realization.
///
/// Draw order for a given seed: user positions (radius, angle per user), then
/// `G` row by row, then `h_d` and `h_r` for each user in turn.
pub fn generate_channels(geom: &SystemGeometry, sigma2: &[f64], gamma: &[f64], seed: u64) -> Result<ChannelSet> {
    geom.validate()?;
    if sigma2.len() != geom.k || gamma.len() != geom.k {
        return Err(Error::DimensionMismatch(format!(
            "K={} but {} noise powers and {} targets",
            geom.k,
            sigma2.len(),
            gamma.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 3]> = (0..geom.k)
        .map(|_| {
            let rad = geom.r * rng.random::<f64>().sqrt();
            let ang = 2.0 * PI * rng.random::<f64>();
            [geom.d_x + rad * ang.cos(), geom.d + rad * ang.sin(), 0.0]
        })
        .collect();

    let (ap, irs) = (geom.ap_position(), geom.irs_position());
    let pl_g = path_loss(distance(ap, irs), geom.exp_ap_irs, geom.pl_ref_db)?;
    let g = CMatrix::from_fn(geom.n, geom.m, |_, _| Complex64::new(0.0, 0.0));
    let mut g = g;
    for i in 0..geom.n {
        for j in 0..geom.m {
            g[(i, j)] = cn(&mut rng, pl_g);
        }
    }

    let mut h_d = Vec::with_capacity(geom.k);
    let mut h_r = Vec::with_capacity(geom.k);
    for p in &positions {
        let pl_d = path_loss(distance(ap, *p), geom.exp_ap_user, geom.pl_ref_db)?;
        let pl_r = path_loss(distance(irs, *p), geom.exp_irs_user, geom.pl_ref_db)?;
        h_d.push(CVector::from_iterator(geom.m, (0..geom.m).map(|_| cn(&mut rng, pl_d))));
        h_r.push(CVector::from_iterator(geom.n, (0..geom.n).map(|_| cn(&mut rng, pl_r))));
    }
    let mut set = ChannelSet::new(h_d, h_r, g, sigma2.to_vec(), gamma.to_vec())?;
    set.user_positions = positions;
    Ok(set)
}

/// `Phi_k = diag(h_r^H) G`.
pub fn composite_matrix(h_r: &CVector, g: &CMatrix) -> CMatrix {
    let mut phi = g.clone();
    for (n, mut row) in phi.row_iter_mut().enumerate() {
        row *= h_r[n].conj();
    }
    phi
}

/// Row-form effective channel `v^H Phi + h_d^H`.
pub fn effective_channel(v: &CVector, phi: &CMatrix, h_d: &CVector) -> CVector {
    phi.transpose() * v.conjugate() + h_d.conjugate()
}

/// `h^H w` for a row-form channel.
pub fn apply_row(row: &CVector, w: &CVector) -> Complex64 {
    row.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// SINR of user `k` under beamformers `w` and row-form channels `rows`.
pub fn sinr(w: &[CVector], rows: &[CVector], sigma2: &[f64], k: usize) -> f64 {
    let row = &rows[k];
    let signal = apply_row(row, &w[k]).norm_sqr();
    let interference: f64 = w
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, wj)| apply_row(row, wj).norm_sqr())
        .sum();
    signal / (interference + sigma2[k])
}

pub fn all_sinr(w: &[CVector], rows: &[CVector], sigma2: &[f64]) -> Vec<f64> {
    (0..rows.len()).map(|k| sinr(w, rows, sigma2, k)).collect()
}

pub fn total_power(w: &[CVector]) -> f64 {
    w.iter().map(|x| x.norm_squared()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// One record of a solver's convergence history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub outer: usize,
    pub objective: f64,
    pub violation: f64,
    pub mu: f64,
    pub nu: f64,
}

/// Transmit beamformers, reflection state and the figures of merit they achieve.
#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub w: Vec<CVector>,
    pub reflection: ReflectionState,
    pub total_power: f64,
    pub sinr: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub status: SolveStatus,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Relative power change of the final repair on the realized reflection (0 if none).
    pub power_correction: f64,
}

impl BeamformingSolution {
    /// Builds a solution and evaluates SINRs on the given channels.
    pub fn evaluate(channels: &ChannelSet, reflection: ReflectionState, w: Vec<CVector>, status: SolveStatus) -> Self {
        let rows = channels.effective_rows(reflection.v());
        let sinr = all_sinr(&w, &rows, &channels.sigma2);
        Self {
            total_power: total_power(&w),
            w,
            reflection,
            sinr,
            trace: Vec::new(),
            status,
            inner_iterations: 0,
            outer_iterations: 0,
            power_correction: 0.0,
        }
    }

    /// Every user within `rel_tol` of its SINR target.
    pub fn meets_targets(&self, gamma: &[f64], rel_tol: f64) -> bool {
        self.sinr.iter().zip(gamma).all(|(&s, &g)| s >= g * (1.0 - rel_tol))
    }
}
