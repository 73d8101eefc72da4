//! Scenario configuration, seeded Monte Carlo runs and CSV output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use crate::channel::{
    child_seed, dbm_to_watts, generate_channels, linear_to_db, watts_to_dbm, ChannelSet, SolveStatus, SystemGeometry,
    TracePoint,
};
use crate::error::{Error, Result};
use crate::mu_solver::{extended_penalty_solve, mmse_precoder, no_irs_baseline, two_stage_solve, FEASIBILITY_TOL};
use crate::numopt::SolverTolerances;
use crate::phasemodel::{PhaseShiftModel, ReflectionState};
use crate::su_solver::{
    ao_solve, discrete_phase_search, ideal_alignment, initial_state, penalty_solve, required_power, AoMode,
    PenaltySchedule, QuadraticGain,
};

/// Parameter swept across the runs of a scenario and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

pub const SWEEP_PARAMETERS: &[&str] = &[
    "n",
    "m",
    "k",
    "d",
    "d_x",
    "d_y",
    "r",
    "gamma_db",
    "sigma2_dbm",
    "beta_min",
    "alpha",
    "phi",
];

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: SystemGeometry,
    pub model: PhaseShiftModel,
    /// SINR targets in dB: one value for all users or one per user.
    pub gamma_db: Vec<f64>,
    pub sigma2_dbm: f64,
    pub schemes: Vec<String>,
    pub schedule: PenaltySchedule,
    pub tolerances: SolverTolerances,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    /// Carrier frequency in Hz. Informational; path loss is set by `geometry.pl_ref_db`.
    pub carrier_hz: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: SystemGeometry::default(),
            model: PhaseShiftModel::reference(),
            gamma_db: vec![10.0],
            sigma2_dbm: -94.0,
            schemes: vec!["su-ao".into()],
            schedule: PenaltySchedule::single_user(),
            tolerances: SolverTolerances::single_user(),
            trials: 50,
            seed: 1,
            sweep: None,
            carrier_hz: 2.4e9,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.schedule.validate()?;
        self.tolerances.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.gamma_db.is_empty() || (self.gamma_db.len() != 1 && self.gamma_db.len() != self.geometry.k) {
            return Err(Error::Config(format!(
                "gamma_db must have 1 or K={} entries, got {}",
                self.geometry.k,
                self.gamma_db.len()
            )));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes requested".into()));
        }
        for s in &self.schemes {
            Scheme::parse(s)?;
        }
        if let Some(sw) = &self.sweep {
            if !SWEEP_PARAMETERS.contains(&sw.parameter.as_str()) {
                return Err(Error::Config(format!(
                    "unknown sweep parameter {:?}; expected one of {SWEEP_PARAMETERS:?}",
                    sw.parameter
                )));
            }
            if sw.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            for &v in &sw.values {
                self.with_parameter(&sw.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Copy of the config with one parameter replaced.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{name} must be a positive integer, got {value}")))
            }
        };
        match name {
            "n" => c.geometry.n = count(value)?,
            "m" => c.geometry.m = count(value)?,
            "k" => {
                c.geometry.k = count(value)?;
                if c.gamma_db.len() != 1 {
                    return Err(Error::Config("sweeping k requires a single gamma_db".into()));
                }
            }
            "d" => c.geometry.d = value,
            "d_x" => c.geometry.d_x = value,
            "d_y" => c.geometry.d_y = value,
            "r" => c.geometry.r = value,
            "gamma_db" => c.gamma_db = vec![value],
            "sigma2_dbm" => c.sigma2_dbm = value,
            "beta_min" => c.model = c.model.with_beta_min(value)?,
            "alpha" => c.model = PhaseShiftModel::new(c.model.beta_min(), c.model.phi(), value)?,
            "phi" => c.model = PhaseShiftModel::new(c.model.beta_min(), value, c.model.alpha())?,
            other => return Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
        c.geometry.validate()?;
        Ok(c)
    }

    pub fn gamma_linear(&self) -> Vec<f64> {
        let g: Vec<f64> = self.gamma_db.iter().map(|&x| 10f64.powf(x / 10.0)).collect();
        if g.len() == 1 {
            vec![g[0]; self.geometry.k]
        } else {
            g
        }
    }

    pub fn sigma2_linear(&self) -> Vec<f64> {
        vec![dbm_to_watts(self.sigma2_dbm); self.geometry.k]
    }

    fn sweep_points(&self) -> Vec<(Option<f64>, ScenarioConfig)> {
        match &self.sweep {
            None => vec![(None, self.clone())],
            Some(sw) => sw
                .values
                .iter()
                .map(|&v| (Some(v), self.with_parameter(&sw.parameter, v).expect("validated sweep")))
                .collect(),
        }
    }

    pub fn channels_for_trial(&self, trial: usize) -> Result<ChannelSet> {
        generate_channels(
            &self.geometry,
            &self.sigma2_linear(),
            &self.gamma_linear(),
            child_seed(self.seed, trial as u64),
        )
    }
}

/// A registered beamforming scheme with its optional parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// AO with quadratic-fit element updates.
    SuAo,
    /// AO with exhaustive element search on this many points.
    SuAoGrid(usize),
    SuPenalty,
    /// AO under the ideal model, evaluated under the ideal model.
    SuIdeal,
    /// Ideal-model AO phases applied to hardware with this `beta_min` (config model if `None`).
    SuIdealAssumption(Option<f64>),
    SuNoIrs,
    SuDiscretePractical(u32),
    SuDiscreteIdeal(u32),
    MuPenalty,
    MuTwoStage,
    MuIdeal,
    MuIdealAssumption,
    MuNoIrs,
}

pub const SCHEME_NAMES: &[&str] = &[
    "su-ao",
    "su-ao-grid[:points=P]",
    "su-penalty",
    "su-ideal",
    "su-ideal-assumption[:beta_min=B]",
    "su-no-irs",
    "su-discrete-practical:b=BITS",
    "su-discrete-ideal:b=BITS",
    "mu-penalty",
    "mu-two-stage",
    "mu-ideal",
    "mu-ideal-assumption",
    "mu-no-irs",
];

const DEFAULT_GRID_POINTS: usize = 1000;

impl Scheme {
    pub fn parse(text: &str) -> Result<Self> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        let param = |key: &str| -> Result<Option<f64>> {
            match arg {
                None => Ok(None),
                Some(a) => {
                    let (k, v) = a
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("scheme parameter must be key=value in {text:?}")))?;
                    if k != key {
                        return Err(Error::Config(format!("scheme {name} takes {key}=..., got {k:?}")));
                    }
                    v.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("bad number {v:?} in scheme {text:?}")))
                }
            }
        };
        let no_param = |s: Scheme| {
            if arg.is_some() {
                Err(Error::Config(format!("scheme {name} takes no parameter")))
            } else {
                Ok(s)
            }
        };
        let bits = |v: Option<f64>| -> Result<u32> {
            match v {
                Some(b) if (1.0..=16.0).contains(&b) && b.fract() == 0.0 => Ok(b as u32),
                _ => Err(Error::Config(format!("scheme {text:?} needs b=1..16"))),
            }
        };
        match name {
            "su-ao" => no_param(Scheme::SuAo),
            "su-ao-grid" => {
                let p = param("points")?.unwrap_or(DEFAULT_GRID_POINTS as f64);
                if p < 2.0 || p.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "grid points must be an integer >= 2 in {text:?}"
                    )));
                }
                Ok(Scheme::SuAoGrid(p as usize))
            }
            "su-penalty" => no_param(Scheme::SuPenalty),
            "su-ideal" => no_param(Scheme::SuIdeal),
            "su-ideal-assumption" => {
                let b = param("beta_min")?;
                if let Some(b) = b {
                    PhaseShiftModel::reference()
                        .with_beta_min(b)
                        .map_err(|e| Error::Config(e.to_string()))?;
                }
                Ok(Scheme::SuIdealAssumption(b))
            }
            "su-no-irs" => no_param(Scheme::SuNoIrs),
            "su-discrete-practical" => Ok(Scheme::SuDiscretePractical(bits(param("b")?)?)),
            "su-discrete-ideal" => Ok(Scheme::SuDiscreteIdeal(bits(param("b")?)?)),
            "mu-penalty" => no_param(Scheme::MuPenalty),
            "mu-two-stage" => no_param(Scheme::MuTwoStage),
            "mu-ideal" => no_param(Scheme::MuIdeal),
            "mu-ideal-assumption" => no_param(Scheme::MuIdealAssumption),
            "mu-no-irs" => no_param(Scheme::MuNoIrs),
            _ => Err(Error::Config(format!(
                "unknown scheme {text:?}; known: {SCHEME_NAMES:?}"
            ))),
        }
    }

    pub fn is_single_user(&self) -> bool {
        !matches!(
            self,
            Scheme::MuPenalty | Scheme::MuTwoStage | Scheme::MuIdeal | Scheme::MuIdealAssumption | Scheme::MuNoIrs
        )
    }
}

/// What a scheme produced on one realization.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub power_w: f64,
    pub sinr: Vec<f64>,
    pub status: SolveStatus,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub theta: Vec<f64>,
    pub trace: Vec<TracePoint>,
}

impl SchemeOutcome {
    fn infeasible(k: usize) -> Self {
        Self {
            power_w: f64::NAN,
            sinr: vec![f64::NAN; k],
            status: SolveStatus::Infeasible,
            inner_iterations: 0,
            outer_iterations: 0,
            theta: Vec::new(),
            trace: Vec::new(),
        }
    }
}

fn single_user_outcome(
    channels: &ChannelSet,
    state: &ReflectionState,
    status: SolveStatus,
    inner: usize,
    outer: usize,
    trace: Vec<TracePoint>,
) -> SchemeOutcome {
    let row = &channels.effective_rows(state.v())[0];
    match required_power(row, channels.gamma[0], channels.sigma2[0]) {
        Ok(p) => SchemeOutcome {
            power_w: p,
            sinr: vec![channels.gamma[0]],
            status,
            inner_iterations: inner,
            outer_iterations: outer,
            theta: state.theta().to_vec(),
            trace,
        },
        Err(_) => SchemeOutcome::infeasible(1),
    }
}

/// Runs one scheme on one realization.
pub fn run_scheme(
    scheme: Scheme,
    cfg: &ScenarioConfig,
    channels: &ChannelSet,
    init_seed: u64,
) -> Result<SchemeOutcome> {
    let model = &cfg.model;
    let tol = &cfg.tolerances;
    let ideal = PhaseShiftModel::ideal();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let init = initial_state(model, channels.elements(), &mut rng);
    if scheme.is_single_user() && channels.users() != 1 {
        return Err(Error::Config(format!(
            "{scheme:?} needs K = 1, got K = {}",
            channels.users()
        )));
    }
    let su = |m: &PhaseShiftModel, mode: AoMode| -> Result<_> {
        let q = QuadraticGain::single_user(channels)?;
        Ok(ao_solve(&q, m, &init, tol, mode))
    };
    let out = match scheme {
        Scheme::SuAo | Scheme::SuAoGrid(_) => {
            let mode = if let Scheme::SuAoGrid(p) = scheme {
                AoMode::Grid(p)
            } else {
                AoMode::QuadFit
            };
            let o = su(model, mode)?;
            single_user_outcome(channels, &o.state, o.status, o.inner_iterations, 1, o.trace)
        }
        Scheme::SuPenalty => {
            let q = QuadraticGain::single_user(channels)?;
            let o = penalty_solve(&q, model, &init, &cfg.schedule, tol);
            single_user_outcome(
                channels,
                &o.state,
                o.status,
                o.inner_iterations,
                o.outer_iterations,
                o.trace,
            )
        }
        Scheme::SuIdeal => {
            let o = su(&ideal, AoMode::QuadFit)?;
            single_user_outcome(channels, &o.state, o.status, o.inner_iterations, 1, o.trace)
        }
        Scheme::SuIdealAssumption(b) => {
            let hw = match b {
                Some(b) => model.with_beta_min(b)?,
                None => *model,
            };
            let o = su(&ideal, AoMode::QuadFit)?;
            single_user_outcome(channels, &o.state.under(&hw), o.status, o.inner_iterations, 1, o.trace)
        }
        Scheme::SuNoIrs => {
            let row = &channels.direct_rows()[0];
            match required_power(row, channels.gamma[0], channels.sigma2[0]) {
                Ok(p) => SchemeOutcome {
                    power_w: p,
                    sinr: vec![channels.gamma[0]],
                    status: SolveStatus::Converged,
                    inner_iterations: 0,
                    outer_iterations: 0,
                    theta: Vec::new(),
                    trace: Vec::new(),
                },
                Err(_) => SchemeOutcome::infeasible(1),
            }
        }
        Scheme::SuDiscretePractical(bits) | Scheme::SuDiscreteIdeal(bits) => {
            let q = QuadraticGain::single_user(channels)?;
            let select = if matches!(scheme, Scheme::SuDiscreteIdeal(_)) {
                ideal
            } else {
                *model
            };
            let o = discrete_phase_search(&q, &select, bits, &init, tol)?;
            single_user_outcome(
                channels,
                &o.state.under(model),
                o.status,
                o.inner_iterations,
                1,
                o.trace,
            )
        }
        Scheme::MuPenalty | Scheme::MuIdeal | Scheme::MuIdealAssumption => {
            let design = if matches!(scheme, Scheme::MuPenalty) {
                *model
            } else {
                ideal
            };
            let sol = extended_penalty_solve(channels, &design, &init, &cfg.schedule, tol);
            if matches!(scheme, Scheme::MuIdealAssumption) {
                let state = sol.reflection.under(model);
                let rows = channels.effective_rows(state.v());
                match mmse_precoder(&rows, &channels.gamma, &channels.sigma2, tol) {
                    Ok((w, _)) => {
                        let sinr = crate::channel::all_sinr(&w, &rows, &channels.sigma2);
                        let feasible = sinr
                            .iter()
                            .zip(&channels.gamma)
                            .all(|(&s, &g)| s >= g * (1.0 - FEASIBILITY_TOL));
                        SchemeOutcome {
                            power_w: crate::channel::total_power(&w),
                            sinr,
                            status: if feasible { sol.status } else { SolveStatus::Infeasible },
                            inner_iterations: sol.inner_iterations,
                            outer_iterations: sol.outer_iterations,
                            theta: state.theta().to_vec(),
                            trace: sol.trace,
                        }
                    }
                    Err(_) => SchemeOutcome::infeasible(channels.users()),
                }
            } else {
                SchemeOutcome {
                    power_w: sol.total_power,
                    sinr: sol.sinr,
                    status: sol.status,
                    inner_iterations: sol.inner_iterations,
                    outer_iterations: sol.outer_iterations,
                    theta: sol.reflection.theta().to_vec(),
                    trace: sol.trace,
                }
            }
        }
        Scheme::MuTwoStage => match two_stage_solve(channels, model, &init, &cfg.schedule, tol) {
            Ok(sol) => SchemeOutcome {
                power_w: sol.total_power,
                sinr: sol.sinr,
                status: sol.status,
                inner_iterations: sol.inner_iterations,
                outer_iterations: sol.outer_iterations,
                theta: sol.reflection.theta().to_vec(),
                trace: sol.trace,
            },
            Err(Error::Infeasible(_)) => SchemeOutcome::infeasible(channels.users()),
            Err(e) => return Err(e),
        },
        Scheme::MuNoIrs => match no_irs_baseline(channels, tol) {
            Ok(sol) => SchemeOutcome {
                power_w: sol.total_power,
                sinr: sol.sinr,
                status: sol.status,
                inner_iterations: 0,
                outer_iterations: 0,
                theta: Vec::new(),
                trace: Vec::new(),
            },
            Err(Error::Infeasible(_)) => SchemeOutcome::infeasible(channels.users()),
            Err(e) => return Err(e),
        },
    };
    Ok(out)
}

/// One line of the results CSV.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub sweep_parameter: Option<String>,
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub scheme: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: f64,
    pub beta_min: f64,
    pub gamma_db: f64,
    pub fingerprint: u64,
    pub status: SolveStatus,
    pub transmit_power_dbm: f64,
    pub sinr_db: Vec<f64>,
    pub iterations_inner: usize,
    pub iterations_outer: usize,
    pub wall_time_ms: f64,
    pub trace: Vec<TracePoint>,
    pub theta: Vec<f64>,
}

/// Runs every scheme on every (sweep value, trial) realization.
///
/// Trials run in parallel; rows come back in (sweep value, trial, scheme) order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let schemes: Vec<(String, Scheme)> = cfg
        .schemes
        .iter()
        .map(|s| Scheme::parse(s).map(|p| (s.clone(), p)))
        .collect::<Result<_>>()?;
    let points = cfg.sweep_points();
    for (_, pc) in &points {
        if pc.geometry.k != 1 {
            if let Some((name, _)) = schemes.iter().find(|(_, s)| s.is_single_user()) {
                return Err(Error::Config(format!(
                    "scheme {name} needs K = 1, config has K = {}",
                    pc.geometry.k
                )));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();

    let per_job: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(p, trial)| {
            let (value, pc) = &points[p];
            let channels = pc.channels_for_trial(trial)?;
            let init_seed = child_seed(child_seed(pc.seed, trial as u64), u64::MAX);
            let mut rows = Vec::with_capacity(schemes.len());
            for (name, scheme) in &schemes {
                let start = Instant::now();
                let out = run_scheme(*scheme, pc, &channels, init_seed)?;
                rows.push(ResultRow {
                    sweep_parameter: cfg.sweep.as_ref().map(|s| s.parameter.clone()),
                    sweep_value: *value,
                    trial,
                    scheme: name.clone(),
                    n: pc.geometry.n,
                    m: pc.geometry.m,
                    k: pc.geometry.k,
                    d: pc.geometry.d,
                    beta_min: pc.model.beta_min(),
                    gamma_db: pc.gamma_db[0],
                    fingerprint: channels.fingerprint(),
                    status: out.status,
                    transmit_power_dbm: watts_to_dbm(out.power_w),
                    sinr_db: out.sinr.iter().map(|&s| linear_to_db(s)).collect(),
                    iterations_inner: out.inner_iterations,
                    iterations_outer: out.outer_iterations,
                    wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                    trace: out.trace,
                    theta: out.theta,
                });
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    Ok(rows)
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        "nan".into()
    }
}

pub const RESULT_HEADER: &str = "sweep,value,trial,scheme,n,m,k,d,beta_min,gamma_db,fingerprint,status,\
transmit_power_dbm,min_sinr_db,sinr_db,iterations_inner,iterations_outer";

/// Results as CSV. `timing` appends the wall-clock column, which is the only
/// field that varies between identical runs.
pub fn results_csv(rows: &[ResultRow], timing: bool) -> String {
    let mut out = String::from(RESULT_HEADER);
    if timing {
        out.push_str(",wall_time_ms");
    }
    out.push('\n');
    for r in rows {
        let min_sinr = r.sinr_db.iter().copied().fold(f64::INFINITY, f64::min);
        let sinr: Vec<String> = r.sinr_db.iter().map(|&s| fmt_f(s)).collect();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:016x},{},{},{},{},{},{}",
            r.sweep_parameter.as_deref().unwrap_or(""),
            r.sweep_value.map(fmt_f).unwrap_or_default(),
            r.trial,
            r.scheme,
            r.n,
            r.m,
            r.k,
            fmt_f(r.d),
            fmt_f(r.beta_min),
            fmt_f(r.gamma_db),
            r.fingerprint,
            r.status.as_str(),
            fmt_f(r.transmit_power_dbm),
            fmt_f(min_sinr),
            sinr.join(";"),
            r.iterations_inner,
            r.iterations_outer,
        );
        if timing {
            let _ = write!(out, ",{:.3}", r.wall_time_ms);
        }
        out.push('\n');
    }
    out
}

pub const TRACE_HEADER: &str = "value,trial,scheme,outer,iter,objective,violation,mu,nu";

/// Per-iteration convergence history of every row.
pub fn trace_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        for t in &r.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.sweep_value.map(fmt_f).unwrap_or_default(),
                r.trial,
                r.scheme,
                t.outer,
                t.iter,
                fmt_f(t.objective),
                fmt_f(t.violation),
                fmt_f(t.mu),
                fmt_f(t.nu)
            );
        }
    }
    out
}

/// Mean transmit power in dBm per (sweep value, scheme), in first-seen order.
/// Infeasible rows are excluded and counted.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSummary {
    pub sweep_value: Option<f64>,
    pub scheme: String,
    pub mean_power_dbm: f64,
    pub feasible: usize,
    pub infeasible: usize,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<PowerSummary> {
    let mut out: Vec<(PowerSummary, f64)> = Vec::new();
    for r in rows {
        let idx = out
            .iter()
            .position(|(s, _)| s.sweep_value == r.sweep_value && s.scheme == r.scheme);
        let idx = match idx {
            Some(i) => i,
            None => {
                out.push((
                    PowerSummary {
                        sweep_value: r.sweep_value,
                        scheme: r.scheme.clone(),
                        mean_power_dbm: 0.0,
                        feasible: 0,
                        infeasible: 0,
                    },
                    0.0,
                ));
                out.len() - 1
            }
        };
        let entry = &mut out[idx];
        if r.status == SolveStatus::Infeasible || !r.transmit_power_dbm.is_finite() {
            entry.0.infeasible += 1;
        } else {
            entry.0.feasible += 1;
            entry.1 += r.transmit_power_dbm;
        }
    }
    out.into_iter()
        .map(|(mut s, total)| {
            s.mean_power_dbm = if s.feasible > 0 {
                total / s.feasible as f64
            } else {
                f64::NAN
            };
            s
        })
        .collect()
}

pub fn summary_csv(summary: &[PowerSummary]) -> String {
    let mut out = String::from("value,scheme,mean_power_dbm,feasible,infeasible\n");
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.sweep_value.map(fmt_f).unwrap_or_default(),
            s.scheme,
            fmt_f(s.mean_power_dbm),
            s.feasible,
            s.infeasible
        );
    }
    out
}

/// Power loss in dB of each (alpha, beta_min) pair; rows follow `alphas`.
pub fn table1(beta_mins: &[f64], alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
    let phi = PhaseShiftModel::reference().phi();
    alphas
        .iter()
        .map(|&a| {
            beta_mins
                .iter()
                .map(|&b| PhaseShiftModel::new(b, phi, a).map(|m| m.power_loss_db()))
                .collect()
        })
        .collect()
}

pub const TABLE1_BETA_MIN: [f64; 4] = [1.0, 0.8, 0.5, 0.2];
pub const TABLE1_ALPHA: [f64; 2] = [1.6, 2.0];

pub fn table1_csv(beta_mins: &[f64], alphas: &[f64], table: &[Vec<f64>]) -> String {
    let mut out = String::from("alpha");
    for b in beta_mins {
        let _ = write!(out, ",beta_min={b}");
    }
    out.push('\n');
    for (a, row) in alphas.iter().zip(table) {
        let _ = write!(out, "{a}");
        for v in row {
            let _ = write!(out, ",{}", fmt_f(*v));
        }
        out.push('\n');
    }
    out
}

/// Counts of optimized phases per bin over `[-pi, pi)` for the ideal and practical models.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistogram {
    pub edges: Vec<f64>,
    pub ideal: Vec<usize>,
    pub practical: Vec<usize>,
}

impl PhaseHistogram {
    pub fn fractions(counts: &[usize]) -> Vec<f64> {
        let total: usize = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,ideal,practical\n");
        for i in 0..self.ideal.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f(self.edges[i]),
                fmt_f(self.edges[i + 1]),
                self.ideal[i],
                self.practical[i]
            );
        }
        out
    }
}

fn bin_of(theta: f64, bins: usize) -> usize {
    let t = crate::phasemodel::wrap_phase(theta);
    (((t + PI) / (2.0 * PI) * bins as f64).floor() as usize).min(bins - 1)
}

/// AO phases under the ideal model and under `cfg.model`, pooled over trials.
pub fn phase_histogram(cfg: &ScenarioConfig, bins: usize) -> Result<PhaseHistogram> {
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 bins".into()));
    }
    if cfg.geometry.k != 1 {
        return Err(Error::Config("phase histogram is single-user".into()));
    }
    let per_trial: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let channels = cfg.channels_for_trial(trial)?;
            let seed = child_seed(child_seed(cfg.seed, trial as u64), u64::MAX);
            let i = run_scheme(Scheme::SuIdeal, cfg, &channels, seed)?;
            let p = run_scheme(Scheme::SuAo, cfg, &channels, seed)?;
            Ok((i.theta, p.theta))
        })
        .collect();
    let mut hist = PhaseHistogram {
        edges: (0..=bins).map(|i| -PI + 2.0 * PI * i as f64 / bins as f64).collect(),
        ideal: vec![0; bins],
        practical: vec![0; bins],
    };
    for r in per_trial {
        let (i, p) = r?;
        for t in i {
            hist.ideal[bin_of(t, bins)] += 1;
        }
        for t in p {
            hist.practical[bin_of(t, bins)] += 1;
        }
    }
    Ok(hist)
}

/// Mean received-power ratio (dB) of practical versus ideal amplitudes when the
/// phases co-phase every path under the ideal model. Requires M = 1, K = 1.
pub fn asymptotic_check(cfg: &ScenarioConfig) -> Result<f64> {
    if cfg.geometry.m != 1 || cfg.geometry.k != 1 {
        return Err(Error::Config("asymptotic check needs M = 1 and K = 1".into()));
    }
    let ideal = PhaseShiftModel::ideal();
    let ratios: Vec<Result<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let channels = cfg.channels_for_trial(trial)?;
            let theta = ideal_alignment(&channels)?;
            let gi = channels.effective_rows(ReflectionState::from_theta(&ideal, &theta).v())[0].norm_squared();
            let gp = channels.effective_rows(ReflectionState::from_theta(&cfg.model, &theta).v())[0].norm_squared();
            Ok(linear_to_db(gp / gi))
        })
        .collect();
    let vals: Vec<f64> = ratios.into_iter().collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Preset experiments.
pub mod recipes {
    use super::*;

    fn multiuser_base() -> ScenarioConfig {
        ScenarioConfig {
            geometry: SystemGeometry::multiuser(),
            schedule: PenaltySchedule::multiuser(),
            tolerances: SolverTolerances::multiuser(),
            ..ScenarioConfig::default()
        }
    }

    /// Power versus N with ideal-model phases applied to lossy hardware.
    pub fn sweep_n(values: &[f64]) -> ScenarioConfig {
        ScenarioConfig {
            schemes: vec![
                "su-ideal".into(),
                "su-ideal-assumption:beta_min=0.8".into(),
                "su-ideal-assumption:beta_min=0.5".into(),
                "su-ideal-assumption:beta_min=0.2".into(),
            ],
            sweep: Some(Sweep {
                parameter: "n".into(),
                values: values.to_vec(),
            }),
            ..ScenarioConfig::default()
        }
    }

    pub const SWEEP_N_VALUES: [f64; 4] = [20.0, 60.0, 120.0, 200.0];

    /// Power versus AP-user horizontal distance for the single-user schemes.
    pub fn sweep_distance(values: &[f64]) -> ScenarioConfig {
        ScenarioConfig {
            schemes: vec![
                "su-ideal".into(),
                "su-ao".into(),
                "su-ao-grid".into(),
                "su-penalty".into(),
                "su-ideal-assumption".into(),
                "su-no-irs".into(),
            ],
            sweep: Some(Sweep {
                parameter: "d".into(),
                values: values.to_vec(),
            }),
            ..ScenarioConfig::default()
        }
    }

    pub const SWEEP_DISTANCE_VALUES: [f64; 6] = [350.0, 370.0, 385.0, 395.0, 398.0, 400.0];

    /// Discrete phases designed with and without the amplitude model.
    pub fn discrete(bits: &[u32], values: &[f64]) -> ScenarioConfig {
        let mut schemes = Vec::new();
        for b in bits {
            schemes.push(format!("su-discrete-practical:b={b}"));
            schemes.push(format!("su-discrete-ideal:b={b}"));
        }
        ScenarioConfig {
            schemes,
            sweep: Some(Sweep {
                parameter: "d".into(),
                values: values.to_vec(),
            }),
            ..ScenarioConfig::default()
        }
    }

    pub const DISCRETE_BITS: [u32; 4] = [1, 2, 3, 4];

    /// Single-user setup used for the phase histogram.
    pub fn phase_hist() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    /// Multiuser power versus common SINR target.
    pub fn sweep_sinr(values: &[f64]) -> ScenarioConfig {
        ScenarioConfig {
            schemes: vec![
                "mu-ideal".into(),
                "mu-penalty".into(),
                "mu-two-stage".into(),
                "mu-ideal-assumption".into(),
                "mu-no-irs".into(),
            ],
            sweep: Some(Sweep {
                parameter: "gamma_db".into(),
                values: values.to_vec(),
            }),
            ..multiuser_base()
        }
    }

    pub const SWEEP_SINR_VALUES: [f64; 5] = [4.0, 8.0, 12.0, 16.0, 20.0];

    /// Multiuser power versus the number of users with eight AP antennas.
    pub fn sweep_users(values: &[f64]) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            schemes: vec!["mu-ideal".into(), "mu-penalty".into(), "mu-no-irs".into()],
            sweep: Some(Sweep {
                parameter: "k".into(),
                values: values.to_vec(),
            }),
            ..multiuser_base()
        };
        cfg.geometry.m = 8;
        cfg.geometry.d = 395.0;
        cfg
    }

    pub const SWEEP_USERS_VALUES: [f64; 5] = [4.0, 5.0, 6.0, 7.0, 8.0];

    /// Single-antenna, large-surface setup for the asymptotic loss.
    pub fn asymptotic(n: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            schemes: vec!["su-ideal".into()],
            ..ScenarioConfig::default()
        };
        cfg.geometry.m = 1;
        cfg.geometry.n = n;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        let mut c = ScenarioConfig {
            trials: 2,
            schemes: vec!["su-ao".into(), "su-no-irs".into()],
            ..Default::default()
        };
        c.geometry.n = 8;
        c
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!(Scheme::parse("su-ao").unwrap(), Scheme::SuAo);
        assert_eq!(
            Scheme::parse("su-ao-grid").unwrap(),
            Scheme::SuAoGrid(DEFAULT_GRID_POINTS)
        );
        assert_eq!(
            Scheme::parse("su-ideal-assumption:beta_min=0.5").unwrap(),
            Scheme::SuIdealAssumption(Some(0.5))
        );
        assert_eq!(
            Scheme::parse("su-discrete-ideal:b=3").unwrap(),
            Scheme::SuDiscreteIdeal(3)
        );
        assert!(Scheme::parse("su-discrete-ideal").is_err());
        assert!(Scheme::parse("su-ao:b=2").is_err());
        assert!(Scheme::parse("sdr").is_err());
        assert!(Scheme::parse("su-ideal-assumption:beta_min=2").is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = recipes::sweep_sinr(&[4.0, 20.0]);
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let bad = ScenarioConfig {
            schemes: vec!["nope".into()],
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ScenarioConfig {
            sweep: Some(Sweep {
                parameter: "color".into(),
                values: vec![1.0],
            }),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let partial = ScenarioConfig::from_json(r#"{"trials": 3, "schemes": ["su-ao"]}"#).unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.geometry, SystemGeometry::default());
        assert!(ScenarioConfig::from_json(r#"{"scheme": ["su-ao"]}"#).is_err());
    }

    #[test]
    fn single_trial_single_scheme_gives_one_row() {
        let cfg = ScenarioConfig { trials: 1, ..tiny() };
        let cfg = ScenarioConfig {
            schemes: vec!["su-ao".into()],
            ..cfg
        };
        assert_eq!(run_scenario(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn rows_are_deterministic_and_comparable() {
        let mut cfg = tiny();
        cfg.sweep = Some(Sweep {
            parameter: "d".into(),
            values: vec![390.0, 400.0],
        });
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.len(), 2 * 2 * 2);
        assert_eq!(results_csv(&a, false), results_csv(&b, false));
        for pair in a.chunks(2) {
            assert_eq!(pair[0].fingerprint, pair[1].fingerprint);
            assert_eq!(pair[0].trial, pair[1].trial);
        }
    }

    #[test]
    fn single_user_scheme_rejected_for_multiuser_config() {
        let cfg = ScenarioConfig {
            geometry: SystemGeometry::multiuser(),
            gamma_db: vec![10.0],
            ..tiny()
        };
        assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn table1_diagonal_entries() {
        let t = table1(&TABLE1_BETA_MIN, &TABLE1_ALPHA).unwrap();
        assert_eq!(t[0][0].abs(), 0.0);
        assert!((t[1][3] + 6.0).abs() < 0.05);
        assert!((t[0][1] + 1.1).abs() < 0.05);
    }

    #[test]
    fn histogram_counts_sum_to_n() {
        let cfg = ScenarioConfig { trials: 1, ..tiny() };
        let h = phase_histogram(&cfg, 8).unwrap();
        assert_eq!(h.ideal.iter().sum::<usize>(), 8);
        assert_eq!(h.practical.iter().sum::<usize>(), 8);
        assert!(phase_histogram(&cfg, 1).is_err());
    }

    #[test]
    fn asymptotic_ideal_is_zero_db() {
        let mut cfg = recipes::asymptotic(50);
        cfg.trials = 3;
        cfg.model = PhaseShiftModel::ideal();
        assert_eq!(asymptotic_check(&cfg).unwrap(), 0.0);
        cfg.geometry.m = 2;
        assert!(asymptotic_check(&cfg).is_err());
    }

    #[test]
    fn bins_cover_circle() {
        assert_eq!(bin_of(-PI, 8), 0);
        assert_eq!(bin_of(PI - 1e-12, 8), 7);
        assert_eq!(bin_of(0.0, 8), 4);
    }
}
