//! Time integration of the flow in conformal-factor form,
//! `du/dt = ((n-2)/4) (alpha f - R_g) u`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::{self, parts};
use crate::error::{Error, Result};
use crate::geometry::{check_positive, critical_exponent, FieldSample, WarpedMetric};

/// A conformal factor on a fixed background metric at a given time.
#[derive(Debug, Clone)]
pub struct ConformalState<'m> {
    pub metric: &'m WarpedMetric,
    pub time: f64,
    pub u: FieldSample,
}

impl<'m> ConformalState<'m> {
    pub fn new(metric: &'m WarpedMetric, u: FieldSample, time: f64) -> Result<Self> {
        metric.check_field(&u)?;
        check_positive(u.values())?;
        if !time.is_finite() {
            return Err(Error::InvalidArgument(format!("time must be finite, got {time}")));
        }
        Ok(Self { metric, time, u })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    #[default]
    Imex,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Scheme::Rk4),
            "imex" => Ok(Scheme::Imex),
            _ => Err(Error::InvalidArgument(format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Renormalize {
    #[default]
    None,
    Volume,
    FVolume,
}

impl FromStr for Renormalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Renormalize::None),
            "volume" => Ok(Renormalize::Volume),
            "f_volume" => Ok(Renormalize::FVolume),
            _ => Err(Error::InvalidArgument(format!("unknown renormalization `{s}`"))),
        }
    }
}

fn velocity_values(metric: &WarpedMetric, u: &[f64]) -> Result<Vec<f64>> {
    check_positive(u).map_err(|e| Error::PositivityLost(e.to_string()))?;
    let n = metric.dim() as f64;
    let c = energy::conformal_constant(metric.dim());
    let p = parts(metric, u);
    let r = metric.curvature_values();
    let f = metric.f();
    let k = -4.0 / (n - 2.0);
    Ok((0..u.len())
        .map(|j| {
            let rg_u = (-c * p.lap[j] + r[j] * u[j]) * u[j].powf(k);
            0.25 * (n - 2.0) * (p.alpha * f[j] * u[j] - rg_u)
        })
        .collect())
}

pub fn velocity(state: &ConformalState<'_>) -> Result<FieldSample> {
    Ok(state.u.with_values(velocity_values(state.metric, state.u.values())?))
}

/// Largest dt accepted by the explicit scheme.
pub fn rk4_stability_bound(metric: &WarpedMetric, u: &FieldSample) -> f64 {
    let n = metric.dim() as f64;
    let h = metric.grid().spacing();
    0.2 * h * h * u.min().powf(4.0 / (n - 2.0)) / (4.0 * (n - 1.0))
}

pub fn step<'m>(state: &ConformalState<'m>, dt: f64, scheme: Scheme) -> Result<ConformalState<'m>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let u = state.u.values();
    let next = match scheme {
        Scheme::Rk4 => {
            let bound = rk4_stability_bound(state.metric, &state.u);
            if dt > bound {
                return Err(Error::PositivityLost(format!(
                    "dt = {dt:e} exceeds the rk4 stability bound {bound:e}"
                )));
            }
            rk4_step(state.metric, u, dt)?
        }
        Scheme::Imex => imex_step(state.metric, u, dt)?,
    };
    let min = next.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || next.iter().any(|v| !v.is_finite()) {
        return Err(Error::PositivityLost(format!(
            "minimum of u is {min:e} after a step of size {dt:e}"
        )));
    }
    Ok(ConformalState {
        metric: state.metric,
        time: state.time + dt,
        u: state.u.with_values(next),
    })
}

fn rk4_step(metric: &WarpedMetric, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let stage = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, kk)| b + s * kk).collect()
    };
    let k1 = velocity_values(metric, u)?;
    let k2 = velocity_values(metric, &stage(u, &k1, 0.5 * dt))?;
    let k3 = velocity_values(metric, &stage(u, &k2, 0.5 * dt))?;
    let k4 = velocity_values(metric, &stage(u, &k3, dt))?;
    Ok((0..u.len())
        .map(|j| u[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect())
}

// Implicit in (n-1) u^{-4/(n-2)} Lap u with the coefficient frozen at u^k,
// explicit in the zeroth-order remainder.
fn imex_step(metric: &WarpedMetric, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = metric.dim() as f64;
    let n1 = n - 1.0;
    let vel = velocity_values(metric, u)?;
    let lap = metric.apply_laplacian(u);
    let h2 = metric.grid().spacing().powi(2);
    let a = metric.faces();
    let m = metric.mass();
    let len = u.len();

    let mut lower = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut upper = vec![0.0; len];
    let mut rhs = vec![0.0; len];
    for j in 0..len {
        let k = u[j].powf(-4.0 / (n - 2.0));
        let s = dt * n1 * k / (h2 * m[j]);
        lower[j] = -s * a[j];
        upper[j] = -s * a[j + 1];
        diag[j] = 1.0 + s * (a[j] + a[j + 1]);
        let explicit = vel[j] - n1 * k * lap[j];
        rhs[j] = u[j] + dt * explicit;
    }
    solve_tridiagonal(&lower, &diag, &upper, &rhs)
}

fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let len = diag.len();
    let mut c = vec![0.0; len];
    let mut d = vec![0.0; len];
    let mut pivot = diag[0];
    for j in 0..len {
        if j > 0 {
            pivot = diag[j] - lower[j] * c[j - 1];
        }
        if !pivot.is_finite() || pivot.abs() < 1e-300 {
            return Err(Error::ImplicitSolveFailed(format!("zero pivot at row {j}")));
        }
        c[j] = upper[j] / pivot;
        d[j] = if j == 0 {
            rhs[0] / pivot
        } else {
            (rhs[j] - lower[j] * d[j - 1]) / pivot
        };
    }
    let mut x = vec![0.0; len];
    x[len - 1] = d[len - 1];
    for j in (0..len - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::ImplicitSolveFailed("non-finite solution".into()));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowControls {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    /// Record every `cadence` steps; the initial and final states are always recorded.
    pub cadence: usize,
    pub renormalize: Renormalize,
    pub stop_tol: f64,
    pub u_ref: Option<FieldSample>,
}

impl FlowControls {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            scheme: Scheme::Imex,
            dt,
            horizon,
            cadence: 1,
            renormalize: Renormalize::None,
            stop_tol: 1e-10,
            u_ref: None,
        }
    }
}

/// One recorded row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub volume: f64,
    pub f_volume: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub alpha: f64,
    pub grad_l2: f64,
    pub dist_sup: f64,
    pub dist_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    Converged { grad_l2: f64 },
    PositivityLost { message: String },
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::HorizonReached => write!(f, "horizon reached"),
            Termination::Converged { grad_l2 } => write!(f, "converged (grad_l2 = {grad_l2:e})"),
            Termination::PositivityLost { message } => write!(f, "positivity lost: {message}"),
        }
    }
}

/// Checks made on every accepted step, recorded or not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepChecks {
    pub steps: usize,
    /// Largest `(E_{k+1} - E_k) / (1 + |E_k|)`.
    pub max_energy_increase: f64,
    pub energy_monotone: bool,
    /// Largest `|Vol(t) - Vol(0)| / Vol(0)`.
    pub max_volume_drift: f64,
    pub f_volume_min: f64,
    pub f_volume_max: f64,
    /// `min f * Vol(0) <= int f dV_g <= max f * Vol(0)` at every step, up to 1e-6 relative.
    pub f_volume_within_bounds: bool,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub samples: Vec<FlowSample>,
    pub u_ref: FieldSample,
    pub final_u: FieldSample,
    pub termination: Termination,
    pub checks: StepChecks,
}

impl FlowTrace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn column(&self, pick: impl Fn(&FlowSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(pick).collect()
    }

    pub fn final_sample(&self) -> &FlowSample {
        self.samples.last().expect("trace always holds the initial sample")
    }
}

const MONOTONE_TOL: f64 = 1e-9;

pub fn run(metric: &WarpedMetric, u0: &FieldSample, controls: &FlowControls) -> Result<FlowTrace> {
    metric.check_field(u0)?;
    check_positive(u0.values())?;
    if !(controls.horizon > 0.0) || !controls.horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", controls.horizon)));
    }
    if !(controls.dt > 0.0) || !controls.dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", controls.dt)));
    }
    if controls.cadence == 0 {
        return Err(Error::InvalidArgument("cadence must be at least 1".into()));
    }
    let u_ref = match &controls.u_ref {
        Some(r) => {
            metric.check_field(r)?;
            check_positive(r.values())?;
            r.clone()
        }
        None => FieldSample::constant(metric.grid().clone(), 1.0),
    };

    let pexp = critical_exponent(metric.dim());
    let fmin = metric.f().iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = metric.f().iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let sample = |u: &[f64], t: f64| -> (FlowSample, f64) {
        let p = parts(metric, u);
        let g = energy::gradient_values(metric, u, &p);
        let diff: Vec<f64> = u.iter().zip(u_ref.values()).map(|(a, b)| a - b).collect();
        let s = FlowSample {
            t,
            volume: p.volume,
            f_volume: p.f_volume,
            energy: p.energy,
            alpha: p.alpha,
            grad_l2: metric.inner_values(&g, &g).sqrt(),
            dist_sup: diff.iter().fold(0.0, |m, v| m.max(v.abs())),
            dist_l2: metric.inner_values(&diff, &diff).sqrt(),
        };
        (s, p.volume)
    };

    let (first, vol0) = sample(u0.values(), 0.0);
    let mut checks = StepChecks {
        steps: 0,
        max_energy_increase: f64::NEG_INFINITY,
        energy_monotone: true,
        max_volume_drift: 0.0,
        f_volume_min: first.f_volume,
        f_volume_max: first.f_volume,
        f_volume_within_bounds: true,
    };
    let lo = fmin * vol0 * (1.0 - 1e-6);
    let hi = fmax * vol0 * (1.0 + 1e-6);
    let within = |fv: f64, checks: &mut StepChecks| {
        checks.f_volume_min = checks.f_volume_min.min(fv);
        checks.f_volume_max = checks.f_volume_max.max(fv);
        if fv < lo || fv > hi {
            checks.f_volume_within_bounds = false;
        }
    };
    within(first.f_volume, &mut checks);

    let mut samples = vec![first];
    let mut state = ConformalState::new(metric, u0.clone(), 0.0)?;
    let mut last = first;
    let mut termination = if first.grad_l2 < controls.stop_tol {
        Some(Termination::Converged { grad_l2: first.grad_l2 })
    } else {
        None
    };

    let total = (controls.horizon / controls.dt - 1e-9).ceil().max(1.0) as usize;
    let mut k = 0;
    while termination.is_none() {
        let t_next = if k + 1 == total {
            controls.horizon
        } else {
            (k + 1) as f64 * controls.dt
        };
        let dt = t_next - state.time;
        let mut next = match step(&state, dt, controls.scheme) {
            Ok(s) => s,
            Err(e) => {
                termination = Some(Termination::PositivityLost { message: e.to_string() });
                break;
            }
        };
        next.time = t_next;
        k += 1;

        match controls.renormalize {
            Renormalize::None => {}
            Renormalize::Volume | Renormalize::FVolume => {
                let p = parts(metric, next.u.values());
                let current = if controls.renormalize == Renormalize::Volume { p.volume } else { p.f_volume };
                let target = if controls.renormalize == Renormalize::Volume { vol0 } else { 1.0 };
                let c = (target / current).powf(1.0 / pexp);
                next.u = next.u.scale(c);
            }
        }

        let (s, vol) = sample(next.u.values(), t_next);
        let increase = (s.energy - last.energy) / (1.0 + last.energy.abs());
        checks.max_energy_increase = checks.max_energy_increase.max(increase);
        if increase > MONOTONE_TOL {
            checks.energy_monotone = false;
        }
        checks.max_volume_drift = checks.max_volume_drift.max((vol - vol0).abs() / vol0);
        within(s.f_volume, &mut checks);
        checks.steps = k;

        let done = k == total;
        let converged = s.grad_l2 < controls.stop_tol;
        if k % controls.cadence == 0 || done || converged {
            samples.push(s);
        }
        last = s;
        state = next;
        if converged {
            termination = Some(Termination::Converged { grad_l2: s.grad_l2 });
        } else if done {
            termination = Some(Termination::HorizonReached);
        }
    }
    if samples.last().map(|s| s.t) != Some(last.t) {
        samples.push(last);
    }
    if checks.max_energy_increase == f64::NEG_INFINITY {
        checks.max_energy_increase = 0.0;
    }

    Ok(FlowTrace {
        samples,
        u_ref,
        final_u: state.u,
        termination: termination.expect("loop exits with a reason"),
        checks,
    })
}
