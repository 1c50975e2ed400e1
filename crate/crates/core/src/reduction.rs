//! Reduced dynamics near a degenerate critical metric: the cubic term, the
//! slow-mode ansatz, linear solvers for the kernel and non-kernel components
//! with their weighted norms, the warped kernel equation and the AS_3 check.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_metric, FSpec, FieldSample, MetricFamily, RadialGrid, WarpedMetric};
use crate::quadrature::{central_derivative6, GaussLegendre};
use crate::spectral::{assemble, eigendecompose};

// ---------------------------------------------------------------- cubic term

/// Measure used for the cubic term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `omega_{n-1} w^{n-1} dr`, the volume element of the warped metric.
    #[default]
    Geometric,
    /// `alpha(n) n r^{n-1} dr` with `alpha(n)` the unit-ball volume.
    PaperRadial,
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Convention::Geometric),
            "paper" | "paper_radial" => Ok(Convention::PaperRadial),
            other => Err(Error::UnknownConvention(other.to_string())),
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Geometric => "geometric",
            Convention::PaperRadial => "paper_radial",
        })
    }
}

/// `F_3(v) = P int R v^3 dmu` with `P = 8(n+2)/(n-2)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicTerm {
    pub convention: Convention,
    /// `int_0^pi rho(r) v^3 dr` with density `rho = w^{n-1}` or `r^{n-1}`; no curvature, no sphere constant.
    pub radial_integral: f64,
    /// `int R v^3 dmu`.
    pub weighted_integral: f64,
    pub prefactor: f64,
    pub value: f64,
}

pub fn cubic_prefactor(n: usize) -> f64 {
    let n = n as f64;
    8.0 * (n + 2.0) / ((n - 2.0) * (n - 2.0))
}

pub fn cubic_term(metric: &WarpedMetric, v: &FieldSample, convention: Convention) -> Result<CubicTerm> {
    metric.check_field(v)?;
    let n = metric.dim();
    let h = metric.grid().spacing();
    let nodes = metric.grid().nodes();
    let r = metric.scalar_curvature();
    let v3: Vec<f64> = v.values().iter().map(|x| x * x * x).collect();
    let (radial_integral, weighted_integral) = match convention {
        Convention::Geometric => {
            let radial: f64 = v3.iter().zip(metric.mass()).map(|(a, m)| a * m).sum::<f64>() * h;
            let weighted = metric.integrate_values(
                &v3.iter().zip(r.values()).map(|(a, b)| a * b).collect::<Vec<_>>(),
            );
            (radial, weighted)
        }
        Convention::PaperRadial => {
            let density: Vec<f64> = nodes.iter().map(|x| x.powi(n as i32 - 1)).collect();
            let plain: Vec<f64> = v3.iter().zip(&density).map(|(a, d)| a * d).collect();
            let with_r: Vec<f64> = plain.iter().zip(r.values()).map(|(a, b)| a * b).collect();
            // alpha(n) n equals the sphere area omega_{n-1}
            let constant = metric.sphere_area();
            (end_corrected_midpoint(&plain, h), constant * end_corrected_midpoint(&with_r, h))
        }
    };
    let prefactor = cubic_prefactor(n);
    Ok(CubicTerm {
        convention,
        radial_integral,
        weighted_integral,
        prefactor,
        value: prefactor * weighted_integral,
    })
}

// Midpoint rule with the leading Euler-Maclaurin endpoint correction; the
// endpoint derivatives come from second-order one-sided differences.
fn end_corrected_midpoint(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let sum: f64 = values.iter().sum::<f64>() * h;
    if n < 3 {
        return sum;
    }
    let da = (-2.0 * values[0] + 3.0 * values[1] - values[2]) / h;
    let db = (2.0 * values[n - 1] - 3.0 * values[n - 2] + values[n - 3]) / h;
    sum + h * h / 24.0 * (db - da)
}

// ---------------------------------------------------------------- ansatz

/// Data of the slow-mode profile `phi(t) = a(t) v_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub p: u32,
    pub v_hat: Vec<f64>,
    pub fp_vhat: f64,
    pub t_offset: f64,
    pub dim: usize,
}

impl AnsatzSpec {
    /// `v_hat` is a coordinate vector in an orthonormal kernel basis and must have unit length.
    pub fn new(p: u32, v_hat: Vec<f64>, fp_vhat: f64, t_offset: f64, dim: usize) -> Result<Self> {
        if p < 3 {
            return Err(Error::InvalidArgument(format!("order of integrability must be at least 3, got {p}")));
        }
        if dim < 3 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if !(fp_vhat > 0.0) {
            return Err(Error::AsViolated(fp_vhat));
        }
        if !(t_offset > 0.0) || !t_offset.is_finite() {
            return Err(Error::InvalidArgument(format!("T must be positive, got {t_offset}")));
        }
        let norm = v_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_hat.is_empty() || (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("v_hat must be a unit vector, norm is {norm}")));
        }
        Ok(Self {
            p,
            v_hat,
            fp_vhat,
            t_offset,
            dim,
        })
    }

    /// A one-dimensional kernel spanned by `v_hat = 1`.
    pub fn scalar(p: u32, fp_vhat: f64, t_offset: f64, dim: usize) -> Result<Self> {
        Self::new(p, vec![1.0], fp_vhat, t_offset, dim)
    }

    fn coefficient(&self) -> f64 {
        let p = self.p as f64;
        let n = self.dim as f64;
        (8.0 / ((n - 2.0) * p * (p - 2.0) * self.fp_vhat)).powf(1.0 / (p - 2.0))
    }

    /// `|phi(t)|`.
    pub fn amplitude(&self, t: f64) -> f64 {
        let p = self.p as f64;
        (self.t_offset + t).powf(-1.0 / (p - 2.0)) * self.coefficient()
    }

    /// `d|phi|/dt`.
    pub fn amplitude_derivative(&self, t: f64) -> f64 {
        let p = self.p as f64;
        -self.amplitude(t) / ((p - 2.0) * (self.t_offset + t))
    }

    /// `DF_p(s v_hat)` along `v_hat` for a one-dimensional kernel, `F_p(s v_hat) = F_p(v_hat) s^p`.
    pub fn reduced_gradient(&self, s: f64) -> f64 {
        self.p as f64 * self.fp_vhat * s.powi(self.p as i32 - 1)
    }

    /// `|(8/(n-2)) a' + DF_p(a)| / |(8/(n-2)) a'|` at time t.
    pub fn residual(&self, t: f64) -> f64 {
        let lead = 8.0 / (self.dim as f64 - 2.0) * self.amplitude_derivative(t);
        (lead + self.reduced_gradient(self.amplitude(t))).abs() / lead.abs()
    }
}

pub fn ansatz_phi(spec: &AnsatzSpec, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t must be nonnegative, got {t}")));
    }
    if !(spec.fp_vhat > 0.0) {
        return Err(Error::AsViolated(spec.fp_vhat));
    }
    let a = spec.amplitude(t);
    Ok(spec.v_hat.iter().map(|v| a * v).collect())
}

// ---------------------------------------------------------------- linear solvers

pub type Forcing = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn forcing(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Forcing {
    Arc::new(f)
}

/// `(8/(n-2)) u_j' + (mu_j / (T+t)) u_j = E_j(t)`.
#[derive(Clone)]
pub struct KernelODEProblem {
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub t_offset: f64,
    pub dim: usize,
    pub forcing: Vec<Forcing>,
}

impl fmt::Debug for KernelODEProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelODEProblem")
            .field("mu", &self.mu)
            .field("gamma", &self.gamma)
            .field("t_offset", &self.t_offset)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl KernelODEProblem {
    pub fn new(mu: Vec<f64>, gamma: f64, t_offset: f64, dim: usize, forcing: Vec<Forcing>) -> Result<Self> {
        if dim < 3 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if mu.len() != forcing.len() || mu.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} eigenvalues but {} forcing components",
                mu.len(),
                forcing.len()
            )));
        }
        if !(t_offset > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {t_offset}")));
        }
        let c = (dim as f64 - 2.0) / 8.0;
        for &m in &mu {
            let resonance = c * m;
            if (gamma - resonance).abs() <= 1e-8 {
                return Err(Error::ResonantExponent { gamma, resonance });
            }
        }
        Ok(Self {
            mu,
            gamma,
            t_offset,
            dim,
            forcing,
        })
    }

    fn kappa(&self, j: usize) -> f64 {
        (self.dim as f64 - 2.0) * self.mu[j] / 8.0
    }

    /// `max_j |gamma - (n-2) mu_j / 8|^{-1} (n-2)/8`.
    pub fn bound_constant(&self) -> f64 {
        let c = (self.dim as f64 - 2.0) / 8.0;
        (0..self.mu.len())
            .map(|j| c / (self.gamma - self.kappa(j)).abs())
            .fold(0.0, f64::max)
    }
}

/// `u_i' + delta_i u_i = E_i(t)`.
#[derive(Clone)]
pub struct OrthogonalProblem {
    pub deltas: Vec<f64>,
    pub q: f64,
    pub t_offset: f64,
    pub forcing: Vec<Forcing>,
}

impl fmt::Debug for OrthogonalProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrthogonalProblem")
            .field("deltas", &self.deltas)
            .field("q", &self.q)
            .field("t_offset", &self.t_offset)
            .finish_non_exhaustive()
    }
}

impl OrthogonalProblem {
    pub fn new(deltas: Vec<f64>, q: f64, t_offset: f64, forcing: Vec<Forcing>) -> Result<Self> {
        if deltas.len() != forcing.len() || deltas.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} modes but {} forcing components",
                deltas.len(),
                forcing.len()
            )));
        }
        if let Some(&d) = deltas.iter().find(|d| d.abs() <= 1e-8) {
            return Err(Error::NearKernelMode(d));
        }
        if !(t_offset > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {t_offset}")));
        }
        Ok(Self {
            deltas,
            q,
            t_offset,
            forcing,
        })
    }
}

/// How per-component values combine into one norm at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentNorm {
    MaxAbs,
    Euclidean,
}

impl ComponentNorm {
    fn apply(self, xs: impl Iterator<Item = f64>) -> f64 {
        match self {
            ComponentNorm::MaxAbs => xs.fold(0.0, |m, x| m.max(x.abs())),
            ComponentNorm::Euclidean => xs.map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// Sampled solution; `values[j][i]` is component j at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
    pub component_norm: ComponentNorm,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norm_at(&self, i: usize) -> f64 {
        self.component_norm.apply(self.values.iter().map(|c| c[i]))
    }

    pub fn derivative_norm_at(&self, i: usize) -> f64 {
        self.component_norm.apply(self.derivatives.iter().map(|c| c[i]))
    }

    /// A trajectory of the forcing sampled on the same times, with the same component norm.
    pub fn sample_forcing(&self, forcing: &[Forcing]) -> Trajectory {
        let values: Vec<Vec<f64>> = forcing.iter().map(|f| self.times.iter().map(|&t| f(t)).collect()).collect();
        Trajectory {
            times: self.times.clone(),
            derivatives: vec![vec![0.0; self.times.len()]; values.len()],
            values,
            component_norm: self.component_norm,
        }
    }
}

const GL_ORDER: usize = 10;
const LOG_STEP: f64 = 0.01;

/// Samples on a grid uniform in `log(T + t)` over `[0, horizon]`.
pub fn kernel_ode_solve(problem: &KernelODEProblem, horizon: f64) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let t0 = problem.t_offset;
    let x0 = t0.ln();
    let x1 = (t0 + horizon).ln();
    let steps = (((x1 - x0) / LOG_STEP).ceil() as usize).max(64);
    let dx = (x1 - x0) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|i| x0 + i as f64 * dx).collect();
    let mut times: Vec<f64> = xs.iter().map(|x| x.exp() - t0).collect();
    times[0] = 0.0;
    times[steps] = horizon;

    let gl = GaussLegendre::new(GL_ORDER);
    let c = (problem.dim as f64 - 2.0) / 8.0;
    let mut values = Vec::with_capacity(problem.mu.len());
    let mut derivatives = Vec::with_capacity(problem.mu.len());
    for j in 0..problem.mu.len() {
        let kappa = problem.kappa(j);
        let e = &problem.forcing[j];
        // integrand in x = log(T + tau): (T + tau)^{kappa + 1} E(tau)
        let g = |x: f64| {
            let s = x.exp();
            s.powf(kappa + 1.0) * e(s - t0)
        };
        let panels: Vec<f64> = (0..steps).map(|i| gl.integrate(xs[i], xs[i + 1], &g)).collect();
        let u: Vec<f64> = if problem.gamma > kappa {
            let tail = tail_integral(&g, x1, kappa, &gl)?;
            let mut acc = tail;
            let mut out = vec![0.0; steps + 1];
            for i in (0..=steps).rev() {
                out[i] = -c * (t0 + times[i]).powf(-kappa) * acc;
                if i > 0 {
                    acc += panels[i - 1];
                }
            }
            out
        } else {
            let mut acc = 0.0;
            let mut out = vec![0.0; steps + 1];
            for i in 0..=steps {
                if i > 0 {
                    acc += panels[i - 1];
                }
                out[i] = c * (t0 + times[i]).powf(-kappa) * acc;
            }
            out
        };
        let du: Vec<f64> = times
            .iter()
            .zip(&u)
            .map(|(&t, &ui)| c * e(t) - kappa * ui / (t0 + t))
            .collect();
        values.push(u);
        derivatives.push(du);
    }
    Ok(Trajectory {
        times,
        values,
        derivatives,
        component_norm: ComponentNorm::MaxAbs,
    })
}

// int_{x_start}^inf g(x) dx. Marches panels until the integrand is negligible
// or 60 log-units have passed, then closes with the exponential whose rate is
// fitted to the mass of |g| over the last two 10-unit blocks (a power law in
// T + tau; blocks this long average out log-periodic oscillation).
fn tail_integral(g: &dyn Fn(f64) -> f64, x_start: f64, kappa: f64, gl: &GaussLegendre) -> Result<f64> {
    const WIDTH: f64 = 0.05;
    const SPAN: f64 = 60.0;
    const BLOCK: f64 = 10.0;
    let window = (BLOCK / WIDTH).round() as usize;
    let mut total = 0.0;
    let mut scale = 0.0f64;
    let mut ends: Vec<(f64, f64)> = Vec::new();
    let mut x = x_start;
    ends.push((x, g(x)));
    while x - x_start < SPAN {
        let next = x + WIDTH;
        let piece = gl.integrate(x, next, g);
        total += piece;
        scale = scale.max(piece.abs());
        x = next;
        let gx = g(x);
        if !gx.is_finite() {
            return Err(Error::ForcingNotIntegrable(format!("integrand not finite at log(T+t) = {x}")));
        }
        ends.push((x, gx));
        if ends.len() > window && gx.abs() < 1e-17 * scale.max(f64::MIN_POSITIVE) {
            return Ok(total);
        }
        if gx == 0.0 && ends.iter().rev().take(window).all(|e| e.1 == 0.0) {
            return Ok(total);
        }
    }
    let recent = &ends[ends.len() - 2 * window - 1..];
    let mass = |s: &[(f64, f64)]| s.windows(2).map(|p| 0.5 * (p[0].1.abs() + p[1].1.abs())).sum::<f64>();
    let (a, b) = (mass(&recent[..=window]), mass(&recent[window..]));
    if a == 0.0 && b == 0.0 {
        return Ok(total);
    }
    let sigma = (a / b).ln() / BLOCK;
    // sigma = rho - kappa - 1 where E ~ (T+tau)^{-rho}
    if !(sigma > 1e-3) {
        return Err(Error::ForcingNotIntegrable(format!(
            "fitted decay exponent {} does not exceed kappa + 1 = {}",
            sigma + kappa + 1.0,
            kappa + 1.0
        )));
    }
    let last = ends[ends.len() - 1];
    Ok(total + last.1 / sigma)
}

const HEAT_STEP: f64 = 0.01;

/// Samples on a uniform grid of `[0, horizon]`.
pub fn heat_mode_solve(problem: &OrthogonalProblem, horizon: f64) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let dmax = problem.deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let step = HEAT_STEP.min(0.05 / dmax);
    let steps = ((horizon / step).ceil() as usize).max(64);
    let dt = horizon / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let gl = GaussLegendre::new(GL_ORDER);

    let mut values = Vec::with_capacity(problem.deltas.len());
    let mut derivatives = Vec::with_capacity(problem.deltas.len());
    for (delta, e) in problem.deltas.iter().copied().zip(&problem.forcing) {
        let mut u = vec![0.0; steps + 1];
        if delta > 0.0 {
            let decay = (-delta * dt).exp();
            for k in 0..steps {
                let t1 = times[k + 1];
                let inc = gl.integrate(times[k], t1, |tau| (delta * (tau - t1)).exp() * e(tau));
                u[k + 1] = decay * u[k] + inc;
            }
        } else {
            let tn = times[steps];
            let span = 32.3 / delta.abs();
            let panels = (span / dt.min(0.5 / delta.abs())).ceil() as usize;
            u[steps] = -gl.composite(tn, tn + span, panels, |tau| (delta * (tau - tn)).exp() * e(tau));
            let growth = (delta * dt).exp();
            for k in (0..steps).rev() {
                let t0 = times[k];
                let inc = gl.integrate(t0, times[k + 1], |tau| (delta * (tau - t0)).exp() * e(tau));
                u[k] = growth * u[k + 1] - inc;
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::ForcingNotIntegrable(format!("solution of mode delta = {delta} is not finite")));
        }
        let du: Vec<f64> = times.iter().zip(&u).map(|(&t, &ui)| e(t) - delta * ui).collect();
        values.push(u);
        derivatives.push(du);
    }
    Ok(Trajectory {
        times,
        values,
        derivatives,
        component_norm: ComponentNorm::Euclidean,
    })
}

/// Weighted sup over samples of `(8/(n-2)) u' + mu/(T+t) u - E`, weight `(T+t)^{1+gamma}`.
///
/// The derivative is a sixth-order difference in `log(T+t)` of the sampled
/// solution, independent of the analytic derivative stored in the trajectory.
pub fn kernel_ode_residual(problem: &KernelODEProblem, traj: &Trajectory) -> f64 {
    let t0 = problem.t_offset;
    let dx = (t0 + traj.times[1]).ln() - t0.ln();
    let lead = 8.0 / (problem.dim as f64 - 2.0);
    let mut worst = 0.0f64;
    for (j, u) in traj.values.iter().enumerate() {
        let d = central_derivative6(u, dx);
        for (i, di) in d.iter().enumerate() {
            if let Some(dudx) = di {
                let s = t0 + traj.times[i];
                let res = lead * dudx / s + problem.mu[j] / s * u[i] - (problem.forcing[j])(traj.times[i]);
                worst = worst.max(s.powf(1.0 + problem.gamma) * res.abs());
            }
        }
    }
    worst
}

/// Weighted sup of `u' + delta u - E`, weight `(T+t)^q`, derivative by finite differences.
pub fn heat_mode_residual(problem: &OrthogonalProblem, traj: &Trajectory) -> f64 {
    let dt = traj.times[1] - traj.times[0];
    let mut worst = 0.0f64;
    for (j, u) in traj.values.iter().enumerate() {
        let d = central_derivative6(u, dt);
        for (i, di) in d.iter().enumerate() {
            if let Some(du) = di {
                let t = traj.times[i];
                let res = du + problem.deltas[j] * u[i] - (problem.forcing[j])(t);
                worst = worst.max((problem.t_offset + t).powf(problem.q) * res.abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `sup (T+t)^gamma |u|`.
    SupGamma,
    /// `sup (T+t)^gamma |u| + sup (T+t)^{1+gamma} |u'|`.
    Sup1GammaWithDerivative,
    /// `sup (T+t)^q |u|_2`.
    L2Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorm {
    /// Sup over the sampled horizon.
    pub value: f64,
    /// Log-log slope of the weighted quantity over the last decade of `T + t`.
    pub tail_exponent: f64,
    /// False when the weighted quantity is still growing at the end of the horizon.
    pub bounded: bool,
}

pub fn weighted_norm(traj: &Trajectory, exponent: f64, t_offset: f64, kind: NormKind) -> Result<WeightedNorm> {
    if traj.len() < 10 {
        return Err(Error::InsufficientSamples {
            found: traj.len(),
            needed: 10,
        });
    }
    let weighted: Vec<f64> = (0..traj.len())
        .map(|i| {
            let s = t_offset + traj.times[i];
            match kind {
                NormKind::SupGamma => s.powf(exponent) * traj.norm_at(i),
                NormKind::Sup1GammaWithDerivative => {
                    s.powf(exponent) * traj.norm_at(i) + s.powf(1.0 + exponent) * traj.derivative_norm_at(i)
                }
                NormKind::L2Q => {
                    let l2 = traj.values.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt();
                    s.powf(exponent) * l2
                }
            }
        })
        .collect();
    let value = weighted.iter().fold(0.0f64, |m, v| m.max(*v));

    let s_end = t_offset + traj.times[traj.len() - 1];
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (i, w) in weighted.iter().enumerate() {
        let s = t_offset + traj.times[i];
        if s >= s_end / 10.0 && *w > 0.0 {
            lx.push(s.ln());
            ly.push(w.ln());
        }
    }
    let tail_exponent = if lx.len() >= 2 { slope(&lx, &ly) } else { 0.0 };
    Ok(WeightedNorm {
        value,
        tail_exponent,
        bounded: tail_exponent <= 1e-6,
    })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

// ---------------------------------------------------------------- warped kernel

#[derive(Debug, Clone)]
pub struct WarpedKernel {
    pub psi: FieldSample,
    /// Eigenvalue of the discrete operator nearest zero.
    pub eigenvalue: f64,
    pub kernel_tol: f64,
    /// L2 norm of the discrete radial equation applied to psi.
    pub residual: f64,
    pub psi_norm: f64,
}

/// Eigenfield of `(n-1) Lap + R` nearest eigenvalue 0, scaled to the L2 norm of
/// `cos r` with a nonnegative first sample.
pub fn warped_kernel_solve(metric: &WarpedMetric) -> Result<WarpedKernel> {
    let op = assemble(metric);
    let decomp = eigendecompose(&op, None)?;
    let i = decomp.nearest(0.0);
    let eigenvalue = decomp.eigenvalues[i];
    let limit = 100.0 * decomp.kernel_tol;
    if eigenvalue.abs() > limit {
        return Err(Error::NoApproximateKernelMode { eigenvalue, limit });
    }
    let cos = FieldSample::from_fn(metric.grid().clone(), f64::cos);
    let target = metric.l2_norm(&cos)?;
    let field = &decomp.eigenfields[i];
    let mut scale = target / metric.l2_norm(field)?;
    if field.values()[0] < 0.0 {
        scale = -scale;
    }
    let psi = field.scale(scale);
    let n1 = metric.dim() as f64 - 1.0;
    let applied = op.apply(&psi)?.scale(1.0 / n1);
    Ok(WarpedKernel {
        residual: metric.l2_norm(&applied)?,
        psi_norm: metric.l2_norm(&psi)?,
        psi,
        eigenvalue,
        kernel_tol: decomp.kernel_tol,
    })
}

// ---------------------------------------------------------------- AS_3

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct As3Report {
    pub dim: usize,
    pub n_cells: usize,
    pub eps: f64,
    pub convention: Convention,
    pub lambda_nearest_zero: f64,
    pub kernel_tol: f64,
    pub psi: Vec<f64>,
    /// `|psi - cos r|_inf`.
    pub psi_cos_distance: f64,
    pub f3_geometric: CubicTerm,
    pub f3_paper_radial: CubicTerm,
    /// `max R - min R`.
    pub curvature_spread: f64,
    /// F_3 of the round metric on the same grid under the chosen convention.
    pub f3_round: f64,
    /// `|F_3(eps) - F_3(0)| / |eps|`; absent when eps = 0.
    pub continuity_constant: Option<f64>,
    /// `|psi - cos r|_inf / |eps|`; absent when eps = 0.
    pub psi_constant: Option<f64>,
    pub threshold: f64,
    pub holds: bool,
    pub verdict: String,
}

pub fn as3_check(grid: &Arc<RadialGrid>, eps: f64, f_spec: &FSpec, convention: Convention) -> Result<As3Report> {
    if grid.dim() != 3 {
        return Err(Error::InvalidArgument(format!("AS_3 check is specific to n = 3, got n = {}", grid.dim())));
    }
    let family = if eps == 0.0 { MetricFamily::Round } else { MetricFamily::Eps(eps) };
    let metric = sample_metric(grid.clone(), family, f_spec)?;
    let kernel = warped_kernel_solve(&metric)?;
    let f3_geometric = cubic_term(&metric, &kernel.psi, Convention::Geometric)?;
    let f3_paper_radial = cubic_term(&metric, &kernel.psi, Convention::PaperRadial)?;
    let chosen = match convention {
        Convention::Geometric => f3_geometric,
        Convention::PaperRadial => f3_paper_radial,
    };

    let round = sample_metric(grid.clone(), MetricFamily::Round, f_spec)?;
    let round_kernel = warped_kernel_solve(&round)?;
    let f3_round = cubic_term(&round, &round_kernel.psi, convention)?.value;

    let cos = FieldSample::from_fn(grid.clone(), f64::cos);
    let psi_cos_distance = kernel.psi.axpy(-1.0, &cos)?.sup_norm();
    let r = metric.scalar_curvature();

    // scale of the integrand with the cancellation removed
    let abs_psi = kernel.psi.map(f64::abs);
    let magnitude = cubic_term(&metric, &abs_psi, convention)?.value.abs();
    let threshold = 1e-8 * magnitude.max(f64::MIN_POSITIVE);
    let holds = chosen.value.abs() > threshold;
    let verdict = if holds {
        format!("AS_3 holds (F_3 = {:.6e} is nonzero under the {} convention)", chosen.value, convention)
    } else {
        format!("inconclusive under {} convention (|F_3| <= {:.3e})", convention, threshold)
    };
    let (continuity_constant, psi_constant) = if eps == 0.0 {
        (None, None)
    } else {
        (
            Some((chosen.value - f3_round).abs() / eps.abs()),
            Some(psi_cos_distance / eps.abs()),
        )
    };
    Ok(As3Report {
        dim: grid.dim(),
        n_cells: grid.n_cells(),
        eps,
        convention,
        lambda_nearest_zero: kernel.eigenvalue,
        kernel_tol: kernel.kernel_tol,
        psi: kernel.psi.values().to_vec(),
        psi_cos_distance,
        f3_geometric,
        f3_paper_radial,
        curvature_spread: r.max() - r.min(),
        f3_round,
        continuity_constant,
        psi_constant,
        threshold,
        holds,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_grid;
    use std::f64::consts::PI;

    fn round(n: usize, cells: usize) -> WarpedMetric {
        sample_metric(make_grid(n, cells).unwrap(), MetricFamily::Round, &FSpec::CurvatureNormalized).unwrap()
    }

    #[test]
    fn paper_radial_integral() {
        let m = round(3, 2048);
        let cos = FieldSample::from_fn(m.grid().clone(), f64::cos);
        let t = cubic_term(&m, &cos, Convention::PaperRadial).unwrap();
        assert!((t.radial_integral + 14.0 * PI / 9.0).abs() < 1e-8, "{}", t.radial_integral);
        assert!(t.value < 0.0);
        let g = cubic_term(&m, &cos, Convention::Geometric).unwrap();
        assert!(g.radial_integral.abs() < 1e-10);
        assert!(g.value.abs() < 1e-10);
    }

    #[test]
    fn cubic_homogeneity() {
        let m = sample_metric(make_grid(4, 64).unwrap(), MetricFamily::Eps(0.1), &FSpec::Normalized).unwrap();
        let v = FieldSample::from_fn(m.grid().clone(), |r| r.cos() + 0.3 * r.sin());
        for conv in [Convention::Geometric, Convention::PaperRadial] {
            let a = cubic_term(&m, &v, conv).unwrap().value;
            let b = cubic_term(&m, &v.scale(-2.0), conv).unwrap().value;
            assert!((b + 8.0 * a).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn convention_tags() {
        assert_eq!("paper".parse::<Convention>().unwrap(), Convention::PaperRadial);
        assert!(matches!("other".parse::<Convention>(), Err(Error::UnknownConvention(_))));
    }

    #[test]
    fn ansatz_value() {
        let s = AnsatzSpec::scalar(3, 2.0, 10.0, 3).unwrap();
        let phi = ansatz_phi(&s, 0.0).unwrap();
        assert!((phi[0] - 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn ansatz_rejects_bad_specs() {
        assert!(matches!(AnsatzSpec::scalar(3, -1.0, 1.0, 3), Err(Error::AsViolated(_))));
        assert!(AnsatzSpec::scalar(2, 1.0, 1.0, 3).is_err());
        assert!(AnsatzSpec::new(3, vec![0.6, 0.7], 1.0, 1.0, 3).is_err());
        assert!(AnsatzSpec::new(3, vec![0.6, 0.8], 1.0, 1.0, 3).is_ok());
    }

    #[test]
    fn ansatz_derivative_matches_difference() {
        let s = AnsatzSpec::scalar(5, 0.7, 3.0, 4).unwrap();
        for t in [0.0, 1.0, 100.0] {
            let h = 1e-4 * (s.t_offset + t);
            let fd = (s.amplitude(t + h) - s.amplitude(t - h)) / (2.0 * h);
            let a = s.amplitude_derivative(t);
            assert!((fd - a).abs() < 1e-7 * a.abs());
            assert!(s.residual(t) < 1e-12);
        }
    }

    #[test]
    fn ansatz_power_law() {
        let s = AnsatzSpec::scalar(4, 1.0, 10.0, 3).unwrap();
        let (t1, t2) = (1e3, 1e6);
        let sl = (s.amplitude(t2).ln() - s.amplitude(t1).ln()) / ((10.0 + t2).ln() - (10.0 + t1).ln());
        assert!((sl + 0.5).abs() < 1e-3);
    }

    #[test]
    fn kernel_ode_closed_form() {
        let gamma = 0.5;
        let t0 = 2.0;
        let p = KernelODEProblem::new(vec![0.0], gamma, t0, 3, vec![forcing(move |t| (t0 + t).powf(-1.0 - gamma))]).unwrap();
        let traj = kernel_ode_solve(&p, 100.0).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let exact = -(1.0 / (8.0 * gamma)) * (t0 + t).powf(-gamma);
            assert!((traj.values[0][i] - exact).abs() < 1e-12 * exact.abs(), "t={t}");
        }
        assert!(kernel_ode_residual(&p, &traj) < 1e-8);
    }

    #[test]
    fn kernel_ode_forward_branch() {
        // mu large: kappa = 1 > gamma; forward integral from 0
        let t0 = 1.0;
        let p = KernelODEProblem::new(vec![8.0], 0.25, t0, 3, vec![forcing(move |t| (t0 + t).powf(-1.25))]).unwrap();
        let traj = kernel_ode_solve(&p, 50.0).unwrap();
        // closed form: u = (1/8) s^{-1} int_T^s s'^{-0.25} = (1/8) s^{-1} (s^{0.75} - T^{0.75}) / 0.75
        for (i, &t) in traj.times.iter().enumerate() {
            let s: f64 = t0 + t;
            let exact = (s.powf(0.75) - 1.0) / (0.75 * 8.0 * s);
            assert!((traj.values[0][i] - exact).abs() < 1e-12);
        }
        assert!(kernel_ode_residual(&p, &traj) < 1e-8);
    }

    #[test]
    fn kernel_ode_zero_forcing() {
        let p = KernelODEProblem::new(vec![1.0, -2.0], 0.3, 1.0, 4, vec![forcing(|_| 0.0), forcing(|_| 0.0)]).unwrap();
        let traj = kernel_ode_solve(&p, 10.0).unwrap();
        assert!(traj.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn kernel_ode_errors() {
        let e = KernelODEProblem::new(vec![8.0], 1.0, 1.0, 3, vec![forcing(|_| 1.0)]);
        assert!(matches!(e, Err(Error::ResonantExponent { .. })));
        let p = KernelODEProblem::new(vec![0.0], 0.5, 1.0, 3, vec![forcing(|t| 1.0 / (1.0 + t))]).unwrap();
        assert!(matches!(kernel_ode_solve(&p, 10.0), Err(Error::ForcingNotIntegrable(_))));
    }

    #[test]
    fn heat_closed_forms() {
        let c = 0.7;
        let p = OrthogonalProblem::new(vec![2.0, -1.0], 0.0, 1.0, vec![forcing(move |_| c), forcing(move |_| c)]).unwrap();
        let traj = heat_mode_solve(&p, 5.0).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            assert!((traj.values[0][i] - c / 2.0 * (1.0 - (-2.0 * t).exp())).abs() < 1e-13);
            assert!((traj.values[1][i] + c).abs() < 1e-13);
        }
        assert!(heat_mode_residual(&p, &traj) < 1e-8);
        assert!(matches!(
            OrthogonalProblem::new(vec![1e-9], 0.0, 1.0, vec![forcing(|_| 1.0)]),
            Err(Error::NearKernelMode(_))
        ));
    }

    #[test]
    fn weighted_norm_cases() {
        let t0 = 3.0;
        let gamma = 0.4;
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let values = vec![times.iter().map(|t| (t0 + t).powf(-gamma)).collect::<Vec<_>>()];
        let traj = Trajectory {
            derivatives: vec![vec![0.0; 50]],
            times: times.clone(),
            values,
            component_norm: ComponentNorm::MaxAbs,
        };
        let w = weighted_norm(&traj, gamma, t0, NormKind::SupGamma).unwrap();
        assert!((w.value - 1.0).abs() < 1e-14);
        assert!(w.bounded);
        let grow = weighted_norm(&traj, gamma + 0.5, t0, NormKind::SupGamma).unwrap();
        assert!(!grow.bounded);
        let short = Trajectory {
            times: times[..5].to_vec(),
            values: vec![vec![0.0; 5]],
            derivatives: vec![vec![0.0; 5]],
            component_norm: ComponentNorm::MaxAbs,
        };
        assert!(matches!(weighted_norm(&short, 0.0, 1.0, NormKind::L2Q), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn warped_kernel_round_matches_cos() {
        let mut errs = Vec::new();
        for cells in [64, 128] {
            let m = round(3, cells);
            let k = warped_kernel_solve(&m).unwrap();
            let cos = FieldSample::from_fn(m.grid().clone(), f64::cos);
            let h = m.grid().spacing();
            let e = k.psi.axpy(-1.0, &cos).unwrap().sup_norm();
            assert!(e < 10.0 * h * h);
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5);
    }

    #[test]
    fn as3_round_and_perturbed() {
        let g = make_grid(3, 128).unwrap();
        let r0 = as3_check(&g, 0.0, &FSpec::CurvatureNormalized, Convention::PaperRadial).unwrap();
        assert!(r0.holds && r0.f3_paper_radial.value < 0.0);
        let geo = as3_check(&g, 0.0, &FSpec::CurvatureNormalized, Convention::Geometric).unwrap();
        assert!(!geo.holds && geo.f3_geometric.value.abs() < 1e-10);
        assert!(geo.verdict.contains("inconclusive"));
        let r1 = as3_check(&g, 0.05, &FSpec::CurvatureNormalized, Convention::PaperRadial).unwrap();
        assert!(r1.continuity_constant.unwrap().is_finite());
        assert!(r1.curvature_spread > 0.0);
        assert!(as3_check(&make_grid(4, 32).unwrap(), 0.0, &FSpec::Normalized, Convention::Geometric).is_err());
    }
}
