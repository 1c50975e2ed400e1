//! The normalized total-curvature energy `E_f`, its normalization constant,
//! L2 gradient, dissipation rate and second variation.
//!
//! The Dirichlet term is evaluated as `-int u Lap u`, the same pairing used by
//! the Laplacian, so `<DE_f(u), u> = 0` holds exactly in the discrete setting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_positive, critical_exponent, FieldSample, WarpedMetric};

/// Diagnostics for one conformal factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub alpha: f64,
    pub grad_l2: f64,
    pub dissipation: f64,
    pub f_volume: f64,
}

/// Pieces shared by all energy quantities.
pub(crate) struct Parts {
    pub lap: Vec<f64>,
    pub f_volume: f64,
    pub volume: f64,
    pub alpha: f64,
    pub energy: f64,
}

pub(crate) fn conformal_constant(n: usize) -> f64 {
    let n = n as f64;
    4.0 * (n - 1.0) / (n - 2.0)
}

pub(crate) fn parts(metric: &WarpedMetric, u: &[f64]) -> Parts {
    let n = metric.dim();
    let c = conformal_constant(n);
    let p = critical_exponent(n);
    let lap = metric.apply_laplacian(u);
    let r = metric.curvature_values();
    let f = metric.f();
    let weights = metric.weights();
    let mut numerator = 0.0;
    let mut f_volume = 0.0;
    let mut volume = 0.0;
    for j in 0..u.len() {
        let up = u[j].powf(p);
        numerator += (u[j] * (-c * lap[j]) + r[j] * u[j] * u[j]) * weights[j];
        f_volume += f[j] * up * weights[j];
        volume += up * weights[j];
    }
    let alpha = numerator / f_volume;
    let energy = numerator / f_volume.powf((n as f64 - 2.0) / n as f64);
    Parts {
        lap,
        f_volume,
        volume,
        alpha,
        energy,
    }
}

fn checked_parts(metric: &WarpedMetric, u: &FieldSample) -> Result<Parts> {
    metric.check_field(u)?;
    check_positive(u.values())?;
    Ok(parts(metric, u.values()))
}

pub fn energy(metric: &WarpedMetric, u: &FieldSample) -> Result<f64> {
    Ok(checked_parts(metric, u)?.energy)
}

pub fn alpha_of(metric: &WarpedMetric, u: &FieldSample) -> Result<f64> {
    Ok(checked_parts(metric, u)?.alpha)
}

pub(crate) fn gradient_values(metric: &WarpedMetric, u: &[f64], parts: &Parts) -> Vec<f64> {
    let n = metric.dim() as f64;
    let c = conformal_constant(metric.dim());
    let e = (n + 2.0) / (n - 2.0);
    let scale = 2.0 / parts.f_volume.powf((n - 2.0) / n);
    let r = metric.curvature_values();
    let f = metric.f();
    (0..u.len())
        .map(|j| {
            scale * (-c * parts.lap[j] + r[j] * u[j] - parts.alpha * f[j] * u[j].powf(e))
        })
        .collect()
}

/// `DE_f(u)`, the L2 gradient with respect to the background metric.
pub fn gradient(metric: &WarpedMetric, u: &FieldSample) -> Result<FieldSample> {
    let p = checked_parts(metric, u)?;
    Ok(u.with_values(gradient_values(metric, u.values(), &p)))
}

pub(crate) fn dissipation_values(metric: &WarpedMetric, u: &[f64], parts: &Parts) -> f64 {
    let n = metric.dim() as f64;
    let e = (n + 2.0) / (n - 2.0);
    let pexp = critical_exponent(metric.dim());
    let c = conformal_constant(metric.dim());
    let r = metric.curvature_values();
    let f = metric.f();
    let w = metric.weights();
    let mut acc = 0.0;
    for j in 0..u.len() {
        let rg = (-c * parts.lap[j] + r[j] * u[j]) / u[j].powf(e);
        let d = rg - parts.alpha * f[j];
        acc += d * d * u[j].powf(pexp) * w[j];
    }
    -0.5 * (n - 2.0) * acc / parts.f_volume.powf((n - 2.0) / n)
}

/// Rate of change of `E_f` along the flow.
pub fn dissipation(metric: &WarpedMetric, u: &FieldSample) -> Result<f64> {
    let p = checked_parts(metric, u)?;
    Ok(dissipation_values(metric, u.values(), &p))
}

pub fn report(metric: &WarpedMetric, u: &FieldSample, t: f64) -> Result<EnergyReport> {
    let p = checked_parts(metric, u)?;
    Ok(report_from_parts(metric, u.values(), &p, t))
}

pub(crate) fn report_from_parts(metric: &WarpedMetric, u: &[f64], p: &Parts, t: f64) -> EnergyReport {
    let g = gradient_values(metric, u, p);
    EnergyReport {
        t,
        energy: p.energy,
        alpha: p.alpha,
        grad_l2: metric.inner_values(&g, &g).sqrt(),
        dissipation: dissipation_values(metric, u, p),
        f_volume: p.f_volume,
    }
}

/// How far the background metric is from `int f dV = 1`, `R = alpha f`.
///
/// Returns `(|int f dV - 1|, |R - alpha f|_inf)` with `alpha = int R / int f`.
pub fn normalization_defect(metric: &WarpedMetric) -> (f64, f64) {
    let fv = metric.integrate_values(metric.f());
    let alpha = metric.integrate_values(metric.curvature_values()) / fv;
    let resid = metric
        .curvature_values()
        .iter()
        .zip(metric.f())
        .map(|(r, f)| (r - alpha * f).abs())
        .fold(0.0, f64::max);
    ((fv - 1.0).abs(), resid)
}

/// `D^2 E_f(g)[v, w]` at a normalized critical background metric.
pub fn second_variation(metric: &WarpedMetric, v: &FieldSample, w: &FieldSample) -> Result<f64> {
    metric.check_field(v)?;
    metric.check_field(w)?;
    let (f_volume_error, curvature_residual) = normalization_defect(metric);
    if f_volume_error > 1e-6 || curvature_residual > 1e-6 {
        return Err(Error::NotNormalized {
            f_volume_error,
            curvature_residual,
        });
    }
    let n = metric.dim() as f64;
    let c = conformal_constant(metric.dim());
    let lap = metric.apply_laplacian(v.values());
    let r = metric.curvature_values();
    let weights = metric.weights();
    let mut acc = 0.0;
    for j in 0..lap.len() {
        let vj = v.values()[j];
        let wj = w.values()[j];
        acc += (wj * (-c * lap[j]) - 4.0 / (n - 2.0) * r[j] * vj * wj) * weights[j];
    }
    Ok(2.0 * acc)
}
