//! Convergence-rate fitting and Lojasiewicz exponent estimation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowTrace;

const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `A e^{-rate t}`.
    Exponential,
    /// `A (1+t)^{-rate}`.
    Polynomial,
}

impl fmt::Display for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateModel::Exponential => "exponential",
            RateModel::Polynomial => "polynomial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub rate: f64,
    pub amplitude: f64,
    /// RMS residual of the fit in log y.
    pub log_residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Default fitting window.
///
/// When the series spans more than three decades, samples within one decade
/// of its minimum are treated as floor and dropped. The window is then the
/// trailing half (in time) of what remains, widened backwards if needed so it
/// holds at least ten samples.
pub fn default_window(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if t.is_empty() || t.len() != y.len() {
        return None;
    }
    let positive: Vec<f64> = y.iter().copied().filter(|v| *v > 0.0).collect();
    let ymin = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = positive.iter().copied().fold(0.0, f64::max);
    let mut last = t.len() - 1;
    if ymin.is_finite() && ymax > 1e3 * ymin {
        let floor = 10.0 * ymin;
        if let Some(k) = y.iter().rposition(|v| *v >= floor) {
            last = k;
        }
    }
    let t_end = t[last];
    let t_mid = 0.5 * (t[0] + t_end);
    let mut first = t.iter().position(|v| *v >= t_mid).unwrap_or(0).min(last);
    if last + 1 - first < MIN_POINTS {
        first = (last + 1).saturating_sub(MIN_POINTS);
    }
    Some((t[first], t_end))
}

fn select(t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<(Vec<f64>, Vec<f64>, (f64, f64))> {
    if t.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} times but {} values", t.len(), y.len())));
    }
    let w = match window {
        Some(w) => w,
        None => default_window(t, y).ok_or(Error::InsufficientSamples {
            found: 0,
            needed: MIN_POINTS,
        })?,
    };
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (a, b) in t.iter().zip(y) {
        if *a >= w.0 && *a <= w.1 {
            ts.push(*a);
            ys.push(*b);
        }
    }
    if ts.len() < MIN_POINTS {
        return Err(Error::InsufficientSamples {
            found: ts.len(),
            needed: MIN_POINTS,
        });
    }
    if ys.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::SeriesNotPositive);
    }
    Ok((ts, ys, w))
}

// Least squares y = a + b x; returns (a, b, rms residual).
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

fn fit(model: RateModel, t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    let (ts, ys, window) = select(t, y, window)?;
    let x: Vec<f64> = match model {
        RateModel::Exponential => ts.clone(),
        RateModel::Polynomial => ts.iter().map(|v| (1.0 + v).ln()).collect(),
    };
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (a, b, log_residual) = linear_fit(&x, &ly);
    // a slope this close to zero is indistinguishable from a constant series
    let scale = ly.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let span = x[x.len() - 1] - x[0];
    if !(b * span < -1e-12 * scale) {
        return Err(Error::NoDecay(b));
    }
    Ok(RateFit {
        model,
        rate: -b,
        amplitude: a.exp(),
        log_residual,
        window,
        points: ts.len(),
    })
}

/// Least squares of `log y` against `t`. `window = None` selects [`default_window`].
pub fn fit_exponential(t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    fit(RateModel::Exponential, t, y, window)
}

/// Least squares of `log y` against `log(1+t)`.
pub fn fit_polynomial(t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    fit(RateModel::Polynomial, t, y, window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Exponential,
    Polynomial,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// The fit with the smaller residual, also when the verdict is ambiguous.
    pub best: RateFit,
    pub exponential: Option<RateFit>,
    pub polynomial: Option<RateFit>,
    pub exponential_error: Option<String>,
    pub polynomial_error: Option<String>,
}

/// Both fits on the default window; ambiguous when their residuals are within 10%.
pub fn classify_rate(t: &[f64], y: &[f64]) -> Result<Classification> {
    let window = default_window(t, y);
    let e = fit_exponential(t, y, window);
    let p = fit_polynomial(t, y, window);
    let (best, verdict) = match (&e, &p) {
        (Ok(a), Ok(b)) => {
            let hi = a.log_residual.max(b.log_residual);
            let lo = a.log_residual.min(b.log_residual);
            let best = if a.log_residual <= b.log_residual { *a } else { *b };
            let verdict = if hi - lo <= 0.1 * hi {
                Verdict::Ambiguous
            } else if best.model == RateModel::Exponential {
                Verdict::Exponential
            } else {
                Verdict::Polynomial
            };
            (best, verdict)
        }
        (Ok(a), Err(_)) => (*a, Verdict::Exponential),
        (Err(_), Ok(b)) => (*b, Verdict::Polynomial),
        (Err(a), Err(b)) => {
            return Err(Error::BothFitsFailed {
                exponential: a.to_string(),
                polynomial: b.to_string(),
            })
        }
    };
    Ok(Classification {
        verdict,
        best,
        exponential_error: e.as_ref().err().map(|x| x.to_string()),
        polynomial_error: p.as_ref().err().map(|x| x.to_string()),
        exponential: e.ok(),
        polynomial: p.ok(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczEstimate {
    pub theta: f64,
    /// Slope of `log |DE|` against `log (E - E_inf)`.
    pub slope: f64,
    pub residual: f64,
    pub points: usize,
}

/// `theta = 1 - s` with `s` the slope of `log |DE|` against `log (E - E_inf)`.
///
/// Samples whose energy gap is below `100 eps max(1, |E_inf|)` are dropped.
pub fn lojasiewicz_estimate(energy: &[f64], grad: &[f64], e_inf: f64) -> Result<LojasiewiczEstimate> {
    if energy.len() != grad.len() {
        return Err(Error::InvalidArgument(format!(
            "{} energies but {} gradient norms",
            energy.len(),
            grad.len()
        )));
    }
    for (k, w) in energy.windows(2).enumerate() {
        let increase = w[1] - w[0];
        if increase > 1e-9 * (1.0 + w[0].abs()) {
            return Err(Error::EnergyNotMonotone { index: k + 1, increase });
        }
    }
    let floor = 100.0 * f64::EPSILON * e_inf.abs().max(1.0);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (e, g) in energy.iter().zip(grad) {
        let gap = e - e_inf;
        if gap > floor && *g > 0.0 && g.is_finite() {
            x.push(gap.ln());
            y.push(g.ln());
        }
    }
    if x.len() < 3 {
        return Err(Error::InsufficientSamples {
            found: x.len(),
            needed: 3,
        });
    }
    let (_, s, residual) = linear_fit(&x, &y);
    Ok(LojasiewiczEstimate {
        theta: 1.0 - s,
        slope: s,
        residual,
        points: x.len(),
    })
}

/// Fits attached to a finished run; failures are kept as messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub dist_l2: std::result::Result<Classification, String>,
    pub theta: std::result::Result<LojasiewiczEstimate, String>,
}

/// Rate classification of `dist_l2` and the Lojasiewicz estimate with `E_inf`
/// taken as the last recorded energy.
pub fn analyze_trace(trace: &FlowTrace) -> TraceAnalysis {
    let t = trace.times();
    let d = trace.column(|s| s.dist_l2);
    let e = trace.column(|s| s.energy);
    let g = trace.column(|s| s.grad_l2);
    let e_inf = *e.last().expect("trace is never empty");
    TraceAnalysis {
        dist_l2: classify_rate(&t, &d).map_err(|x| x.to_string()),
        theta: lojasiewicz_estimate(&e, &g, e_inf).map_err(|x| x.to_string()),
    }
}
