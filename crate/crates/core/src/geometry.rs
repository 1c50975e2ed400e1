//! Rotationally symmetric geometry on `[0, pi] x S^{n-1}`.
//!
//! A metric `dr^2 + w(r)^2 g_sphere` is sampled at the centers of a uniform
//! radial grid. The Laplacian is assembled in flux form so that it is
//! self-adjoint for the midpoint quadrature weights `w^{n-1} h omega`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell-centered grid on `(0, pi)` carrying the manifold dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    n_cells: usize,
    spacing: f64,
    nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn new(dim: usize, n_cells: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if n_cells < 8 {
            return Err(Error::GridTooCoarse(n_cells));
        }
        let spacing = PI / n_cells as f64;
        let nodes = (0..n_cells).map(|j| (j as f64 + 0.5) * spacing).collect();
        Ok(Self {
            dim,
            n_cells,
            spacing,
            nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || **self == **other
    }
}

/// Shorthand for `Arc::new(RadialGrid::new(dim, n_cells)?)`.
pub fn make_grid(dim: usize, n_cells: usize) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(dim, n_cells).map(Arc::new)
}

/// Node values of a radial function.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl FieldSample {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::GridMismatch {
                expected: grid.n_cells,
                found: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite field value {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes.iter().map(|&r| f(r)).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<RadialGrid>, c: f64) -> Self {
        let values = vec![c; grid.n_cells];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, values replaced. Used internally where lengths are known to agree.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &FieldSample) -> Result<Self> {
        self.check_grid(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        ))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_grid(&self, other: &FieldSample) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.grid.n_cells,
                found: other.grid.n_cells,
            })
        }
    }
}

/// Warping function samples supplied by the caller. Pole behaviour is trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomProfile {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub wp: Vec<f64>,
    pub wpp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricFamily {
    Round,
    Eps(f64),
    Custom(CustomProfile),
}

impl MetricFamily {
    pub fn tag(&self) -> String {
        match self {
            MetricFamily::Round => "round".into(),
            MetricFamily::Eps(e) => format!("eps:{e}"),
            MetricFamily::Custom(_) => "custom".into(),
        }
    }
}

impl fmt::Display for MetricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Parses `round` and `eps:<float>`. `custom:<path>` needs file access and is
/// resolved by the caller.
impl FromStr for MetricFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "round" {
            return Ok(MetricFamily::Round);
        }
        if let Some(rest) = s.strip_prefix("eps:") {
            let eps: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad eps value `{rest}`")))?;
            return Ok(MetricFamily::Eps(eps));
        }
        Err(Error::InvalidArgument(format!("unknown metric family `{s}`")))
    }
}

/// How the prescribed function f is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FSpec {
    Constant { value: f64 },
    /// Constant with `int f dV = 1`.
    Normalized,
    /// `f = R / int R dV`; makes the background metric critical and normalized.
    CurvatureNormalized,
    /// `base + amplitude * cos(frequency * r)`.
    Cosine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    Samples { values: Vec<f64> },
}

/// `omega_{n-1} = 2 pi^{n/2} / Gamma(n/2)`.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// Volume of the unit n-ball, `pi^{n/2} / Gamma(n/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    PI.powf(n as f64 / 2.0) / gamma_half(n + 2)
}

// Gamma(k/2) for positive integer k.
fn gamma_half(k: usize) -> f64 {
    let (mut g, mut x) = if k % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = k as f64 / 2.0;
    while x < target - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

/// A sampled warped-product metric together with the prescribed function f.
///
/// Immutable after construction; derived quantities (curvature, quadrature
/// weights, Laplacian face coefficients) are computed once.
#[derive(Debug, Clone)]
pub struct WarpedMetric {
    grid: Arc<RadialGrid>,
    family: MetricFamily,
    w: Vec<f64>,
    wp: Vec<f64>,
    wpp: Vec<f64>,
    f: Vec<f64>,
    sphere_area: f64,
    mass: Vec<f64>,
    weights: Vec<f64>,
    faces: Vec<f64>,
    curvature: Vec<f64>,
}

pub fn sample_metric(
    grid: Arc<RadialGrid>,
    family: MetricFamily,
    f_spec: &FSpec,
) -> Result<WarpedMetric> {
    let n = grid.dim as f64;
    let nodes = grid.nodes.clone();
    let (w, wp, wpp): (Vec<f64>, Vec<f64>, Vec<f64>) = match &family {
        MetricFamily::Round => (
            nodes.iter().map(|r| r.sin()).collect(),
            nodes.iter().map(|r| r.cos()).collect(),
            nodes.iter().map(|r| -r.sin()).collect(),
        ),
        MetricFamily::Eps(eps) => {
            let eps = *eps;
            if !(eps.abs() < 0.5) {
                return Err(Error::PerturbationTooLarge(eps.abs()));
            }
            let mut w = Vec::with_capacity(nodes.len());
            let mut wp = Vec::with_capacity(nodes.len());
            let mut wpp = Vec::with_capacity(nodes.len());
            for &r in &nodes {
                let (s, c) = r.sin_cos();
                w.push(s + eps * s * s * s);
                wp.push(c + 3.0 * eps * s * s * c);
                wpp.push(-s + eps * (6.0 * s * c * c - 3.0 * s * s * s));
            }
            (w, wp, wpp)
        }
        MetricFamily::Custom(p) => {
            let len = grid.n_cells;
            if [p.r.len(), p.w.len(), p.wp.len(), p.wpp.len()]
                .iter()
                .any(|&l| l != len)
            {
                return Err(Error::GridMismatch {
                    expected: len,
                    found: p.w.len(),
                });
            }
            for (a, b) in p.r.iter().zip(&nodes) {
                if (a - b).abs() > 1e-9 {
                    return Err(Error::InvalidMetric(format!(
                        "custom profile node {a} does not match grid node {b}"
                    )));
                }
            }
            (p.w.clone(), p.wp.clone(), p.wpp.clone())
        }
    };
    if let Some(bad) = w.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidMetric(format!("w must be positive, found {bad}")));
    }
    if w.iter().chain(&wp).chain(&wpp).any(|v| !v.is_finite()) {
        return Err(Error::InvalidMetric("non-finite warping sample".into()));
    }

    let h = grid.spacing;
    let omega = sphere_area(grid.dim);
    let mass: Vec<f64> = w.iter().map(|v| v.powi(grid.dim as i32 - 1)).collect();
    let weights: Vec<f64> = mass.iter().map(|m| m * h * omega).collect();
    // 1 - w'^2 in closed form where known; the naive difference cancels near the poles
    let one_minus_wp2: Vec<f64> = match &family {
        MetricFamily::Round => nodes.iter().map(|r| r.sin().powi(2)).collect(),
        MetricFamily::Eps(eps) => nodes
            .iter()
            .map(|r| {
                let (s, c) = r.sin_cos();
                s * s * (1.0 - 6.0 * eps * c * c - 9.0 * eps * eps * s * s * c * c)
            })
            .collect(),
        MetricFamily::Custom(_) => wp.iter().map(|d| 1.0 - d * d).collect(),
    };
    let curvature: Vec<f64> = (0..nodes.len())
        .map(|j| -2.0 * (n - 1.0) * wpp[j] / w[j] + (n - 1.0) * (n - 2.0) * one_minus_wp2[j] / (w[j] * w[j]))
        .collect();
    let faces = face_coefficients(&nodes, h, grid.dim, &w, &wp, &mass)?;

    let f = match f_spec {
        FSpec::Constant { value } => vec![*value; nodes.len()],
        FSpec::Normalized => {
            let vol: f64 = weights.iter().sum();
            vec![1.0 / vol; nodes.len()]
        }
        FSpec::CurvatureNormalized => {
            let total: f64 = curvature.iter().zip(&weights).map(|(r, m)| r * m).sum();
            curvature.iter().map(|r| r / total).collect()
        }
        FSpec::Cosine {
            base,
            amplitude,
            frequency,
        } => nodes
            .iter()
            .map(|r| base + amplitude * (frequency * r).cos())
            .collect(),
        FSpec::Samples { values } => {
            if values.len() != nodes.len() {
                return Err(Error::GridMismatch {
                    expected: nodes.len(),
                    found: values.len(),
                });
            }
            values.clone()
        }
    };
    let fmin = f.iter().copied().fold(f64::INFINITY, f64::min);
    if !(fmin > 0.0) || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPositiveF(fmin));
    }

    Ok(WarpedMetric {
        grid,
        family,
        w,
        wp,
        wpp,
        f,
        sphere_area: omega,
        mass,
        weights,
        faces,
        curvature,
    })
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

// Face coefficients a_{j+1/2}, j = -1..N-1, with zero flux through both poles.
//
// Each interior face gets two candidates. The left one makes the scheme exact
// (as a telescoping sum) on chi = r^2 when integrated from the north pole, the
// right one on chi = (pi - r)^2 from the south pole. They are blended with a
// smoothstep in the middle third. Near a pole this reproduces the singular
// radial operator to second order; away from the poles both candidates agree
// with w^{n-1} at the face to O(h^2).
fn face_coefficients(
    nodes: &[f64],
    h: f64,
    dim: usize,
    w: &[f64],
    wp: &[f64],
    mass: &[f64],
) -> Result<Vec<f64>> {
    let n1 = dim as f64 - 1.0;
    let len = nodes.len();
    let lap_l: Vec<f64> = (0..len)
        .map(|j| 2.0 + 2.0 * n1 * nodes[j] * wp[j] / w[j])
        .collect();
    let lap_r: Vec<f64> = (0..len)
        .map(|j| 2.0 - 2.0 * n1 * (PI - nodes[j]) * wp[j] / w[j])
        .collect();

    let mut from_left = vec![0.0; len];
    let mut acc = 0.0;
    for j in 0..len {
        acc += lap_l[j] * mass[j];
        from_left[j] = acc * h;
    }
    let mut from_right = vec![0.0; len];
    acc = 0.0;
    for j in (0..len).rev() {
        from_right[j] = acc * h;
        acc += lap_r[j] * mass[j];
    }

    let mut faces = vec![0.0; len + 1];
    for j in 0..len - 1 {
        let (r0, r1) = (nodes[j], nodes[j + 1]);
        let dl = (r1 * r1 - r0 * r0) / h;
        let dr = ((PI - r1).powi(2) - (PI - r0).powi(2)) / h;
        let a_left = from_left[j] / dl;
        let a_right = -from_right[j] / dr;
        let rf = (j as f64 + 1.0) * h;
        let theta = smoothstep((2.0 * PI / 3.0 - rf) / (PI / 3.0));
        let a = theta * a_left + (1.0 - theta) * a_right;
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidMetric(format!(
                "Laplacian face coefficient {a} at r = {rf} is not positive"
            )));
        }
        faces[j + 1] = a;
    }
    Ok(faces)
}

impl WarpedMetric {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn family(&self) -> &MetricFamily {
        &self.family
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn wp(&self) -> &[f64] {
        &self.wp
    }

    pub fn wpp(&self) -> &[f64] {
        &self.wpp
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn sphere_area(&self) -> f64 {
        self.sphere_area
    }

    /// Quadrature weights `w_j^{n-1} h omega`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w_j^{n-1}`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Flux coefficients at the N+1 faces; the two pole faces are zero.
    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn f_field(&self) -> FieldSample {
        FieldSample {
            grid: self.grid.clone(),
            values: self.f.clone(),
        }
    }

    pub fn scalar_curvature(&self) -> FieldSample {
        FieldSample {
            grid: self.grid.clone(),
            values: self.curvature.clone(),
        }
    }

    pub(crate) fn curvature_values(&self) -> &[f64] {
        &self.curvature
    }

    /// Total volume `int dV`.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn check_field(&self, field: &FieldSample) -> Result<()> {
        if self.grid.same_as(&field.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.grid.n_cells,
                found: field.grid.n_cells,
            })
        }
    }

    pub fn laplacian(&self, field: &FieldSample) -> Result<FieldSample> {
        self.check_field(field)?;
        Ok(field.with_values(self.apply_laplacian(&field.values)))
    }

    pub(crate) fn apply_laplacian(&self, psi: &[f64]) -> Vec<f64> {
        let h2 = self.grid.spacing * self.grid.spacing;
        let len = psi.len();
        let mut out = vec![0.0; len];
        for j in 0..len - 1 {
            let flux = self.faces[j + 1] * (psi[j + 1] - psi[j]);
            out[j] += flux;
            out[j + 1] -= flux;
        }
        for j in 0..len {
            out[j] /= h2 * self.mass[j];
        }
        out
    }

    pub fn integrate(&self, field: &FieldSample) -> Result<f64> {
        self.check_field(field)?;
        Ok(self.integrate_values(&field.values))
    }

    pub(crate) fn integrate_values(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.weights).map(|(a, m)| a * m).sum()
    }

    /// Weighted inner product `int u v dV`.
    pub fn inner(&self, u: &FieldSample, v: &FieldSample) -> Result<f64> {
        self.check_field(u)?;
        self.check_field(v)?;
        Ok(self.inner_values(&u.values, &v.values))
    }

    pub(crate) fn inner_values(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .zip(&self.weights)
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn l2_norm(&self, u: &FieldSample) -> Result<f64> {
        Ok(self.inner(u, u)?.sqrt())
    }

    /// Scalar curvature of `u^{4/(n-2)} g`.
    pub fn conformal_scalar_curvature(&self, u: &FieldSample) -> Result<FieldSample> {
        self.check_field(u)?;
        check_positive(&u.values)?;
        Ok(u.with_values(self.conformal_curvature_values(&u.values)))
    }

    pub(crate) fn conformal_curvature_values(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.dim as f64;
        let c = 4.0 * (n - 1.0) / (n - 2.0);
        let e = (n + 2.0) / (n - 2.0);
        let lap = self.apply_laplacian(u);
        (0..u.len())
            .map(|j| (-c * lap[j] + self.curvature[j] * u[j]) / u[j].powf(e))
            .collect()
    }

    /// `int u^{2n/(n-2)} dV`, the volume of the conformal metric.
    pub fn conformal_volume(&self, u: &FieldSample) -> Result<f64> {
        self.check_field(u)?;
        let e = critical_exponent(self.grid.dim);
        Ok(self.integrate_values(&u.values.iter().map(|v| v.powf(e)).collect::<Vec<_>>()))
    }
}

/// The critical Sobolev exponent `2n/(n-2)`.
pub fn critical_exponent(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

pub(crate) fn check_positive(u: &[f64]) -> Result<()> {
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveConformalFactor(min))
    }
}
