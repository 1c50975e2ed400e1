//! The linearized operator `L = (n-1) Lap + V` (V = R by default), its
//! spectrum, and the kernel / positive / negative splitting.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FieldSample, RadialGrid, WarpedMetric};

/// Which potential multiplies the zeroth-order term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// Scalar curvature of the background metric.
    #[default]
    #[serde(alias = "R")]
    Curvature,
    /// The prescribed function f; equals the curvature only when alpha = 1.
    F,
}

impl FromStr for Potential {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" | "curvature" => Ok(Potential::Curvature),
            "f" => Ok(Potential::F),
            _ => Err(Error::InvalidArgument(format!("unknown potential `{s}`"))),
        }
    }
}

/// Tridiagonal `L` in node form, plus its symmetrized counterpart
/// `M^{1/2} L M^{-1/2}` where `M` holds the quadrature weights.
#[derive(Debug, Clone)]
pub struct RadialOperator {
    grid: Arc<RadialGrid>,
    weights: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    sym_off: Vec<f64>,
}

pub fn assemble(metric: &WarpedMetric) -> RadialOperator {
    build(metric, metric.curvature_values())
}

pub fn assemble_with(metric: &WarpedMetric, potential: Potential) -> RadialOperator {
    match potential {
        Potential::Curvature => assemble(metric),
        Potential::F => build(metric, metric.f()),
    }
}

/// Assemble with an arbitrary potential field.
pub fn assemble_with_potential(metric: &WarpedMetric, potential: &FieldSample) -> Result<RadialOperator> {
    metric.check_field(potential)?;
    Ok(build(metric, potential.values()))
}

fn build(metric: &WarpedMetric, potential: &[f64]) -> RadialOperator {
    let n1 = metric.dim() as f64 - 1.0;
    let h2 = metric.grid().spacing().powi(2);
    let a = metric.faces();
    let m = metric.mass();
    let len = m.len();
    let mut lower = vec![0.0; len];
    let mut upper = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut sym_off = vec![0.0; len.saturating_sub(1)];
    for j in 0..len {
        lower[j] = n1 * a[j] / (h2 * m[j]);
        upper[j] = n1 * a[j + 1] / (h2 * m[j]);
        diag[j] = -lower[j] - upper[j] + potential[j];
        if j + 1 < len {
            sym_off[j] = n1 * a[j + 1] / (h2 * (m[j] * m[j + 1]).sqrt());
        }
    }
    RadialOperator {
        grid: metric.grid().clone(),
        weights: metric.weights().to_vec(),
        lower,
        diag,
        upper,
        sym_off,
    }
}

impl RadialOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, field: &FieldSample) -> Result<FieldSample> {
        if field.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch {
                expected: self.grid.n_cells(),
                found: field.len(),
            });
        }
        Ok(field.with_values(self.apply_values(field.values())))
    }

    pub(crate) fn apply_values(&self, x: &[f64]) -> Vec<f64> {
        let len = x.len();
        (0..len)
            .map(|j| {
                let mut v = self.diag[j] * x[j];
                if j > 0 {
                    v += self.lower[j] * x[j - 1];
                }
                if j + 1 < len {
                    v += self.upper[j] * x[j + 1];
                }
                v
            })
            .collect()
    }

    /// Dense symmetric matrix of the similarity-transformed operator.
    pub fn symmetric_matrix(&self) -> DMatrix<f64> {
        let len = self.len();
        let mut s = DMatrix::zeros(len, len);
        for j in 0..len {
            s[(j, j)] = self.diag[j];
            if j + 1 < len {
                s[(j, j + 1)] = self.sym_off[j];
                s[(j + 1, j)] = self.sym_off[j];
            }
        }
        s
    }

    /// Symmetric form with a constant added to the diagonal.
    pub fn shifted(&self, shift: f64) -> RadialOperator {
        let mut out = self.clone();
        for d in &mut out.diag {
            *d += shift;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Kernel,
    KernelPerp,
    Up,
    Down,
}

impl FromStr for Subspace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Subspace::Kernel),
            "kernel_perp" => Ok(Subspace::KernelPerp),
            "up" => Ok(Subspace::Up),
            "down" => Ok(Subspace::Down),
            _ => Err(Error::InvalidArgument(format!("unknown subspace `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    Kernel,
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<FieldSample>,
    pub kernel_indices: Vec<usize>,
    pub up_indices: Vec<usize>,
    pub down_indices: Vec<usize>,
    pub kernel_tol: f64,
    weights: Vec<f64>,
}

/// `50 h^2 (n-1)`.
pub fn default_kernel_tol(grid: &RadialGrid) -> f64 {
    50.0 * grid.spacing().powi(2) * (grid.dim() as f64 - 1.0)
}

/// Full symmetric eigensolve. `kernel_tol = None` selects the default.
pub fn eigendecompose(op: &RadialOperator, kernel_tol: Option<f64>) -> Result<SpectralDecomposition> {
    let tol = kernel_tol.unwrap_or_else(|| default_kernel_tol(&op.grid));
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("kernel_tol must be nonnegative, got {tol}")));
    }
    let len = op.len();
    let eig = SymmetricEigen::try_new(op.symmetric_matrix(), 1e-14, 100 * len * len).ok_or_else(|| {
        Error::SpectralFailure(format!("symmetric eigensolve did not converge for a {len}x{len} operator"))
    })?;
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if let Some(bad) = eig.eigenvalues.iter().find(|v| !v.is_finite()) {
        return Err(Error::SpectralFailure(format!("non-finite eigenvalue {bad}")));
    }

    let mut eigenvalues = Vec::with_capacity(len);
    let mut eigenfields = Vec::with_capacity(len);
    for &k in &order {
        eigenvalues.push(eig.eigenvalues[k]);
        let col = eig.eigenvectors.column(k);
        let mut x: Vec<f64> = (0..len).map(|j| col[j] / op.weights[j].sqrt()).collect();
        if x[0] < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        eigenfields.push(FieldSample::new(op.grid.clone(), x)?);
    }
    let mut kernel_indices = Vec::new();
    let mut up_indices = Vec::new();
    let mut down_indices = Vec::new();
    for (i, &l) in eigenvalues.iter().enumerate() {
        if l.abs() < tol {
            kernel_indices.push(i);
        } else if l >= tol {
            up_indices.push(i);
        } else {
            down_indices.push(i);
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenfields,
        kernel_indices,
        up_indices,
        down_indices,
        kernel_tol: tol,
        weights: op.weights.clone(),
    })
}

impl SpectralDecomposition {
    pub fn kernel_dimension(&self) -> usize {
        self.kernel_indices.len()
    }

    pub fn classification(&self, i: usize) -> ModeClass {
        let l = self.eigenvalues[i];
        if l.abs() < self.kernel_tol {
            ModeClass::Kernel
        } else if l >= self.kernel_tol {
            ModeClass::Up
        } else {
            ModeClass::Down
        }
    }

    /// Index of the eigenvalue closest to `target`.
    pub fn nearest(&self, target: f64) -> usize {
        let mut best = 0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            if (l - target).abs() < (self.eigenvalues[best] - target).abs() {
                best = i;
            }
        }
        best
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// Weighted coefficient of `field` along eigenfield `i`.
    pub fn coefficient(&self, field: &FieldSample, i: usize) -> f64 {
        self.inner(field.values(), self.eigenfields[i].values())
    }

    pub fn indices(&self, subspace: Subspace) -> Vec<usize> {
        match subspace {
            Subspace::Kernel => self.kernel_indices.clone(),
            Subspace::Up => self.up_indices.clone(),
            Subspace::Down => self.down_indices.clone(),
            Subspace::KernelPerp => {
                let mut v: Vec<usize> = self.up_indices.iter().chain(&self.down_indices).copied().collect();
                v.sort_unstable();
                v
            }
        }
    }

    pub fn project(&self, field: &FieldSample, subspace: Subspace) -> Result<FieldSample> {
        let grid = self.eigenfields[0].grid();
        if field.grid().as_ref() != grid.as_ref() {
            return Err(Error::GridMismatch {
                expected: grid.n_cells(),
                found: field.len(),
            });
        }
        let mut out = vec![0.0; field.len()];
        for i in self.indices(subspace) {
            let c = self.coefficient(field, i);
            for (o, e) in out.iter_mut().zip(self.eigenfields[i].values()) {
                *o += c * e;
            }
        }
        Ok(field.with_values(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, sample_metric, FSpec, MetricFamily};

    fn round(n: usize, cells: usize) -> WarpedMetric {
        sample_metric(make_grid(n, cells).unwrap(), MetricFamily::Round, &FSpec::Normalized).unwrap()
    }

    #[test]
    fn constant_field_maps_to_curvature() {
        let m = round(3, 32);
        let op = assemble(&m);
        let out = op.apply(&FieldSample::constant(m.grid().clone(), 2.0)).unwrap();
        for v in out.values() {
            assert!((v - 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cos_is_approximately_annihilated() {
        let mut prev = f64::NAN;
        for cells in [64, 128] {
            let m = round(3, cells);
            let c = FieldSample::from_fn(m.grid().clone(), f64::cos);
            let res = assemble(&m).apply(&c).unwrap().sup_norm();
            let h = m.grid().spacing();
            assert!(res < 10.0 * h * h);
            if prev.is_finite() {
                assert!(prev / res > 3.5);
            }
            prev = res;
        }
    }

    #[test]
    fn operator_symmetric_in_weighted_product() {
        let m = sample_metric(make_grid(4, 40).unwrap(), MetricFamily::Eps(0.2), &FSpec::Normalized).unwrap();
        let op = assemble(&m);
        let u = FieldSample::from_fn(m.grid().clone(), |r| (r * 1.3).sin() + 0.2);
        let v = FieldSample::from_fn(m.grid().clone(), |r| r.exp() * 0.1);
        let a = m.inner(&op.apply(&u).unwrap(), &v).unwrap();
        let b = m.inner(&u, &op.apply(&v).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn round_three_sphere_spectrum() {
        let m = round(3, 128);
        let d = eigendecompose(&assemble(&m), None).unwrap();
        let h = m.grid().spacing();
        let k = d.nearest(0.0);
        assert!(d.eigenvalues[k].abs() < 50.0 * h * h);
        assert_eq!(d.kernel_dimension(), 1);
        assert!((d.eigenvalues[d.nearest(6.0)] - 6.0).abs() < 1e-10);
        assert!((d.eigenvalues[d.nearest(-10.0)] + 10.0).abs() < 10.0 * h * h);
        for w in d.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn eigenfields_orthonormal_and_signed() {
        let m = round(4, 48);
        let d = eigendecompose(&assemble(&m), None).unwrap();
        for i in 0..d.eigenfields.len() {
            assert!(d.eigenfields[i].values()[0] >= 0.0);
            for j in 0..d.eigenfields.len() {
                let ip = m.inner(&d.eigenfields[i], &d.eigenfields[j]).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shifted_potential_has_no_kernel() {
        let m = round(3, 64);
        let d = eigendecompose(&assemble(&m).shifted(1.0), None).unwrap();
        assert_eq!(d.kernel_dimension(), 0);
        let shift = FieldSample::from_fn(m.grid().clone(), |_| 7.0);
        let d2 = eigendecompose(&assemble_with_potential(&m, &shift).unwrap(), None).unwrap();
        assert_eq!(d2.kernel_dimension(), 0);
    }

    #[test]
    fn zero_tolerance_gives_empty_kernel() {
        let m = round(3, 32);
        let d = eigendecompose(&assemble(&m), Some(0.0)).unwrap();
        assert_eq!(d.kernel_dimension(), 0);
        assert_eq!(d.up_indices.len() + d.down_indices.len(), 32);
    }

    #[test]
    fn projections() {
        let m = round(3, 64);
        let d = eigendecompose(&assemble(&m), None).unwrap();
        let c = FieldSample::from_fn(m.grid().clone(), f64::cos);
        let pc = d.project(&c, Subspace::Kernel).unwrap();
        let h = m.grid().spacing();
        assert!(pc.axpy(-1.0, &c).unwrap().sup_norm() < 10.0 * h * h);
        let one = FieldSample::constant(m.grid().clone(), 1.0);
        assert!(d.project(&one, Subspace::Kernel).unwrap().sup_norm() < 1e-10);
        let twice = d.project(&pc, Subspace::Kernel).unwrap();
        assert!(twice.axpy(-1.0, &pc).unwrap().sup_norm() < 1e-10);
    }

    #[test]
    fn potential_tags() {
        assert_eq!("f".parse::<Potential>().unwrap(), Potential::F);
        assert_eq!("R".parse::<Potential>().unwrap(), Potential::Curvature);
        assert!("g".parse::<Potential>().is_err());
    }
}
