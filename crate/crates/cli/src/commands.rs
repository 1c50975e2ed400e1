//! One-shot subcommands that print to stdout.

use std::path::Path;

use curvflow::geometry::{make_grid, sample_metric, FSpec, FieldSample, MetricFamily};
use curvflow::lab::{classify_rate, fit_exponential, fit_polynomial, lojasiewicz_estimate};
use curvflow::reduction::{ansatz_phi, as3_check, cubic_term, warped_kernel_solve, AnsatzSpec, Convention};
use curvflow::spectral::{assemble_with, eigendecompose, ModeClass, Potential};
use curvflow::Error;
use serde::Serialize;

use crate::config::parse_family;
use crate::error::{CliError, CliResult, Classify};
use crate::output::{fmt_f64, to_csv, to_json};

pub struct SpectrumArgs<'a> {
    pub dim: usize,
    pub n_cells: usize,
    pub metric: &'a str,
    pub f: FSpec,
    pub potential: Potential,
    pub kernel_tol: Option<f64>,
}

pub fn spectrum(a: SpectrumArgs<'_>) -> CliResult<String> {
    let grid = make_grid(a.dim, a.n_cells).config()?;
    let family = parse_family(a.metric, &grid)?;
    let metric = sample_metric(grid, family, &a.f).config()?;
    let d = eigendecompose(&assemble_with(&metric, a.potential), a.kernel_tol).domain()?;
    to_csv(
        &["index", "eigenvalue", "classification"],
        d.eigenvalues.iter().enumerate().map(|(i, l)| {
            let class = match d.classification(i) {
                ModeClass::Kernel => "kernel",
                ModeClass::Up => "up",
                ModeClass::Down => "down",
            };
            vec![i.to_string(), fmt_f64(*l), class.to_string()]
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CubicField {
    /// `cos r`.
    Cos,
    /// The computed kernel field of the metric.
    Kernel,
}

#[derive(Serialize)]
struct CubicOutput {
    dim: usize,
    n_cells: usize,
    eps: f64,
    field: &'static str,
    convention: Convention,
    radial_integral: f64,
    weighted_integral: f64,
    prefactor: f64,
    #[serde(rename = "F3")]
    f3: f64,
}

pub fn cubic(dim: usize, n_cells: usize, measure: &str, eps: f64, field: CubicField) -> CliResult<String> {
    let convention: Convention = measure.parse().config()?;
    let grid = make_grid(dim, n_cells).config()?;
    let family = if eps == 0.0 { MetricFamily::Round } else { MetricFamily::Eps(eps) };
    let metric = sample_metric(grid.clone(), family, &FSpec::Normalized).config()?;
    let v = match field {
        CubicField::Cos => FieldSample::from_fn(grid, f64::cos),
        CubicField::Kernel => warped_kernel_solve(&metric).domain()?.psi,
    };
    let c = cubic_term(&metric, &v, convention).domain()?;
    to_json(&CubicOutput {
        dim,
        n_cells,
        eps,
        field: match field {
            CubicField::Cos => "cos",
            CubicField::Kernel => "kernel",
        },
        convention,
        radial_integral: c.radial_integral,
        weighted_integral: c.weighted_integral,
        prefactor: c.prefactor,
        f3: c.value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Emit {
    Csv,
    Json,
}

pub struct AnsatzArgs {
    pub p: u32,
    pub fp: f64,
    pub t_offset: f64,
    pub dim: usize,
    pub t_max: f64,
    pub samples: usize,
    pub emit: Emit,
}

#[derive(Serialize)]
struct AnsatzRow {
    t: f64,
    amplitude: f64,
    phi: Vec<f64>,
    residual: f64,
}

fn ansatz_error(e: Error) -> CliError {
    match e {
        Error::AsViolated(_) => CliError::Domain(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub fn ansatz(a: AnsatzArgs) -> CliResult<String> {
    let spec = AnsatzSpec::scalar(a.p, a.fp, a.t_offset, a.dim).map_err(ansatz_error)?;
    if a.samples < 2 || !(a.t_max > 0.0) {
        return Err(CliError::Config("need --samples >= 2 and --t-max > 0".into()));
    }
    let rows: Vec<AnsatzRow> = (0..a.samples)
        .map(|i| {
            let t = a.t_max * i as f64 / (a.samples - 1) as f64;
            Ok(AnsatzRow {
                t,
                amplitude: spec.amplitude(t),
                phi: ansatz_phi(&spec, t).map_err(ansatz_error)?,
                residual: spec.residual(t),
            })
        })
        .collect::<CliResult<_>>()?;
    match a.emit {
        Emit::Json => to_json(&rows),
        Emit::Csv => to_csv(
            &["t", "amplitude", "phi", "residual"],
            rows.iter().map(|r| vec![fmt_f64(r.t), fmt_f64(r.amplitude), fmt_f64(r.phi[0]), fmt_f64(r.residual)]),
        ),
    }
}

pub fn as3(n_cells: usize, eps: f64, measure: &str, f: FSpec) -> CliResult<String> {
    let convention: Convention = measure.parse().config()?;
    let grid = make_grid(3, n_cells).config()?;
    let report = as3_check(&grid, eps, &f, convention).map_err(|e| match e {
        Error::PerturbationTooLarge(_) | Error::GridTooCoarse(_) => CliError::Config(e.to_string()),
        other => CliError::Domain(other.to_string()),
    })?;
    to_json(&report)
}

/// Columns of a CSV file with a header row.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = r.headers().config()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.config()?;
            let row = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Config(format!("{}: row {} is not numeric", path.display(), i + 1)))?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> CliResult<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!("no column `{name}` (have {})", self.headers.join(", ")))
        })?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitModel {
    Auto,
    Exponential,
    Polynomial,
}

pub fn fit(input: &Path, time: &str, column: &str, model: FitModel, window: Option<(f64, f64)>) -> CliResult<String> {
    let table = Table::read(input)?;
    let t = table.column(time)?;
    let y = table.column(column)?;
    match model {
        FitModel::Auto => to_json(&classify_rate(&t, &y).domain()?),
        FitModel::Exponential => to_json(&fit_exponential(&t, &y, window).domain()?),
        FitModel::Polynomial => to_json(&fit_polynomial(&t, &y, window).domain()?),
    }
}

#[derive(Serialize)]
struct LojasiewiczOutput {
    e_inf: f64,
    theta: f64,
    slope: f64,
    residual: f64,
    points: usize,
}

pub fn lojasiewicz(input: &Path, energy: &str, grad: &str, e_inf: Option<f64>) -> CliResult<String> {
    let table = Table::read(input)?;
    let e = table.column(energy)?;
    let g = table.column(grad)?;
    let e_inf = match e_inf {
        Some(v) => v,
        None => *e.last().ok_or_else(|| CliError::Config("empty series".into()))?,
    };
    let est = lojasiewicz_estimate(&e, &g, e_inf).domain()?;
    to_json(&LojasiewiczOutput {
        e_inf,
        theta: est.theta,
        slope: est.slope,
        residual: est.residual,
        points: est.points,
    })
}
