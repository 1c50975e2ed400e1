//! Run configuration: TOML with sections [grid], [metric], [f], [u0],
//! [integrator] and [output], plus an optional top-level `seed`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use curvflow::flow::{FlowControls, Renormalize, Scheme};
use curvflow::geometry::{make_grid, sample_metric, CustomProfile, FSpec, FieldSample, MetricFamily, RadialGrid, WarpedMetric};
use curvflow::reduction::warped_kernel_solve;
use curvflow::spectral::{assemble_with, eigendecompose, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Classify};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub grid: GridSection,
    pub metric: MetricSection,
    pub f: FSpec,
    pub u0: U0Section,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    /// `round`, `eps:<value>` or `custom:<csv path>`.
    pub family: String,
}

/// Initial conformal factor. `kind` picks which of the other keys apply.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct U0Section {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Potential>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Rescale so the conformal volume equals the background volume.
    #[serde(default)]
    pub volume_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default)]
    pub scheme: Scheme,
    /// Absolute step. Exclusive with `dt_over_h2`; the default is `h^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_over_h2: Option<f64>,
    pub horizon: f64,
    #[serde(default = "one")]
    pub cadence: usize,
    #[serde(default)]
    pub renormalize: Renormalize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    /// Constant comparison field for the distances; 1 by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Attach rate fits and the Lojasiewicz estimate to the record.
    #[serde(default = "yes")]
    pub fits: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            fits: true,
        }
    }
}

/// Absolute form of a path that may not exist yet; unchanged if the working
/// directory is unavailable.
pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_stop_tol() -> f64 {
    1e-10
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Config {
    /// Reads and parses; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = self.metric.family.strip_prefix("custom:") {
            self.metric.family = format!("custom:{}", absolute(&base.join(p.trim())).display());
        }
        self.output.dir = absolute(&base.join(&self.output.dir));
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).domain()
    }
}

/// Everything a run needs, built and validated before any file is written.
pub struct Experiment {
    pub config: Config,
    pub metric: WarpedMetric,
    pub u0: FieldSample,
    pub controls: FlowControls,
}

impl Experiment {
    pub fn build(config: Config) -> CliResult<Self> {
        let grid = make_grid(config.grid.dim, config.grid.n_cells).config()?;
        let family = parse_family(&config.metric.family, &grid)?;
        let metric = sample_metric(grid.clone(), family, &config.f).config()?;
        let u0 = build_u0(&config.u0, &metric, config.seed)?;
        let controls = build_controls(&config.integrator, &grid)?;
        Ok(Self {
            config,
            metric,
            u0,
            controls,
        })
    }
}

pub fn parse_family(spec: &str, grid: &RadialGrid) -> CliResult<MetricFamily> {
    match spec.trim().strip_prefix("custom:") {
        Some(path) => load_custom(Path::new(path.trim()), grid).map(MetricFamily::Custom),
        None => spec.parse().config(),
    }
}

/// CSV with header `r,w,wp,wpp`, one row per grid node.
pub fn load_custom(path: &Path, grid: &RadialGrid) -> CliResult<CustomProfile> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().config()?.clone();
    let expected = ["r", "w", "wp", "wpp"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(CliError::Config(format!(
            "{}: header must be r,w,wp,wpp, found {}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (line, record) in reader.records().enumerate() {
        let record = record.config()?;
        for (k, col) in cols.iter_mut().enumerate() {
            let field = record.get(k).unwrap_or("");
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{}: row {}: bad number `{field}`", path.display(), line + 1)))?;
            col.push(v);
        }
    }
    if cols[0].len() != grid.n_cells() {
        return Err(CliError::Config(format!(
            "{}: {} rows for a grid of {} cells",
            path.display(),
            cols[0].len(),
            grid.n_cells()
        )));
    }
    let [r, w, wp, wpp] = cols;
    Ok(CustomProfile { r, w, wp, wpp })
}

fn need(v: Option<f64>, kind: &str, key: &str) -> CliResult<f64> {
    v.ok_or_else(|| CliError::Config(format!("u0 kind `{kind}` requires `{key}`")))
}

fn only(section: &U0Section, allowed: &[&str]) -> CliResult<()> {
    let present = [
        ("value", section.value.is_some()),
        ("base", section.base.is_some()),
        ("amplitude", section.amplitude.is_some()),
        ("frequency", section.frequency.is_some()),
        ("target", section.target.is_some()),
        ("potential", section.potential.is_some()),
        ("modes", section.modes.is_some()),
        ("values", section.values.is_some()),
    ];
    for (key, set) in present {
        if set && !allowed.contains(&key) {
            return Err(CliError::Config(format!("u0 kind `{}` does not take `{key}`", section.kind)));
        }
    }
    Ok(())
}

pub fn build_u0(section: &U0Section, metric: &WarpedMetric, seed: Option<u64>) -> CliResult<FieldSample> {
    let grid = metric.grid().clone();
    let kind = section.kind.as_str();
    let base = section.base.unwrap_or(1.0);
    let u = match kind {
        "constant" => {
            only(section, &["value"])?;
            FieldSample::constant(grid, need(section.value, kind, "value")?)
        }
        "cosine" => {
            only(section, &["base", "amplitude", "frequency"])?;
            let a = need(section.amplitude, kind, "amplitude")?;
            let k = need(section.frequency, kind, "frequency")?;
            FieldSample::from_fn(grid, |r| base + a * (k * r).cos())
        }
        "eigenmode" => {
            only(section, &["base", "amplitude", "target", "potential"])?;
            let a = need(section.amplitude, kind, "amplitude")?;
            let target = need(section.target, kind, "target")?;
            let op = assemble_with(metric, section.potential.unwrap_or_default());
            let d = eigendecompose(&op, None).config()?;
            let mode = &d.eigenfields[d.nearest(target)];
            FieldSample::constant(grid, base).axpy(a, mode).config()?
        }
        "kernel" => {
            only(section, &["base", "amplitude"])?;
            let a = need(section.amplitude, kind, "amplitude")?;
            let psi = warped_kernel_solve(metric).config()?.psi;
            FieldSample::constant(grid, base).axpy(a, &psi).config()?
        }
        "random" => {
            only(section, &["base", "amplitude", "modes"])?;
            let a = need(section.amplitude, kind, "amplitude")?;
            let seed = seed.ok_or_else(|| CliError::Config("u0 kind `random` requires a top-level `seed`".into()))?;
            let modes = section.modes.unwrap_or(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FieldSample::from_fn(grid, |r| {
                base + a * c.iter().enumerate().map(|(k, ck)| ck * ((k + 1) as f64 * r).cos()).sum::<f64>()
            })
        }
        "samples" => {
            only(section, &["values"])?;
            let values = section
                .values
                .clone()
                .ok_or_else(|| CliError::Config("u0 kind `samples` requires `values`".into()))?;
            FieldSample::new(grid, values).config()?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown u0 kind `{other}` (constant, cosine, eigenmode, kernel, random, samples)"
            )))
        }
    };
    if !(u.min() > 0.0) {
        return Err(CliError::Config(format!("u0 must be positive, minimum is {}", u.min())));
    }
    if section.volume_match {
        let vol = metric.conformal_volume(&u).config()?;
        let n = metric.dim() as f64;
        return Ok(u.scale((metric.volume() / vol).powf((n - 2.0) / (2.0 * n))));
    }
    Ok(u)
}

fn build_controls(section: &IntegratorSection, grid: &Arc<RadialGrid>) -> CliResult<FlowControls> {
    let h2 = grid.spacing().powi(2);
    let dt = match (section.dt, section.dt_over_h2) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either `dt` or `dt_over_h2`, not both".into())),
        (Some(dt), None) => dt,
        (None, Some(k)) => k * h2,
        (None, None) => h2,
    };
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CliError::Config(format!("time step must be positive, got {dt}")));
    }
    if !(section.horizon > 0.0) || !section.horizon.is_finite() {
        return Err(CliError::Config(format!("horizon must be positive, got {}", section.horizon)));
    }
    if section.cadence == 0 {
        return Err(CliError::Config("cadence must be at least 1".into()));
    }
    if !(section.stop_tol >= 0.0) {
        return Err(CliError::Config(format!("stop_tol must be nonnegative, got {}", section.stop_tol)));
    }
    let mut c = FlowControls::new(dt, section.horizon);
    c.scheme = section.scheme;
    c.cadence = section.cadence;
    c.renormalize = section.renormalize;
    c.stop_tol = section.stop_tol;
    if let Some(v) = section.u_ref {
        if !(v > 0.0) {
            return Err(CliError::Config(format!("u_ref must be positive, got {v}")));
        }
        c.u_ref = Some(FieldSample::constant(grid.clone(), v));
    }
    Ok(c)
}

/// `constant:<v>`, `normalized`, `curvature_normalized` or `cosine:<base>,<amplitude>,<frequency>`.
pub fn parse_f(spec: &str) -> CliResult<FSpec> {
    let bad = || CliError::Config(format!("bad f spec `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (head, tail) = match spec.split_once(':') {
        Some((h, t)) => (h.trim(), Some(t)),
        None => (spec.trim(), None),
    };
    match (head, tail) {
        ("normalized", None) => Ok(FSpec::Normalized),
        ("curvature_normalized", None) => Ok(FSpec::CurvatureNormalized),
        ("constant", Some(v)) => Ok(FSpec::Constant { value: num(v)? }),
        ("cosine", Some(args)) => {
            let parts: Vec<&str> = args.split(',').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(FSpec::Cosine {
                base: num(parts[0])?,
                amplitude: num(parts[1])?,
                frequency: num(parts[2])?,
            })
        }
        _ => Err(bad()),
    }
}
