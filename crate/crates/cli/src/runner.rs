use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Instant;

use curvflow::flow::{run, FlowSample, FlowTrace, StepChecks, Termination};
use curvflow::lab::{analyze_trace, TraceAnalysis};
use serde::Serialize;

use crate::config::{Config, Experiment};
use crate::error::{CliError, CliResult, Classify};
use crate::output::{fmt_f64, to_csv, to_json, write_atomic};

pub const TRACE_COLUMNS: [&str; 8] = ["t", "volume", "f_volume", "E", "alpha", "grad_l2", "dist_sup", "dist_l2"];

#[derive(Debug, Serialize)]
pub struct GridSummary {
    pub dim: usize,
    pub n_cells: usize,
    pub spacing: f64,
    pub dt: f64,
}

#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub version: &'static str,
    pub config: &'a Config,
    pub grid: GridSummary,
    pub termination: &'a Termination,
    pub checks: &'a StepChecks,
    pub samples: usize,
    pub final_sample: &'a FlowSample,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fits: Option<&'a TraceAnalysis>,
    pub wall_time_s: f64,
}

pub fn trace_csv(trace: &FlowTrace) -> CliResult<String> {
    to_csv(
        &TRACE_COLUMNS,
        trace.samples.iter().map(|s| {
            [s.t, s.volume, s.f_volume, s.energy, s.alpha, s.grad_l2, s.dist_sup, s.dist_l2]
                .iter()
                .map(|v| fmt_f64(*v))
                .collect()
        }),
    )
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub termination: Termination,
}

/// Runs the flow and writes trace.csv, record.json, fits.json and the echoed
/// config.toml into `dir`.
pub fn execute(exp: &Experiment, dir: &Path) -> CliResult<RunOutcome> {
    let start = Instant::now();
    let trace = run(&exp.metric, &exp.u0, &exp.controls).domain()?;
    let fits = exp.config.output.fits.then(|| analyze_trace(&trace));
    let mut echoed = exp.config.clone();
    echoed.output.dir = crate::config::absolute(dir);
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        config: &echoed,
        grid: GridSummary {
            dim: exp.metric.dim(),
            n_cells: exp.metric.grid().n_cells(),
            spacing: exp.metric.grid().spacing(),
            dt: exp.controls.dt,
        },
        termination: &trace.termination,
        checks: &trace.checks,
        samples: trace.samples.len(),
        final_sample: trace.final_sample(),
        fits: fits.as_ref(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let csv = trace_csv(&trace)?;
    let json = to_json(&record)?;
    let toml = echoed.to_toml()?;
    let fits_json = fits.as_ref().map(to_json).transpose()?;

    fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("creating {}: {e}", dir.display())))?;
    write_atomic(&dir.join("trace.csv"), &csv)?;
    write_atomic(&dir.join("record.json"), &json)?;
    write_atomic(&dir.join("config.toml"), &toml)?;
    if let Some(f) = fits_json {
        write_atomic(&dir.join("fits.json"), &f)?;
    }
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        termination: trace.termination,
    })
}

fn finish(outcome: &RunOutcome) -> CliResult<()> {
    match &outcome.termination {
        Termination::PositivityLost { message } => Err(CliError::Domain(format!(
            "run stopped early, {message}; partial trace in {}",
            outcome.dir.display()
        ))),
        t => {
            println!("{}: {t}", outcome.dir.display());
            Ok(())
        }
    }
}

pub fn flow_run(config_path: &Path, out: Option<&Path>) -> CliResult<()> {
    let config = Config::load(config_path)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output.dir.clone());
    let exp = Experiment::build(config)?;
    finish(&execute(&exp, &dir)?)
}

/// Independent runs on separate threads, each into `out/<config stem>`. All
/// configs are validated before anything runs.
pub fn sweep(configs: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut seen = HashSet::new();
    let mut jobs = Vec::new();
    for path in configs {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Config(format!("cannot name a run after {}", path.display())))?
            .to_string();
        if !seen.insert(stem.clone()) {
            return Err(CliError::Config(format!("two configs share the name `{stem}`")));
        }
        let exp = Experiment::build(Config::load(path)?)?;
        jobs.push((out.join(stem), exp));
    }
    let results: Vec<CliResult<RunOutcome>> = thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|(dir, exp)| s.spawn(move || execute(exp, dir))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Domain("run panicked".into()))))
            .collect()
    });
    let mut failures = Vec::new();
    for r in results {
        if let Err(e) = r.and_then(|o| finish(&o)) {
            eprintln!("{e}");
            failures.push(e);
        }
    }
    match failures.len() {
        0 => Ok(()),
        k => Err(CliError::Domain(format!("{k} of {} runs failed", configs.len()))),
    }
}
