use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvflow::geometry::FSpec;
use curvflow::spectral::Potential;

mod commands;
mod config;
mod error;
mod output;
mod runner;

use commands::{AnsatzArgs, CubicField, Emit, FitModel, SpectrumArgs};
use config::parse_f;
use error::{CliError, CliResult, Classify};

/// Conformal flow experiments on warped-product spheres.
#[derive(Debug, Parser)]
#[command(name = "curvflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flow runs driven by a config file.
    Flow {
        #[command(subcommand)]
        action: FlowAction,
    },
    /// Eigenvalues of the linearized operator as CSV.
    Spectrum {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        n_cells: usize,
        /// round, eps:<value> or custom:<csv>
        #[arg(long, default_value = "round")]
        metric: String,
        /// normalized, curvature_normalized, constant:<v> or cosine:<base>,<amp>,<freq>
        #[arg(long, default_value = "normalized")]
        f: String,
        /// curvature or f
        #[arg(long, default_value = "curvature")]
        potential: String,
        #[arg(long)]
        kernel_tol: Option<f64>,
    },
    /// Cubic term of the energy along a field.
    Cubic {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 2048)]
        n_cells: usize,
        /// geometric or paper
        #[arg(long, default_value = "geometric")]
        measure: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = CubicField::Cos)]
        field: CubicField,
    },
    /// Slow-mode ansatz samples.
    Ansatz {
        #[arg(long)]
        p: u32,
        /// F_p at the unit kernel direction.
        #[arg(long = "Fp", allow_hyphen_values = true)]
        fp: f64,
        /// Time offset T.
        #[arg(long = "T")]
        t_offset: f64,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 100.0)]
        t_max: f64,
        #[arg(long, default_value_t = 101)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
    },
    /// AS_3 verdict for the eps family in three dimensions, as JSON.
    As3 {
        #[arg(long, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, default_value_t = 128)]
        n_cells: usize,
        #[arg(long, default_value = "paper")]
        measure: String,
        #[arg(long, default_value = "curvature_normalized")]
        f: String,
    },
    /// Exponential or power-law fit of a CSV column.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "dist_l2")]
        column: String,
        #[arg(long, default_value = "t")]
        time: String,
        #[arg(long, value_enum, default_value_t = FitModel::Auto)]
        model: FitModel,
        /// Fit window start (with --t-max; only for a fixed model).
        #[arg(long, requires = "t_max")]
        t_min: Option<f64>,
        #[arg(long, requires = "t_min")]
        t_max: Option<f64>,
    },
    /// Lojasiewicz exponent from energy and gradient columns.
    Lojasiewicz {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "E")]
        energy: String,
        #[arg(long, default_value = "grad_l2")]
        grad: String,
        /// Limit energy; the last row by default.
        #[arg(long, allow_hyphen_values = true)]
        e_inf: Option<f64>,
    },
    /// Several flow runs at once, each in its own output directory.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum FlowAction {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn f_arg(s: &str) -> CliResult<FSpec> {
    parse_f(s)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let text = match cli.command {
        Command::Flow {
            action: FlowAction::Run { config, out },
        } => return runner::flow_run(&config, out.as_deref()),
        Command::Sweep { out, configs } => return runner::sweep(&configs, &out),
        Command::Spectrum {
            n,
            n_cells,
            metric,
            f,
            potential,
            kernel_tol,
        } => commands::spectrum(SpectrumArgs {
            dim: n,
            n_cells,
            metric: &metric,
            f: f_arg(&f)?,
            potential: potential.parse::<Potential>().config()?,
            kernel_tol,
        })?,
        Command::Cubic {
            n,
            n_cells,
            measure,
            eps,
            field,
        } => commands::cubic(n, n_cells, &measure, eps, field)?,
        Command::Ansatz {
            p,
            fp,
            t_offset,
            n,
            t_max,
            samples,
            emit,
        } => commands::ansatz(AnsatzArgs {
            p,
            fp,
            t_offset,
            dim: n,
            t_max,
            samples,
            emit,
        })?,
        Command::As3 { eps, n_cells, measure, f } => commands::as3(n_cells, eps, &measure, f_arg(&f)?)?,
        Command::Fit {
            input,
            column,
            time,
            model,
            t_min,
            t_max,
        } => {
            let window = t_min.zip(t_max);
            if window.is_some() && model == FitModel::Auto {
                return Err(CliError::Config("a fixed window needs --model exponential or polynomial".into()));
            }
            commands::fit(&input, &time, &column, model, window)?
        }
        Command::Lojasiewicz {
            input,
            energy,
            grad,
            e_inf,
        } => commands::lojasiewicz(&input, &energy, &grad, e_inf)?,
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
