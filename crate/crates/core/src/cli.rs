//! Command-line front end: `chb run`, `chb sweep` and `chb export`.
//!
//! Exit codes: 0 when every step converged, 2 when some step did not (the
//! logs are still written), 1 on hard failures such as I/O or bad input.

use crate::config::{parse_config, RunConfig};
use crate::discretization::TimeDisc;
use crate::error::{Error, Result};
use crate::export::{
    export_fields, write_iters_csv, write_steps_csv, write_sweep_csv, FieldFormat, SweepRow,
};
use crate::mesh::Mesh;
use crate::solvers::{run_simulation, Scheme, Simulation};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "chb", version, about = "Cahn-Hilliard-Biot finite-element simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one simulation and write steps.csv, iters.csv and the final fields.
    Run(RunArgs),
    /// Repeat runs over a parameter list and write sweep.csv.
    Sweep(SweepArgs),
    /// Advance to a given step and write the nodal fields.
    Export(ExportArgs),
}

#[derive(clap::Args, Debug)]
pub struct RunArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long, value_parser = parse_time_disc)]
    pub time_disc: Option<TimeDisc>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-iteration increments to iters.csv.
    #[arg(long)]
    pub trace_iters: bool,
    /// Record the iteration potential in iters.csv (implies --trace-iters).
    #[arg(long)]
    pub trace_potential: bool,
    /// Override the number of time steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override the cells per side.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    Xi,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Xi => "xi",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Gamma => vec![0.25, 0.5, 1.0, 2.0, 4.0],
            SweepParam::Xi => vec![0.0625, 0.125, 0.25, 0.5],
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme, default_value = "split2")]
    pub schemes: Vec<Scheme>,
    #[arg(long, value_delimiter = ',', value_parser = parse_time_disc, default_value = "semi")]
    pub time_discs: Vec<TimeDisc>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    VtkLegacy,
}

impl From<FormatArg> for FieldFormat {
    fn from(f: FormatArg) -> FieldFormat {
        match f {
            FormatArg::Csv => FieldFormat::Csv,
            FormatArg::VtkLegacy => FieldFormat::VtkLegacy,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub at_step: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_time_disc(s: &str) -> std::result::Result<TimeDisc, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            parse_config(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn apply_overrides(cfg: &mut RunConfig, steps: Option<usize>, n: Option<usize>) -> Result<()> {
    if let Some(k) = steps {
        cfg.solver.n_steps = k;
    }
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        cfg.n = n;
    }
    Ok(())
}

/// Executes one run and writes its logs into `args.out`.
pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, args.steps, args.n)?;
    if let Some(s) = args.scheme {
        cfg.solver.scheme = s;
    }
    if let Some(t) = args.time_disc {
        cfg.solver.time_disc = t;
    }
    cfg.solver.trace_potential |= args.trace_potential;
    std::fs::create_dir_all(&args.out)?;
    let mesh = Mesh::build(cfg.n)?;
    let record = run_simulation(&cfg.solver, &mesh, &cfg.params, &cfg.sources)?;
    write_steps_csv(&record, &args.out.join("steps.csv"))?;
    if args.trace_iters || cfg.solver.trace_potential {
        write_iters_csv(&record, &args.out.join("iters.csv"))?;
    }
    let format: FieldFormat = args.format.into();
    let name = match format {
        FieldFormat::Csv => "fields.csv",
        FieldFormat::VtkLegacy => "fields.vtk",
    };
    export_fields(&mesh, &record.final_state, &args.out.join(name), format)?;
    if let Some(e) = &record.abort {
        log::error!("run aborted: {e}");
    }
    Ok(if record.all_converged() {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// Runs every (value, scheme, time discretization) combination; failures
/// are recorded per row.
pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let mut base = load_config(args.config.as_deref())?;
    apply_overrides(&mut base, args.steps, args.n)?;
    let values = args
        .values
        .clone()
        .unwrap_or_else(|| args.param.default_values());
    if values.is_empty() || args.schemes.is_empty() || args.time_discs.is_empty() {
        return Err(Error::InvalidArgument("sweep lists must be nonempty".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let mesh = Mesh::build(base.n)?;
    let mut rows = Vec::new();
    for &value in &values {
        for &scheme in &args.schemes {
            for &disc in &args.time_discs {
                let mut cfg = base.clone();
                match args.param {
                    SweepParam::Gamma => cfg.params.gamma = value,
                    SweepParam::Xi => cfg.params.xi = value,
                }
                cfg.solver.scheme = scheme;
                cfg.solver.time_disc = disc;
                let mut row = SweepRow {
                    parameter: args.param.name().to_string(),
                    value,
                    scheme: scheme.name().to_string(),
                    time_disc: disc.name().to_string(),
                    total_outer_iterations: 0,
                    total_wall_time_s: 0.0,
                    all_converged: false,
                };
                match run_simulation(&cfg.solver, &mesh, &cfg.params, &cfg.sources) {
                    Ok(rec) => {
                        row.total_outer_iterations = rec.total_outer_iterations();
                        row.total_wall_time_s = rec.total_wall_time();
                        row.all_converged = rec.all_converged();
                    }
                    Err(e) => log::error!(
                        "{}={value} {} {}: {e}",
                        row.parameter,
                        row.scheme,
                        row.time_disc
                    ),
                }
                log::info!(
                    "{}={value} {} {}: {} outer iterations",
                    row.parameter,
                    row.scheme,
                    row.time_disc,
                    row.total_outer_iterations
                );
                rows.push(row);
            }
        }
    }
    write_sweep_csv(&rows, &args.out.join("sweep.csv"))?;
    Ok(if rows.iter().all(|r| r.all_converged) {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// Advances `at_step` steps and writes the fields at that time.
pub fn cmd_export(args: &ExportArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, None, args.n)?;
    let mesh = Mesh::build(cfg.n)?;
    let mut sim = Simulation::new(cfg.solver, mesh.clone(), cfg.params, cfg.sources)?;
    let mut converged = true;
    for _ in 0..args.at_step {
        converged &= sim.step()?.converged;
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    export_fields(&mesh, sim.state(), &args.out, args.format.into())?;
    Ok(if converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Parses `args` (program name first) and dispatches; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
