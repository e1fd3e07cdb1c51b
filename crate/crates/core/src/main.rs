use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsw::dynamics::BuoyancyScheme;
use tsw::harness::{self, ExperimentPreset, NewtonSetting, RunConfig, Scale};
use tsw::Result;

#[derive(Parser)]
#[command(name = "tsw", version, about = "Thermal shallow water solver with DG buoyancy transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write diagnostics, snapshots and a summary.
    Run(RunArgs),
    /// Run a preset at several resolutions and print the observed orders.
    Convergence(ConvergenceArgs),
    /// Print the mesh hierarchy of a preset.
    Mesh(MeshArgs),
}

/// Options shared by every subcommand; they override `--config`.
#[derive(Args)]
struct Common {
    /// TOML file whose keys mirror the run configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// advection, balance or instability.
    #[arg(long)]
    preset: Option<ExperimentPreset>,
    /// ci or paper.
    #[arg(long)]
    scale: Option<Scale>,
    #[arg(long)]
    scheme: Option<BuoyancyScheme>,
    /// DG upwinding, 0 or 1.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// `tol` or `fixed<N>`.
    #[arg(long)]
    newton: Option<NewtonSetting>,
    /// Number of mesh levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Multigrid relative residual target.
    #[arg(long = "mg-rtol")]
    mg_rtol: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    resolution: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Snapshot interval in steps.
    #[arg(long)]
    snapshots: Option<usize>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Comma separated resolutions; the preset list when omitted.
    #[arg(long, value_delimiter = ',')]
    resolutions: Vec<usize>,
    /// Also write the table as `convergence.csv` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    resolution: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            c.preset = p;
        }
        if let Some(s) = self.scale {
            c.scale = s;
        }
        if let Some(s) = self.scheme {
            c.scheme = s;
        }
        c.alpha = self.alpha.or(c.alpha);
        c.dt = self.dt.or(c.dt);
        c.t_final = self.t_final.or(c.t_final);
        c.newton = self.newton.or(c.newton);
        c.levels = self.levels.or(c.levels);
        c.mg_rtol = self.mg_rtol.or(c.mg_rtol);
        Ok(c)
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = args.common.config()?;
    cfg.resolution = args.resolution.or(cfg.resolution);
    cfg.out = args.out.or(cfg.out);
    cfg.snapshots = args.snapshots.or(cfg.snapshots);
    let resolved = cfg.resolve::<f64>()?;
    println!(
        "{} / {}: resolution {}, dt {:e}, {} steps",
        resolved.preset, resolved.scheme, resolved.resolution, resolved.dt, resolved.steps
    );
    let outcome = harness::run(resolved.clone(), cfg.out.as_deref())?;
    let s = outcome.summary(&resolved);
    println!("steps completed   {} (t = {})", s.steps_completed, s.final_time);
    println!("mass drift        {:e}", s.mass_drift);
    println!("total S drift     {:e}", s.total_s_drift);
    println!("energy drift      {:e}", s.energy_drift);
    println!("variance change   {:e}", s.variance_change);
    println!("max |vorticity|   {:e}", s.max_abs_vorticity);
    for (name, err) in s.error_names.iter().zip(&s.errors) {
        println!("error {name:<11} {err:e}");
    }
    if let Some(dir) = &cfg.out {
        println!("output written to {}", dir.display());
    }
    match outcome.failure {
        Some(e) => {
            eprintln!("run stopped early: {e}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn convergence(args: ConvergenceArgs) -> Result<bool> {
    let cfg = args.common.config()?;
    let resolutions = if args.resolutions.is_empty() {
        cfg.preset.default_resolutions(cfg.scale)
    } else {
        args.resolutions
    };
    let table = harness::convergence::<f64>(&cfg, &resolutions)?;
    print!("{}", table.render());
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(|e| tsw::TswError::io(&dir, e))?;
        let path = dir.join("convergence.csv");
        std::fs::write(&path, table.to_csv()).map_err(|e| tsw::TswError::io(&path, e))?;
    }
    Ok(true)
}

fn mesh(args: MeshArgs) -> Result<bool> {
    let mut cfg = args.common.config()?;
    cfg.resolution = args.resolution.or(cfg.resolution);
    let resolved = cfg.resolve::<f64>()?;
    print!("{}", resolved.hierarchy.summary());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Convergence(a) => convergence(a),
        Command::Mesh(a) => mesh(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
