use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use minres_cli::config::{apply_override, parse_sweep, resolve, Mode, RawConfig};
use minres_cli::run::{csv_name, eoc_table, execute};
use minres_cli::{ConfigError, RunFailure};

#[derive(Parser)]
#[command(
    version,
    about = "Minimal-residual finite element solver for fully nonlinear elliptic PDE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a preset problem on a sequence of meshes and write the convergence history.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (ma2d, ma3d, pucci-lshape, linear2d, hjb-finite-2d).
    #[arg(long)]
    preset: Option<String>,
    /// JSON configuration; command line flags override its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Number of refinement levels to solve.
    #[arg(long, conflicts_with = "max_ndof")]
    levels: Option<usize>,
    /// Stop before the first mesh with more degrees of freedom.
    #[arg(long)]
    max_ndof: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write one VTK file per level with the refinement indicator.
    #[arg(long)]
    vtk: bool,
    /// Repeat the run for each value: key=v1,v2,...
    #[arg(long, value_name = "KEY=V1,V2,...")]
    sweep: Option<String>,
}

fn raw_config(args: &RunArgs) -> Result<RawConfig, RunFailure> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| RunFailure::Io {
                context: format!("reading {}", path.display()),
                source,
            })?;
            serde_json::from_str(&text).map_err(ConfigError::from)?
        }
        None => RawConfig::default(),
    };
    if let Some(p) = &args.preset {
        raw.preset = p.clone();
    }
    if raw.preset.is_empty() {
        return Err(ConfigError::Invalid {
            key: "preset".into(),
            reason: "no preset given".into(),
        }
        .into());
    }
    if args.mode.is_some() {
        raw.mode = args.mode;
    }
    if args.levels.is_some() {
        raw.levels = args.levels;
        raw.max_ndof = None;
    }
    if args.max_ndof.is_some() {
        raw.max_ndof = args.max_ndof;
        raw.levels = None;
    }
    if args.vtk {
        raw.output.get_or_insert_with(Default::default).vtk = Some(true);
    }
    Ok(raw)
}

fn run(args: RunArgs) -> Result<(), RunFailure> {
    if let Ok(t) = std::env::var("MINRES_THREADS") {
        log::info!("MINRES_THREADS={t}: the solver runs sequentially");
    }
    let raw = raw_config(&args)?;
    let jobs: Vec<(RawConfig, Option<String>)> = match &args.sweep {
        None => vec![(raw, None)],
        Some(spec) => {
            let (key, values) = parse_sweep(spec)?;
            let mut jobs = Vec::new();
            for v in values {
                let mut r = raw.clone();
                apply_override(&mut r, &key, &v)?;
                jobs.push((r, Some(format!("{key}{v}"))));
            }
            jobs
        }
    };
    // validate everything before the first solve
    let configs = jobs
        .into_iter()
        .map(|(r, suffix)| Ok((resolve(r)?, suffix)))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    for (cfg, suffix) in configs {
        let file = csv_name(&cfg, suffix.as_deref());
        println!(
            "# {} ({} mode) -> {}",
            cfg.preset,
            cfg.mode.as_str(),
            args.out.join(&file).display()
        );
        let history = execute(&cfg, &args.out, &file)?;
        print!("{}", eoc_table(&history));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
