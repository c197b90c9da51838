//! Executes a resolved configuration and writes its outputs.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use minres::adaptivity::{adaptive_loop, uniform_loop, LevelOutput, LoopParams, RunError, Stop};
use minres::analysis::{Column, RunHistory};
use minres::mesh::write_vtk;
use minres::presets::{preset, ProblemPreset};

use crate::config::{ConfigError, Mode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {source} (partial results in {csv})", csv = csv.display())]
    Solver {
        #[source]
        source: RunError,
        csv: PathBuf,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Config(_) => 2,
            RunFailure::Solver { .. } => 3,
            RunFailure::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunFailure {
    let context = context.into();
    move |source| RunFailure::Io { context, source }
}

/// The preset with the configured overrides applied.
pub fn build_problem(cfg: &RunConfig) -> Result<ProblemPreset, ConfigError> {
    let p = preset(&cfg.preset)?;
    match (cfg.params.eps, p.defaults.eps) {
        (Some(e), Some(d)) if e != d => Ok(p.with_epsilon(e)?),
        _ => Ok(p),
    }
}

pub fn loop_params(cfg: &RunConfig, p: &ProblemPreset) -> LoopParams {
    let mut lp = LoopParams::from_preset(p);
    lp.solver.sigma = cfg.params.sigma;
    lp.solver.tau = cfg.params.tau;
    lp.solver.policy_iters = cfg.params.policy_iters;
    lp.solver.kkt_tol = cfg.params.kkt_tol;
    lp.s = cfg.params.s;
    lp.theta = cfg.params.theta;
    lp
}

/// Default CSV file name: `<preset>_<mode>[_<suffix>].csv`.
pub fn csv_name(cfg: &RunConfig, suffix: Option<&str>) -> String {
    if let Some(name) = &cfg.output.csv {
        return match suffix {
            None => name.clone(),
            Some(s) => {
                let stem = name.strip_suffix(".csv").unwrap_or(name);
                format!("{stem}_{s}.csv")
            }
        };
    }
    match suffix {
        None => format!("{}_{}.csv", cfg.preset, cfg.mode.as_str()),
        Some(s) => format!("{}_{}_{s}.csv", cfg.preset, cfg.mode.as_str()),
    }
}

/// Runs the configured loop, writes the CSV (also after a solver failure)
/// and, if requested, one VTK file per level.
pub fn execute(cfg: &RunConfig, out_dir: &Path, csv_file: &str) -> Result<RunHistory, RunFailure> {
    let p = build_problem(cfg)?;
    let params = loop_params(cfg, &p);
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let csv_path = out_dir.join(csv_file);
    let stem = csv_file
        .strip_suffix(".csv")
        .unwrap_or(csv_file)
        .to_string();
    let stop = match (cfg.levels, cfg.max_ndof) {
        (Some(n), _) => Stop::Levels(n),
        (None, Some(m)) => Stop::MaxNdof(m),
        (None, None) => unreachable!("resolved configs carry a stop criterion"),
    };
    let mut vtk_error: Option<RunFailure> = None;
    let mut observer = |out: &LevelOutput| {
        if !cfg.output.vtk || vtk_error.is_some() {
            return;
        }
        let path = out_dir.join(format!("{stem}_level{:02}.vtk", out.record.level));
        let written = fs::File::create(&path).and_then(|f| {
            write_vtk(
                out.space.mesh(),
                BufWriter::new(f),
                &[
                    ("eta", &out.eta.values),
                    ("eta_volume", &out.eta.volume),
                    ("eta_boundary", &out.eta.boundary),
                ],
            )
        });
        if let Err(e) = written {
            vtk_error = Some(io_err(format!("writing {}", path.display()))(e));
        }
    };
    let result = match cfg.mode {
        Mode::Uniform => uniform_loop(&p, cfg.space, &params, stop, &mut observer),
        Mode::Adaptive => adaptive_loop(&p, cfg.space, &params, stop, &mut observer),
    };
    if let Some(e) = vtk_error {
        return Err(e);
    }
    match result {
        Ok(history) => {
            fs::write(&csv_path, history.to_csv())
                .map_err(io_err(format!("writing {}", csv_path.display())))?;
            Ok(history)
        }
        Err(source) => {
            if let Some(h) = source.partial_history() {
                fs::write(&csv_path, h.to_csv())
                    .map_err(io_err(format!("writing {}", csv_path.display())))?;
            }
            match source {
                RunError::Preset(e) => Err(ConfigError::Preset(e).into()),
                source => Err(RunFailure::Solver {
                    source,
                    csv: csv_path,
                }),
            }
        }
    }
}

/// Human-readable table of the history with per-step and tail EOCs.
pub fn eoc_table(h: &RunHistory) -> String {
    let mut out = String::new();
    let cols: Vec<Column> = Column::ALL
        .into_iter()
        .filter(|c| h.column(*c).iter().any(|v| v.is_some()))
        .collect();
    let _ = write!(out, "{:>5} {:>8}", "level", "ndof");
    for c in &cols {
        let _ = write!(out, " {:>11} {:>6}", c.name(), "eoc");
    }
    out.push('\n');
    let eocs: Vec<_> = cols.iter().map(|c| h.eoc(*c)).collect();
    for (i, r) in h.rows.iter().enumerate() {
        let _ = write!(out, "{:>5} {:>8}", r.level, r.ndof);
        for (c, e) in cols.iter().zip(&eocs) {
            let v = h.column(*c)[i]
                .map(|v| format!("{v:.4e}"))
                .unwrap_or_default();
            let s = if i == 0 { None } else { e.steps[i - 1] };
            let s = s.map(|s| format!("{s:.3}")).unwrap_or_default();
            let _ = write!(out, " {v:>11} {s:>6}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:>14}", "tail eoc");
    for e in &eocs {
        let t = e
            .tail
            .map(|t| format!("{t:.3}"))
            .unwrap_or_else(|| "-".into());
        let _ = write!(out, " {t:>18}");
    }
    out.push('\n');
    out
}
