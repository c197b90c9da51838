//! Run configuration: strict JSON schema with defaults taken from the preset.

use serde::{Deserialize, Serialize};

use minres::presets::{preset, ProblemPreset, SpaceChoice, SpaceSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Preset(#[from] minres::presets::PresetError),
    #[error("adaptive refinement is only available for simplicial DG spaces, not '{0}'")]
    AdaptiveRectangles(&'static str),
    #[error("the bicubic space has fixed degree 3 (got k = {0})")]
    BfsDegree(usize),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("give either `levels` or `max_ndof`, not both")]
    StopConflict,
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Uniform,
    Adaptive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceOverride {
    pub kind: Option<SpaceChoice>,
    #[serde(alias = "degree")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverride {
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub s: Option<f64>,
    pub theta: Option<f64>,
    pub policy_iters: Option<usize>,
    pub eps: Option<f64>,
    pub kkt_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOverride {
    pub csv: Option<String>,
    pub vtk: Option<bool>,
}

/// Configuration as written by the user; every field but the preset is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: String,
    pub mode: Option<Mode>,
    pub levels: Option<usize>,
    pub max_ndof: Option<usize>,
    pub space: Option<SpaceOverride>,
    pub params: Option<ParamOverride>,
    pub output: Option<OutputOverride>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub sigma: f64,
    pub tau: f64,
    pub s: f64,
    pub theta: f64,
    pub policy_iters: usize,
    pub eps: Option<f64>,
    pub kkt_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub csv: Option<String>,
    pub vtk: bool,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub mode: Mode,
    pub levels: Option<usize>,
    pub max_ndof: Option<usize>,
    pub space: SpaceSpec,
    pub params: Params,
    pub output: Output,
    pub seed: u64,
}

pub const DEFAULT_LEVELS: usize = 5;
pub const DEFAULT_MAX_NDOF: usize = 10_000;

/// Parses a JSON document. Both the short form (only overrides) and a fully
/// resolved configuration are accepted.
pub fn parse_config(json: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(json)?;
    resolve(raw)
}

/// Fills defaults from the preset and validates the result.
pub fn resolve(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let p = preset(&raw.preset)?;
    let mode = raw.mode.unwrap_or(Mode::Uniform);
    let base = match mode {
        Mode::Uniform => p.space,
        Mode::Adaptive => p.adaptive_space,
    };
    let so = raw.space.unwrap_or_default();
    let kind = so.kind.unwrap_or(base.kind);
    let degree = so.k.unwrap_or(if kind == base.kind {
        base.degree
    } else {
        default_degree(&p, kind)
    });
    let space = SpaceSpec { kind, degree };
    let po = raw.params.unwrap_or_default();
    let d = p.defaults;
    let params = Params {
        sigma: po.sigma.unwrap_or(d.sigma),
        tau: po.tau.unwrap_or(d.tau),
        s: po.s.unwrap_or(d.s),
        theta: po.theta.unwrap_or(d.theta),
        policy_iters: po.policy_iters.unwrap_or(d.policy_iters),
        eps: po.eps.or(d.eps),
        kkt_tol: po.kkt_tol.unwrap_or(d.kkt_tol),
    };
    let oo = raw.output.unwrap_or_default();
    let (levels, max_ndof) = match (raw.levels, raw.max_ndof) {
        (Some(_), Some(_)) => return Err(ConfigError::StopConflict),
        (None, None) => match mode {
            Mode::Uniform => (Some(DEFAULT_LEVELS), None),
            Mode::Adaptive => (None, Some(DEFAULT_MAX_NDOF)),
        },
        other => other,
    };
    let cfg = RunConfig {
        preset: raw.preset,
        mode,
        levels,
        max_ndof,
        space,
        params,
        output: Output {
            csv: oo.csv,
            vtk: oo.vtk.unwrap_or(false),
        },
        seed: raw.seed.unwrap_or(0),
    };
    validate(&cfg, &p)?;
    Ok(cfg)
}

fn default_degree(p: &ProblemPreset, kind: SpaceChoice) -> usize {
    match kind {
        SpaceChoice::BfsRectangle => 3,
        SpaceChoice::Dg => p.adaptive_space.degree,
    }
}

fn validate(cfg: &RunConfig, p: &ProblemPreset) -> Result<(), ConfigError> {
    if cfg.mode == Mode::Adaptive && cfg.space.kind == SpaceChoice::BfsRectangle {
        return Err(ConfigError::AdaptiveRectangles("bfs_rectangle"));
    }
    if cfg.space.kind == SpaceChoice::BfsRectangle {
        if cfg.space.degree != 3 {
            return Err(ConfigError::BfsDegree(cfg.space.degree));
        }
        p.domain.initial_mesh(SpaceChoice::BfsRectangle)?;
    }
    if cfg.space.kind == SpaceChoice::Dg && !(1..=4).contains(&cfg.space.degree) {
        return Err(invalid("space.k", "DG degree must be between 1 and 4"));
    }
    let pr = &cfg.params;
    let positive = [
        ("params.sigma", pr.sigma),
        ("params.tau", pr.tau),
        ("params.kkt_tol", pr.kkt_tol),
    ];
    for (key, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(
                key,
                format!("must be positive and finite (got {v})"),
            ));
        }
    }
    if !(pr.theta > 0.0 && pr.theta <= 1.0) {
        return Err(invalid(
            "params.theta",
            format!("must lie in (0, 1] (got {})", pr.theta),
        ));
    }
    if pr.s.is_nan() {
        return Err(invalid("params.s", "must be a number"));
    }
    if pr.policy_iters == 0 {
        return Err(invalid("params.policy_iters", "must be at least 1"));
    }
    match (pr.eps, p.defaults.eps) {
        (Some(e), Some(_)) if !(e > 0.0 && e < 1.0 / p.dim() as f64) => {
            return Err(invalid(
                "params.eps",
                format!("must lie in (0, 1/{}) (got {e})", p.dim()),
            ))
        }
        (Some(_), None) => {
            return Err(invalid(
                "params.eps",
                "only the Monge-Ampere presets have an epsilon",
            ))
        }
        _ => {}
    }
    if cfg.levels == Some(0) || cfg.max_ndof == Some(0) {
        return Err(invalid("levels", "the stop criterion must be positive"));
    }
    Ok(())
}

/// Applies `key=value` from a sweep to a raw configuration.
pub fn apply_override(raw: &mut RawConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let num = || {
        value
            .parse::<f64>()
            .map_err(|_| invalid(key, format!("'{value}' is not a number")))
    };
    let int = || {
        value
            .parse::<usize>()
            .map_err(|_| invalid(key, format!("'{value}' is not a nonnegative integer")))
    };
    let params = raw.params.get_or_insert_with(Default::default);
    match key {
        "sigma" => params.sigma = Some(num()?),
        "tau" => params.tau = Some(num()?),
        "s" => params.s = Some(num()?),
        "theta" => params.theta = Some(num()?),
        "eps" => params.eps = Some(num()?),
        "kkt_tol" => params.kkt_tol = Some(num()?),
        "policy_iters" => params.policy_iters = Some(int()?),
        "k" => raw.space.get_or_insert_with(Default::default).k = Some(int()?),
        _ => {
            return Err(invalid(
                key,
                "unknown sweep key (expected sigma, tau, s, theta, eps, kkt_tol, policy_iters, k)",
            ))
        }
    }
    Ok(())
}

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), ConfigError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| invalid("--sweep", "expected key=v1,v2,..."))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(invalid("--sweep", "expected key=v1,v2,..."));
    }
    Ok((key.trim().to_string(), values))
}
