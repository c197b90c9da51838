//! Residual refinement indicator, Dörfler marking and the solve–estimate–mark–refine loops.

use std::sync::Arc;

use crate::analysis::{error_norms, LevelRecord, RunHistory, RunMeta};
use crate::function::Field;
use crate::mesh::{Mesh, MeshError};
use crate::operators::Operator;
use crate::presets::{PresetError, ProblemPreset, SpaceChoice, SpaceSpec};
use crate::residual::{misfit_per_cell, stabilization_value, ConstraintMode};
use crate::solver::{policy_iteration, SolverError, SolverParams};
use crate::space::{Space, SpaceError, SpaceKind};

/// Cellwise indicator `η(T) = σ Σ_{F ⊂ ∂T ∩ ∂Ω} h_F^s ‖g − v‖ⁿ_{Lⁿ(F)} + ‖f − F[v]‖ⁿ_{Lⁿ(T)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorField {
    pub values: Vec<f64>,
    pub boundary: Vec<f64>,
    pub volume: Vec<f64>,
    pub s: f64,
    pub sigma: f64,
}

impl EstimatorField {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Evaluates the indicator; `s = f64::INFINITY` switches the boundary part off.
pub fn estimate(
    space: &Space,
    v: &[f64],
    op: &Operator,
    f: &Field,
    g: &Field,
    s: f64,
    sigma: f64,
) -> EstimatorField {
    let n = space.dim() as i32;
    let mesh = space.mesh();
    let volume = misfit_per_cell(space, v, op, f);
    let mut boundary = vec![0.0; mesh.num_cells()];
    if s != f64::INFINITY {
        for (fi, face) in mesh.faces().iter().enumerate() {
            if !face.is_boundary() {
                continue;
            }
            let c = face.cells.0;
            let (xs, ws) = space.face_quadrature(fi);
            let e = space.eval_phys(c, &xs);
            let coef = space.local(v, c);
            let integral: f64 = xs
                .iter()
                .enumerate()
                .map(|(q, x)| ws[q] * (g.value(x) - e.field(q, &coef).0).abs().powi(n))
                .sum();
            boundary[c] += sigma * face.diameter.powf(s) * integral;
        }
    }
    let values = volume.iter().zip(&boundary).map(|(a, b)| a + b).collect();
    EstimatorField {
        values,
        boundary,
        volume,
        s,
        sigma,
    }
}

/// Smallest set of cells carrying at least `θ` of the total indicator:
/// cells in descending order of `η`, ties by cell id.
pub fn doerfler_mark(eta: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    // summing in the same order makes θ = 1 reach the total exactly
    let total: f64 = order.iter().map(|&i| eta[i]).sum();
    let goal = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= goal || eta[i] <= 0.0 {
            break;
        }
        acc += eta[i];
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub solver: SolverParams,
    pub s: f64,
    pub theta: f64,
    pub mode: ConstraintMode,
}

impl LoopParams {
    pub fn from_preset(p: &ProblemPreset) -> Self {
        let d = p.defaults;
        let solver = SolverParams {
            sigma: d.sigma,
            tau: d.tau,
            policy_iters: d.policy_iters,
            kkt_tol: d.kkt_tol,
            ..SolverParams::for_dim(p.dim())
        };
        Self {
            solver,
            s: d.s,
            theta: d.theta,
            mode: ConstraintMode::Slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Levels(usize),
    MaxNdof(usize),
}

/// Data handed to the per-level observer.
#[derive(Debug)]
pub struct LevelOutput<'a> {
    pub record: &'a LevelRecord,
    pub space: &'a Space,
    pub v: &'a [f64],
    pub eta: &'a EstimatorField,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("level {level}: {source}")]
    Solver {
        level: usize,
        #[source]
        source: SolverError,
        history: Box<RunHistory>,
    },
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("adaptive refinement needs a simplicial space")]
    AdaptiveRectangles,
}

impl RunError {
    /// Rows completed before the failure.
    pub fn partial_history(&self) -> Option<&RunHistory> {
        match self {
            RunError::Solver { history, .. } => Some(history),
            _ => None,
        }
    }
}

fn build_space(mesh: Arc<Mesh>, spec: SpaceSpec) -> Result<Space, SpaceError> {
    match spec.kind {
        SpaceChoice::Dg => Space::dg(mesh, spec.degree),
        SpaceChoice::BfsRectangle => Space::bfs(mesh),
    }
}

fn meta(p: &ProblemPreset, spec: SpaceSpec, params: &LoopParams, adaptive: bool) -> RunMeta {
    RunMeta {
        preset: p.name.clone(),
        degree: spec.degree,
        sigma: params.solver.sigma,
        tau: params.solver.tau,
        s: params.s,
        theta: params.theta,
        adaptive,
    }
}

/// Solves on one mesh and evaluates the row of the history.
fn solve_level(
    p: &ProblemPreset,
    space: &Space,
    params: &LoopParams,
    level: usize,
) -> Result<(LevelRecord, Vec<f64>, EstimatorField), SolverError> {
    let n = space.dim() as i32;
    let res = policy_iteration(space, &p.op, &p.f, &p.g, &params.solver, params.mode)?;
    let v = res.solution.v;
    let eta = estimate(space, &v, &p.op, &p.f, &p.g, params.s, params.solver.sigma);
    let stab = match space.kind() {
        SpaceKind::DgSimplex => stabilization_value(space, &v, n as f64).expect("dg space"),
        SpaceKind::BfsRectangle => 0.0,
    };
    let phi = params.solver.sigma * res.solution.t.powi(n)
        + eta.volume.iter().sum::<f64>()
        + params.solver.tau * stab;
    let errors = p.exact.as_ref().map(|u| error_norms(space, &v, u));
    let record = LevelRecord {
        level,
        ndof: space.ndof(),
        max_error: errors.map(|e| e.max_error),
        ln_error: errors.map(|e| e.ln_error),
        w1n_error: errors.map(|e| e.w1n_error),
        energy: Some(phi.powf(1.0 / n as f64)),
        eta: Some(eta.total()),
    };
    log::info!(
        "level {level}: ndof {} energy {:.4e} eta {:.4e} max_error {}",
        record.ndof,
        record.energy.unwrap_or(f64::NAN),
        eta.total(),
        record
            .max_error
            .map(|e| format!("{e:.4e}"))
            .unwrap_or_else(|| "-".into())
    );
    Ok((record, v, eta))
}

/// One uniform refinement step: quadsection for rectangles, one bisection
/// generation for simplices.
fn refine_uniform_step(mesh: &Mesh) -> Result<Mesh, MeshError> {
    match mesh.kind() {
        crate::mesh::CellKind::Rectangle => Ok(mesh.refine_uniform()),
        crate::mesh::CellKind::Simplex => mesh.bisect_all(),
    }
}

fn keep_going(stop: Stop, solved: usize, next_ndof: usize) -> bool {
    match stop {
        Stop::Levels(n) => solved < n,
        Stop::MaxNdof(m) => next_ndof <= m,
    }
}

/// Uniform refinement on the preset's uniform space.
pub fn uniform_loop(
    p: &ProblemPreset,
    spec: SpaceSpec,
    params: &LoopParams,
    stop: Stop,
    observer: &mut dyn FnMut(&LevelOutput),
) -> Result<RunHistory, RunError> {
    let mut history = RunHistory::new(meta(p, spec, params, false));
    let mut mesh = Arc::new(p.domain.initial_mesh(spec.kind)?);
    let mut space = build_space(mesh.clone(), spec)?;
    let mut level = 0;
    while keep_going(stop, level, space.ndof()) {
        let (record, v, eta) =
            solve_level(p, &space, params, level).map_err(|source| RunError::Solver {
                level,
                source,
                history: Box::new(history.clone()),
            })?;
        observer(&LevelOutput {
            record: &record,
            space: &space,
            v: &v,
            eta: &eta,
        });
        history.push(record);
        level += 1;
        if matches!(stop, Stop::Levels(n) if level >= n) {
            break;
        }
        mesh = Arc::new(refine_uniform_step(&mesh)?);
        space = build_space(mesh.clone(), spec)?;
    }
    Ok(history)
}

/// Adaptive loop on a simplicial space until the next mesh exceeds the stop criterion.
pub fn adaptive_loop(
    p: &ProblemPreset,
    spec: SpaceSpec,
    params: &LoopParams,
    stop: Stop,
    observer: &mut dyn FnMut(&LevelOutput),
) -> Result<RunHistory, RunError> {
    if spec.kind != SpaceChoice::Dg {
        return Err(RunError::AdaptiveRectangles);
    }
    let mut history = RunHistory::new(meta(p, spec, params, true));
    let mut mesh = Arc::new(p.domain.initial_mesh(spec.kind)?);
    let mut space = build_space(mesh.clone(), spec)?;
    let mut level = 0;
    while keep_going(stop, level, space.ndof()) {
        let (record, v, eta) =
            solve_level(p, &space, params, level).map_err(|source| RunError::Solver {
                level,
                source,
                history: Box::new(history.clone()),
            })?;
        observer(&LevelOutput {
            record: &record,
            space: &space,
            v: &v,
            eta: &eta,
        });
        history.push(record);
        level += 1;
        if matches!(stop, Stop::Levels(n) if level >= n) {
            break;
        }
        let mut marked = doerfler_mark(&eta.values, params.theta);
        if marked.is_empty() {
            // a vanishing indicator gives no direction; refine everywhere
            marked = (0..mesh.num_cells()).collect();
        }
        mesh = Arc::new(mesh.refine_marked(&marked)?);
        space = build_space(mesh.clone(), spec)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::identity;
    use crate::mesh::presets;
    use crate::operators::{LinearCoefficients, PucciSign, Structure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_function_gives_cell_volumes() {
        let space = Space::dg(Arc::new(presets::l_shape().refine_uniform()), 2).unwrap();
        let op = Operator::pucci(2, 0.1, 0.9, 0.0, PucciSign::Plus).unwrap();
        let zero = Field::constant(0.0);
        let eta = estimate(
            &space,
            &vec![0.0; space.ndof()],
            &op,
            &Field::constant(1.0),
            &zero,
            2.0,
            100.0,
        );
        for c in 0..space.mesh().num_cells() {
            assert!((eta.values[c] - space.mesh().volume(c)).abs() < 1e-14);
            assert_eq!(eta.boundary[c], 0.0);
        }
        assert!((eta.total() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_part_only_on_boundary_cells() {
        let mesh = presets::unit_square_triangles()
            .refine_uniform()
            .refine_uniform();
        let space = Space::dg(Arc::new(mesh), 2).unwrap();
        let op = Operator::pucci(2, 0.5, 1.0, 0.0, PucciSign::Plus).unwrap();
        let v = vec![1.0; space.ndof()];
        let zero = Field::constant(0.0);
        let eta = estimate(&space, &v, &op, &zero, &zero, 2.0, 100.0);
        let mesh = space.mesh();
        for c in 0..mesh.num_cells() {
            let on_boundary = mesh
                .cell_faces(c)
                .iter()
                .any(|&f| mesh.faces()[f].is_boundary());
            assert_eq!(eta.boundary[c] > 0.0, on_boundary, "cell {c}");
            assert!(
                (eta.values[c] - eta.boundary[c] - eta.volume[c]).abs()
                    <= 1e-12 * eta.values[c].max(1.0)
            );
        }
        // |g − v| = 1 on boundary faces of length h: σ h² ∫_F 1 = σ h³
        let c = (0..mesh.num_cells())
            .find(|&c| eta.boundary[c] > 0.0)
            .unwrap();
        let faces: Vec<f64> = mesh
            .cell_faces(c)
            .iter()
            .map(|&f| &mesh.faces()[f])
            .filter(|f| f.is_boundary())
            .map(|f| f.diameter.powi(3))
            .collect();
        assert!((eta.boundary[c] - 100.0 * faces.iter().sum::<f64>()).abs() < 1e-10);
        let inf = estimate(&space, &v, &op, &zero, &zero, f64::INFINITY, 100.0);
        assert!(inf.boundary.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn marking_examples() {
        assert_eq!(doerfler_mark(&[4.0, 3.0, 2.0, 1.0], 1.0 / 3.0), vec![0]);
        assert_eq!(doerfler_mark(&[4.0, 3.0, 2.0, 1.0], 0.5), vec![0, 1]);
        let mut all = doerfler_mark(&[0.1, 0.0, 0.3, 0.7, 0.2, 0.0], 1.0);
        all.sort_unstable();
        assert_eq!(all, vec![0, 2, 3, 4]);
        // ties resolved by cell id
        assert_eq!(doerfler_mark(&[1.0, 2.0, 2.0, 1.0], 0.25), vec![1]);
    }

    #[test]
    fn marking_has_minimal_cardinality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let len = rng.random_range(1..=15);
            let eta: Vec<f64> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < 0.1 {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let theta = rng.random_range(0.05..=1.0);
            let total: f64 = eta.iter().sum();
            let marked = doerfler_mark(&eta, theta);
            let sum: f64 = marked.iter().map(|&i| eta[i]).sum();
            assert!(sum >= theta * total * (1.0 - 1e-12));
            let mut best = usize::MAX;
            for mask in 0u32..(1 << len) {
                let s: f64 = (0..len)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| eta[i])
                    .sum();
                if s >= theta * total * (1.0 - 1e-12) {
                    best = best.min(mask.count_ones() as usize);
                }
            }
            assert_eq!(marked.len(), best, "{eta:?} θ={theta}");
        }
    }

    #[test]
    fn estimator_decreases_for_smooth_interpolants() {
        let u = Field::new(|x| x[0].sin() * x[1].exp())
            .with_gradient(|x| [x[0].cos() * x[1].exp(), x[0].sin() * x[1].exp(), 0.0])
            .with_hessian(|x| {
                let (s, c, e) = (x[0].sin(), x[0].cos(), x[1].exp());
                [[-s * e, c * e, 0.0], [c * e, s * e, 0.0], [0.0; 3]]
            });
        let st = Structure {
            lambda: 1.0,
            big_lambda: 1.0,
            gamma: 0.0,
            mu: 0.0,
        };
        let op = Operator::linear(
            2,
            LinearCoefficients::constant(identity(2), [0.0; 3], 0.0, 0.0),
            st,
        );
        let f = Field::new(|_| 0.0);
        let mut mesh = presets::unit_square_triangles();
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            mesh = mesh.refine_uniform();
            let space = Space::dg(Arc::new(mesh.clone()), 2).unwrap();
            let total = estimate(&space, &space.interpolate(&u), &op, &f, &u, 2.0, 100.0).total();
            assert!(total < last, "{total} after {last}");
            last = total;
        }
    }

    #[test]
    fn full_marking_matches_uniform_bisection() {
        let p = crate::presets::preset("linear2d").unwrap();
        let mut params = LoopParams::from_preset(&p);
        params.theta = 1.0;
        let spec = p.adaptive_space;
        let adaptive = adaptive_loop(&p, spec, &params, Stop::Levels(3), &mut |_| {}).unwrap();
        let uniform = uniform_loop(&p, spec, &params, Stop::Levels(3), &mut |_| {}).unwrap();
        assert_eq!(adaptive.ndofs(), uniform.ndofs());
        assert!(adaptive.ndofs().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rectangles_are_rejected_by_the_adaptive_loop() {
        let p = crate::presets::preset("ma2d").unwrap();
        let params = LoopParams::from_preset(&p);
        let err =
            adaptive_loop(&p, SpaceSpec::bfs(), &params, Stop::Levels(1), &mut |_| {}).unwrap_err();
        assert!(matches!(err, RunError::AdaptiveRectangles));
    }
}
