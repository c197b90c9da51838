//! Interior-point solution of the policy-frozen subproblem and the outer
//! policy iteration.
//!
//! The subproblem minimizes a convex objective over `x = (v, t)` subject to
//! `t ± (B v − g) ≥ 0` at every boundary node entry. For `n = 2` the
//! objective is quadratic and a Mehrotra predictor-corrector method is used;
//! for `n = 3` the `|r|³` terms are handled by damped Newton steps on the
//! log-barrier merit with a decreasing barrier parameter. In fixed mode the
//! nodal equalities are eliminated and the remaining unconstrained problem
//! is solved by (damped) Newton.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::function::Field;
use crate::linalg::{factor_with_ridge, BlockPattern, Cholesky, FactorError, SymMatrix, Symbolic};
use crate::operators::Operator;
use crate::residual::{
    boundary_constraints, freeze_policy, initial_policy, ConstraintMode, ConstraintSet,
    PolicyField, SubproblemForms, TermSet,
};
use crate::space::Space;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    pub sigma: f64,
    pub tau: f64,
    pub policy_iters: usize,
    pub kkt_tol: f64,
    /// Relative diagonal regularization of the Newton matrix.
    pub ridge: f64,
    pub max_newton_iters: usize,
}

impl SolverParams {
    /// Defaults for space dimension `n`: `σ = 10ⁿ`, `τ = 1`, eight policy steps.
    pub fn for_dim(n: usize) -> Self {
        Self {
            sigma: 10f64.powi(n as i32),
            tau: 1.0,
            policy_iters: 8,
            kkt_tol: if n == 2 { 1e-8 } else { 1e-6 },
            ridge: 1e-12,
            max_newton_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub t: f64,
    pub v: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Multipliers of the slack inequalities, `(upper, lower)` per constraint row.
    pub multipliers: Vec<(f64, f64)>,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (KKT residual {kkt_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        kkt_residual: f64,
        best: Box<SubproblemSolution>,
    },
    #[error("boundary equality constraints are inconsistent (row {row}, defect {defect:.3e})")]
    InfeasibleConstraints { row: usize, defect: f64 },
    #[error("linear solve failed: {0}")]
    Factorization(#[from] FactorError),
    #[error("policy iteration {iteration}: {source}")]
    PolicyIteration {
        iteration: usize,
        #[source]
        source: Box<SolverError>,
    },
}

/// Block sparsity of the Newton matrix over `(v, t)`, with the slack as the
/// last block, and the block coordinates for the ordering.
pub fn kkt_pattern(
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
) -> (Arc<BlockPattern>, Vec<[f64; 3]>) {
    let mut sizes = forms.block_sizes.clone();
    let mut coords = forms.block_coords.clone();
    let nb = sizes.len();
    let mut block_of = vec![0usize; forms.ndof];
    let mut off = 0;
    for (b, &s) in sizes.iter().enumerate() {
        block_of[off..off + s].iter_mut().for_each(|x| *x = b);
        off += s;
    }
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut add = |mut blocks: Vec<usize>| {
        blocks.sort_unstable();
        blocks.dedup();
        for i in 0..blocks.len() {
            for j in 0..i {
                pairs.insert((blocks[i], blocks[j]));
            }
        }
    };
    for dofs in forms.couplings() {
        add(dofs.iter().map(|&d| block_of[d]).collect());
    }
    for r in &constraints.rows {
        let mut blocks: Vec<usize> = r.row.iter().map(|&(d, _)| block_of[d]).collect();
        if constraints.mode == ConstraintMode::Slack {
            blocks.push(nb);
        }
        add(blocks);
    }
    sizes.push(1);
    let k = coords.len().max(1) as f64;
    let c = coords.iter().fold([0.0; 3], |a, x| {
        [a[0] + x[0] / k, a[1] + x[1] / k, a[2] + x[2] / k]
    });
    coords.push(c);
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    pairs.sort_unstable();
    (Arc::new(BlockPattern::new(sizes, pairs)), coords)
}

/// Symbolic factorization shared by all subproblems with the same couplings.
#[derive(Debug, Clone)]
pub struct Workspace {
    symbolic: Arc<Symbolic>,
    pattern: Arc<BlockPattern>,
}

impl Workspace {
    pub fn new(forms: &SubproblemForms, constraints: &ConstraintSet) -> Self {
        let (pattern, coords) = kkt_pattern(forms, constraints);
        let slack = pattern.num_blocks() - 1;
        let symbolic = Arc::new(Symbolic::analyze(pattern.clone(), &coords, &[slack]));
        Self { symbolic, pattern }
    }
}

/// Minimizes the frozen objective over the admissible set (cold start).
pub fn solve_subproblem(
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> Result<SubproblemSolution, SolverError> {
    match constraints.mode {
        ConstraintMode::Slack => {
            let ws = Workspace::new(forms, constraints);
            solve_slack(&ws, forms, constraints, params, None)
        }
        ConstraintMode::Fixed => solve_fixed(forms, constraints, params, None),
    }
}

/// Like [`solve_subproblem`], reusing `ws` and warm-starting from `warm`.
pub fn solve_subproblem_with(
    ws: &Workspace,
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
    params: &SolverParams,
    warm: Option<&[f64]>,
) -> Result<SubproblemSolution, SolverError> {
    match constraints.mode {
        ConstraintMode::Slack => solve_slack(ws, forms, constraints, params, warm),
        ConstraintMode::Fixed => solve_fixed(forms, constraints, params, warm),
    }
}

/// Inequality `i` is `t + sign·(B v − g) ≥ 0` for row `i / 2`, sign `+` for even `i`.
struct Slacks<'a> {
    rows: &'a ConstraintSet,
    ndof: usize,
}

impl Slacks<'_> {
    fn count(&self) -> usize {
        2 * self.rows.rows.len()
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        let t = x[self.ndof];
        let mut s = Vec::with_capacity(self.count());
        for r in &self.rows.rows {
            let d = r.apply(&x[..self.ndof]) - r.target;
            s.push(t + d);
            s.push(t - d);
        }
        s
    }

    /// `G Δx`.
    fn apply(&self, dx: &[f64]) -> Vec<f64> {
        let dt = dx[self.ndof];
        let mut out = Vec::with_capacity(self.count());
        for r in &self.rows.rows {
            let d = r.apply(&dx[..self.ndof]);
            out.push(dt + d);
            out.push(dt - d);
        }
        out
    }

    /// `out += Gᵀ y`.
    fn add_transpose(&self, y: &[f64], out: &mut [f64]) {
        for (e, r) in self.rows.rows.iter().enumerate() {
            let (a, b) = (y[2 * e], y[2 * e + 1]);
            out[self.ndof] += a + b;
            for &(d, w) in &r.row {
                out[d] += w * (a - b);
            }
        }
    }

    /// `K += Gᵀ diag(w) G`.
    fn add_normal(&self, w: &[f64], k: &mut SymMatrix) {
        for (e, r) in self.rows.rows.iter().enumerate() {
            let (a, b) = (w[2 * e], w[2 * e + 1]);
            let m = r.row.len() + 1;
            let mut dofs: Vec<usize> = r.row.iter().map(|&(d, _)| d).collect();
            dofs.push(self.ndof);
            let mut coef: Vec<f64> = r.row.iter().map(|&(_, c)| c).collect();
            coef.push(0.0);
            let mut local = vec![0.0; m * m];
            let (sum, diff) = (a + b, a - b);
            for i in 0..m - 1 {
                for j in 0..m - 1 {
                    local[i * m + j] = sum * coef[i] * coef[j];
                }
                local[i * m + m - 1] = diff * coef[i];
                local[(m - 1) * m + i] = diff * coef[i];
            }
            local[m * m - 1] = sum;
            k.add_local(&dofs, &local);
        }
    }
}

/// Largest `α ∈ (0, 1]` with `v + α dv ≥ (1 − frac) v`.
fn max_step(v: &[f64], dv: &[f64], frac: f64) -> f64 {
    let mut a = 1.0f64;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-frac * x / d);
        }
    }
    a
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn solve_refined(chol: &Cholesky, k: &SymMatrix, rhs: &[f64]) -> Vec<f64> {
    let mut x = chol.solve(rhs);
    let kx = k.mul_vec(&x);
    let r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
    let dx = chol.solve(&r);
    x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    x
}

struct KktState {
    stationarity: f64,
    gap: f64,
    residual: f64,
}

/// The duality gap is measured against `tol + |φ|` so that problems with a
/// vanishing optimum are still solved to full accuracy.
fn kkt_state(grad: &[f64], gtz: &[f64], s: &[f64], z: &[f64], phi: f64, tol: f64) -> KktState {
    let rd: Vec<f64> = grad.iter().zip(gtz).map(|(a, b)| a - b).collect();
    let stationarity = inf_norm(&rd) / (1.0 + inf_norm(grad));
    let gap: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum();
    let comp = gap / (tol + phi.abs());
    KktState {
        stationarity,
        gap,
        residual: stationarity.max(comp),
    }
}

fn finish(
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
    x: &[f64],
    z: &[f64],
    kkt: f64,
    iterations: usize,
) -> SubproblemSolution {
    let nd = forms.ndof;
    let v = x[..nd].to_vec();
    // the optimal slack is the largest nodal misfit
    let t = constraints.max_violation(&v);
    let multipliers = z.chunks(2).map(|c| (c[0], c[1])).collect();
    SubproblemSolution {
        objective: forms.value(t, &v),
        t,
        v,
        kkt_residual: kkt,
        iterations,
        multipliers,
    }
}

/// Iterations without a 10% residual decrease before a stall is declared.
const STALL_ITERS: usize = 25;
/// A stalled iterate is accepted when its residual is within this factor of the tolerance.
const STALL_FACTOR: f64 = 100.0;

fn solve_slack(
    ws: &Workspace,
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
    params: &SolverParams,
    warm: Option<&[f64]>,
) -> Result<SubproblemSolution, SolverError> {
    let nd = forms.ndof;
    let g = Slacks {
        rows: constraints,
        ndof: nd,
    };
    let m = g.count();
    let quadratic = forms.power == 2.0;
    let mut x = vec![0.0; nd + 1];
    if let Some(w) = warm {
        x[..nd].copy_from_slice(&w[..nd]);
    }
    if m == 0 {
        return newton_unconstrained(ws, forms, params, x, &[nd], constraints);
    }
    let scale = 1.0
        + constraints
            .rows
            .iter()
            .fold(0.0f64, |a, r| a.max(r.target.abs()));
    let viol = constraints.max_violation(&x[..nd]);
    x[nd] = viol + 1e-2 * scale.max(viol);
    let mut s = g.values(&x);
    let p = forms.power;
    let dphi_dt = forms.sigma * p * x[nd].powf(p - 1.0);
    let z0 = (dphi_dt / m as f64).max(1e-8 * scale);
    let mut z = vec![z0; m];

    let mut hess = SymMatrix::zeros(ws.pattern.clone());
    let mut k = SymMatrix::zeros(ws.pattern.clone());
    if quadratic {
        forms.derivatives(&x, Some(&mut hess));
    }
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut last_kkt = f64::INFINITY;
    let mut stalled = 0usize;
    for iter in 0..params.max_newton_iters {
        let grad = if quadratic {
            forms.derivatives(&x, None)
        } else {
            hess.set_zero();
            forms.derivatives(&x, Some(&mut hess))
        };
        let phi = forms.value_at(&x);
        let mut gtz = vec![0.0; nd + 1];
        g.add_transpose(&z, &mut gtz);
        let state = kkt_state(&grad, &gtz, &s, &z, phi, params.kkt_tol);
        last_kkt = state.residual;
        log::trace!(
            "ipm {iter}: phi {phi:.6e} stat {:.2e} gap {:.2e} t {:.6e} mins {:.2e}",
            state.stationarity,
            state.gap,
            x[nd],
            s.iter().fold(f64::INFINITY, |a, v| a.min(*v))
        );
        match &best {
            Some(b) if state.residual >= 0.9 * b.0 => stalled += 1,
            _ => stalled = 0,
        }
        if best.as_ref().is_none_or(|b| state.residual < b.0) {
            best = Some((state.residual, x.clone(), z.clone()));
        }
        if state.residual <= params.kkt_tol {
            return Ok(finish(forms, constraints, &x, &z, state.residual, iter));
        }
        if stalled >= STALL_ITERS {
            let (res, bx, bz) = best.as_ref().expect("set above");
            if *res <= STALL_FACTOR * params.kkt_tol {
                log::warn!("interior point stalled at KKT residual {res:.3e} (tolerance {:.1e}); accepting", params.kkt_tol);
                return Ok(finish(forms, constraints, bx, bz, *res, iter));
            }
        }
        let mu = state.gap / m as f64;

        k.copy_from(&hess);
        let d: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
        g.add_normal(&d, &mut k);
        let (chol, _) = factor_with_ridge(&ws.symbolic, &k, params.ridge, 12)?;

        // affine-scaling predictor: K Δx = −∇φ
        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        let dx_aff = solve_refined(&chol, &k, &rhs);
        let ds_aff = g.apply(&dx_aff);
        let dz_aff: Vec<f64> = (0..m).map(|i| -z[i] - d[i] * ds_aff[i]).collect();
        let ap = max_step(&s, &ds_aff, 1.0);
        let ad = max_step(&z, &dz_aff, 1.0);
        let a_aff = ap.min(ad);
        let mu_aff: f64 = (0..m)
            .map(|i| (s[i] + a_aff * ds_aff[i]) * (z[i] + a_aff * dz_aff[i]))
            .sum::<f64>()
            / m as f64;
        let centering = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // combined direction; the second-order term only for the quadratic case
        let target = centering * mu;
        let rc: Vec<f64> = (0..m)
            .map(|i| {
                target
                    - s[i] * z[i]
                    - if quadratic {
                        ds_aff[i] * dz_aff[i]
                    } else {
                        0.0
                    }
            })
            .collect();
        let mut rhs: Vec<f64> = gtz.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let w: Vec<f64> = rc.iter().zip(&s).map(|(r, si)| r / si).collect();
        g.add_transpose(&w, &mut rhs);
        let dx = solve_refined(&chol, &k, &rhs);
        let ds = g.apply(&dx);
        let dz: Vec<f64> = (0..m).map(|i| (rc[i] - z[i] * ds[i]) / s[i]).collect();
        let frac = 0.995;
        let ap = max_step(&s, &ds, frac);
        let ad = max_step(&z, &dz, frac);
        let (alpha_p, alpha_d) = if quadratic {
            let a = ap.min(ad);
            (a, a)
        } else {
            (backtrack(forms, &g, &x, &dx, &grad, &s, ap, target), ad)
        };
        for i in 0..=nd {
            x[i] += alpha_p * dx[i];
        }
        s = g.values(&x);
        if s.iter().any(|v| *v <= 0.0) {
            // rounding pushed a slack onto the boundary; restore strict feasibility
            let lift = s.iter().fold(0.0f64, |a, v| a.max(-v)) + 1e-14 * scale;
            log::trace!("ipm {iter}: lifting t by {lift:.2e} (alpha {alpha_p:.3e})");
            x[nd] += lift;
            s = g.values(&x);
        }
        for i in 0..m {
            z[i] = (z[i] + alpha_d * dz[i]).max(1e-300);
        }
        if !quadratic {
            // keep the duals within a bounded distance from the central path
            let mu_new: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            for i in 0..m {
                let c = mu_new / s[i];
                z[i] = z[i].clamp(1e-10 * c, 1e10 * c);
            }
        }
    }
    let (res, bx, bz) = best.expect("at least one iteration");
    let sol = finish(
        forms,
        constraints,
        &bx,
        &bz,
        res.min(last_kkt),
        params.max_newton_iters,
    );
    Err(SolverError::NonConvergence {
        iterations: params.max_newton_iters,
        kkt_residual: sol.kkt_residual,
        best: Box::new(sol),
    })
}

/// Armijo backtracking on `φ(x) − μ Σ log s(x)` along `dx`.
fn backtrack(
    forms: &SubproblemForms,
    g: &Slacks,
    x: &[f64],
    dx: &[f64],
    grad: &[f64],
    s: &[f64],
    amax: f64,
    mu: f64,
) -> f64 {
    let merit =
        |y: &[f64], sv: &[f64]| forms.value_at(y) - mu * sv.iter().map(|v| v.ln()).sum::<f64>();
    let m0 = merit(x, s);
    let ds = g.apply(dx);
    let slope: f64 = grad.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>()
        - mu * s.iter().zip(&ds).map(|(si, d)| d / si).sum::<f64>();
    let mut a = amax;
    let mut y = x.to_vec();
    for _ in 0..40 {
        for i in 0..x.len() {
            y[i] = x[i] + a * dx[i];
        }
        let sv = g.values(&y);
        if sv.iter().all(|v| *v > 0.0) {
            let m1 = merit(&y, &sv);
            if m1 <= m0 + 1e-4 * a * slope.min(0.0)
                || (m1 - m0).abs() <= 1e-15 * m0.abs().max(1e-300)
            {
                return a;
            }
        }
        a *= 0.5;
    }
    a
}

/// Damped Newton without inequalities; `masked` entries of `x` stay fixed.
fn newton_unconstrained(
    ws: &Workspace,
    forms: &SubproblemForms,
    params: &SolverParams,
    mut x: Vec<f64>,
    masked: &[usize],
    constraints: &ConstraintSet,
) -> Result<SubproblemSolution, SolverError> {
    let mut hess = SymMatrix::zeros(ws.pattern.clone());
    let mut last = f64::INFINITY;
    for iter in 0..params.max_newton_iters {
        hess.set_zero();
        let mut grad = forms.derivatives(&x, Some(&mut hess));
        for &i in masked {
            grad[i] = 0.0;
        }
        let phi = forms.value_at(&x);
        let res = inf_norm(&grad) / (1.0 + phi.abs().sqrt());
        last = res;
        if res <= params.kkt_tol {
            return Ok(finish(forms, constraints, &x, &[], res, iter));
        }
        for &i in masked {
            hess.add(i, i, 1.0);
        }
        let (chol, _) = factor_with_ridge(&ws.symbolic, &hess, params.ridge, 12)?;
        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        let dx = solve_refined(&chol, &hess, &rhs);
        let slope: f64 = grad.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let mut a = 1.0;
        let mut y = x.clone();
        for _ in 0..60 {
            for i in 0..x.len() {
                y[i] = x[i] + a * dx[i];
            }
            if forms.value_at(&y) <= phi + 1e-4 * a * slope {
                break;
            }
            a *= 0.5;
        }
        if a * inf_norm(&dx) <= 1e-300 {
            break;
        }
        x = y;
    }
    let best = finish(forms, constraints, &x, &[], last, params.max_newton_iters);
    Err(SolverError::NonConvergence {
        iterations: params.max_newton_iters,
        kkt_residual: last,
        best: Box::new(best),
    })
}

/// `v_p = offset − Σ_j coef_j v_j` for each eliminated (pivot) dof.
#[derive(Debug, Clone, Default)]
struct Elimination {
    pivots: HashMap<usize, (f64, Vec<(usize, f64)>)>,
}

/// Gauss-Jordan elimination with full pivoting on each connected group of rows.
fn eliminate(constraints: &ConstraintSet) -> Result<Elimination, SolverError> {
    let rows = &constraints.rows;
    // union-find over rows sharing dofs
    let mut parent: Vec<usize> = (0..rows.len()).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let n = p[i];
            p[i] = r;
            i = n;
        }
        r
    }
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        for &(d, _) in &r.row {
            if let Some(&j) = owner.get(&d) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            } else {
                owner.insert(d, i);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..rows.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut keys: Vec<usize> = groups.keys().copied().collect();
    keys.sort_unstable();
    let mut out = Elimination::default();
    for key in keys {
        let members = &groups[&key];
        let mut cols: Vec<usize> = members
            .iter()
            .flat_map(|&i| rows[i].row.iter().map(|&(d, _)| d))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let col_of: HashMap<usize, usize> = cols.iter().enumerate().map(|(k, &d)| (d, k)).collect();
        let nr = members.len();
        let nc = cols.len();
        let mut a = vec![vec![0.0; nc + 1]; nr];
        for (ri, &i) in members.iter().enumerate() {
            for &(d, w) in &rows[i].row {
                a[ri][col_of[&d]] += w;
            }
            a[ri][nc] = rows[i].target;
        }
        let scale = a
            .iter()
            .flat_map(|r| r[..nc].iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let mut col_perm: Vec<usize> = (0..nc).collect();
        let mut rank = 0;
        while rank < nr.min(nc) {
            let mut best = (0.0, rank, rank);
            for (i, row) in a.iter().enumerate().skip(rank) {
                for (j, &cj) in col_perm.iter().enumerate().skip(rank) {
                    if row[cj].abs() > best.0 {
                        best = (row[cj].abs(), i, j);
                    }
                }
            }
            if best.0 <= 1e-12 * scale {
                break;
            }
            a.swap(rank, best.1);
            col_perm.swap(rank, best.2);
            let pc = col_perm[rank];
            let piv = a[rank][pc];
            for v in a[rank].iter_mut() {
                *v /= piv;
            }
            let prow = a[rank].clone();
            for (i, row) in a.iter_mut().enumerate() {
                if i != rank && row[pc] != 0.0 {
                    let f = row[pc];
                    for (x, y) in row.iter_mut().zip(&prow) {
                        *x -= f * y;
                    }
                }
            }
            rank += 1;
        }
        let rhs_scale = 1.0 + a.iter().fold(0.0f64, |m, r| m.max(r[nc].abs()));
        for (ri, row) in a.iter().enumerate().skip(rank) {
            if row[nc].abs() > 1e-10 * rhs_scale {
                return Err(SolverError::InfeasibleConstraints {
                    row: members[ri],
                    defect: row[nc],
                });
            }
        }
        for (k, row) in a.iter().enumerate().take(rank) {
            let p = cols[col_perm[k]];
            let deps: Vec<(usize, f64)> = col_perm[rank..]
                .iter()
                .filter(|&&c| row[c] != 0.0)
                .map(|&c| (cols[c], row[c]))
                .collect();
            out.pivots.insert(p, (row[nc], deps));
        }
    }
    Ok(out)
}

/// Rewrites a term set with the pivot dofs substituted.
fn substitute(set: &TermSet, elim: &Elimination) -> TermSet {
    let m = set.dofs.len();
    let mut dofs: Vec<usize> = set
        .dofs
        .iter()
        .copied()
        .filter(|d| !elim.pivots.contains_key(d))
        .collect();
    for d in &set.dofs {
        if let Some((_, deps)) = elim.pivots.get(d) {
            for &(j, _) in deps {
                if !dofs.contains(&j) {
                    dofs.push(j);
                }
            }
        }
    }
    let pos: HashMap<usize, usize> = dofs.iter().enumerate().map(|(k, &d)| (d, k)).collect();
    let nm = dofs.len();
    let nrow = set.consts.len();
    let mut rows = vec![0.0; nrow * nm];
    let mut consts = set.consts.clone();
    for r in 0..nrow {
        for (i, &d) in set.dofs.iter().enumerate() {
            let c = set.rows[r * m + i];
            if c == 0.0 {
                continue;
            }
            match elim.pivots.get(&d) {
                None => rows[r * nm + pos[&d]] += c,
                Some((offset, deps)) => {
                    consts[r] += c * offset;
                    for &(j, w) in deps {
                        rows[r * nm + pos[&j]] -= c * w;
                    }
                }
            }
        }
    }
    TermSet {
        dofs,
        rows,
        consts,
        groups: set.groups.clone(),
        power: set.power,
    }
}

fn solve_fixed(
    forms: &SubproblemForms,
    constraints: &ConstraintSet,
    params: &SolverParams,
    warm: Option<&[f64]>,
) -> Result<SubproblemSolution, SolverError> {
    let elim = eliminate(constraints)?;
    let reduced = SubproblemForms {
        misfit: forms.misfit.iter().map(|s| substitute(s, &elim)).collect(),
        stabilization: forms
            .stabilization
            .iter()
            .map(|s| substitute(s, &elim))
            .collect(),
        ..forms.clone()
    };
    let nd = forms.ndof;
    let free_constraints = ConstraintSet {
        mode: ConstraintMode::Fixed,
        rows: Vec::new(),
    };
    let ws = Workspace::new(&reduced, &free_constraints);
    let mut x = vec![0.0; nd + 1];
    if let Some(w) = warm {
        x[..nd].copy_from_slice(&w[..nd]);
    }
    let mut masked: Vec<usize> = elim.pivots.keys().copied().collect();
    masked.sort_unstable();
    masked.push(nd);
    for &p in &masked[..masked.len() - 1] {
        x[p] = 0.0;
    }
    let recover = |x: &mut Vec<f64>| {
        for (&p, (offset, deps)) in &elim.pivots {
            x[p] = offset - deps.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
        }
    };
    let out = newton_unconstrained(&ws, &reduced, params, x, &masked, &free_constraints);
    let fix = |mut sol: SubproblemSolution| {
        recover(&mut sol.v);
        sol.t = 0.0;
        sol.objective = forms.value(0.0, &sol.v);
        sol
    };
    match out {
        Ok(sol) => Ok(fix(sol)),
        Err(SolverError::NonConvergence {
            iterations,
            kkt_residual,
            best,
        }) => Err(SolverError::NonConvergence {
            iterations,
            kkt_residual,
            best: Box::new(fix(*best)),
        }),
        Err(e) => Err(e),
    }
}

/// Outcome of the policy iteration.
#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub solution: SubproblemSolution,
    /// Frozen-objective value after every subproblem solve.
    pub trace: Vec<f64>,
    pub policy: PolicyField,
}

/// Alternates subproblem solves with policy updates, starting from the
/// operator's initial policy, for `params.policy_iters` steps. Stops early
/// when the policy no longer changes.
pub fn policy_iteration(
    space: &Space,
    op: &Operator,
    f: &Field,
    g: &Field,
    params: &SolverParams,
    mode: ConstraintMode,
) -> Result<PolicyIterationResult, SolverError> {
    let constraints = boundary_constraints(space, g, mode);
    let mut policy = initial_policy(space, op);
    let mut ws: Option<Workspace> = None;
    let mut trace = Vec::new();
    let mut current: Option<SubproblemSolution> = None;
    for iteration in 0..params.policy_iters.max(1) {
        let forms = SubproblemForms::assemble(space, &policy, f, params.sigma, params.tau);
        let ws = ws.get_or_insert_with(|| Workspace::new(&forms, &constraints));
        let warm = current.as_ref().map(|s| s.v.as_slice());
        let sol = solve_subproblem_with(ws, &forms, &constraints, params, warm).map_err(|e| {
            SolverError::PolicyIteration {
                iteration,
                source: Box::new(e),
            }
        })?;
        log::debug!(
            "policy step {iteration}: objective {:.6e} ({} ipm steps)",
            sol.objective,
            sol.iterations
        );
        trace.push(sol.objective);
        let next = freeze_policy(space, op, &sol.v);
        let unchanged = next.max_difference(&policy) <= 1e-14;
        policy = next;
        current = Some(sol);
        if unchanged {
            // the next subproblem is identical; its solution is the current one
            while trace.len() < params.policy_iters {
                trace.push(*trace.last().expect("nonempty"));
            }
            break;
        }
    }
    Ok(PolicyIterationResult {
        solution: current.expect("at least one solve"),
        trace,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::{diag, identity};
    use crate::mesh::{presets, Mesh};
    use crate::operators::{LinearCoefficients, PucciSign, Structure};
    use crate::residual::Constraint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_dof_problem() -> (SubproblemForms, ConstraintSet) {
        // t² + (v − 2)²  s.t.  −t ≤ v ≤ t
        let mut set = TermSet::new(vec![0], 2.0);
        set.push_group(&[vec![1.0]], &[-2.0], 1.0);
        let forms = SubproblemForms::from_terms(2.0, 1.0, 1.0, 1, vec![set], vec![]);
        let cons = ConstraintSet {
            mode: ConstraintMode::Slack,
            rows: vec![Constraint {
                row: vec![(0, 1.0)],
                target: 0.0,
                node: 0,
            }],
        };
        (forms, cons)
    }

    #[test]
    fn one_dof_example() {
        let (forms, cons) = one_dof_problem();
        let params = SolverParams {
            sigma: 1.0,
            ..SolverParams::for_dim(2)
        };
        let sol = solve_subproblem(&forms, &cons, &params).unwrap();
        assert!(
            (sol.t - 1.0).abs() < 1e-7 && (sol.v[0] - 1.0).abs() < 1e-7,
            "{sol:?}"
        );
        assert!((sol.objective - 2.0).abs() < 1e-7);
        // grid scan oracle
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let t = 2.0 * i as f64 / 400.0;
                let v = -2.0 + 4.0 * j as f64 / 400.0;
                if v.abs() <= t {
                    best = best.min(t * t + (v - 2.0) * (v - 2.0));
                }
            }
        }
        assert!((best - sol.objective).abs() < 1e-4);
    }

    fn laplace() -> Operator {
        let st = Structure {
            lambda: 1.0,
            big_lambda: 1.0,
            gamma: 0.0,
            mu: 0.0,
        };
        Operator::linear(
            2,
            LinearCoefficients::constant(identity(2), [0.0; 3], 0.0, 0.0),
            st,
        )
    }

    fn quadratic() -> Field {
        Field::new(|x| x[0] * x[0] + x[1] * x[1])
            .with_gradient(|x| [2.0 * x[0], 2.0 * x[1], 0.0])
            .with_hessian(|_| diag(2, &[2.0, 2.0]))
    }

    #[test]
    fn fixed_mode_reproduces_polynomial() {
        let u = quadratic();
        let mesh = Arc::new(Mesh::rect_grid(2, 2, [0.0, 1.0], [0.0, 1.0]));
        let bfs = Space::bfs(mesh).unwrap();
        let params = SolverParams::for_dim(2);
        let res = policy_iteration(
            &bfs,
            &laplace(),
            &Field::constant(-4.0),
            &u,
            &params,
            ConstraintMode::Fixed,
        )
        .unwrap();
        let exact = bfs.interpolate(&u);
        let err = res
            .solution
            .v
            .iter()
            .zip(&exact)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
        assert!(res.solution.objective <= 1e-16);
    }

    #[test]
    fn inconsistent_equalities_are_rejected() {
        let (forms, _) = one_dof_problem();
        let cons = ConstraintSet {
            mode: ConstraintMode::Fixed,
            rows: vec![
                Constraint {
                    row: vec![(0, 1.0)],
                    target: 0.0,
                    node: 0,
                },
                Constraint {
                    row: vec![(0, 2.0)],
                    target: 1.0,
                    node: 1,
                },
            ],
        };
        let err = solve_subproblem(&forms, &cons, &SolverParams::for_dim(2)).unwrap_err();
        assert!(matches!(err, SolverError::InfeasibleConstraints { .. }));
    }

    #[test]
    fn zero_data_gives_zero() {
        let space = Space::dg(Arc::new(presets::unit_square_triangles()), 2).unwrap();
        let params = SolverParams::for_dim(2);
        let zero = Field::constant(0.0);
        let res = policy_iteration(
            &space,
            &laplace(),
            &zero,
            &zero,
            &params,
            ConstraintMode::Slack,
        )
        .unwrap();
        assert!(res.solution.t.abs() < 1e-8);
        assert!(inf_norm(&res.solution.v) < 1e-8);
    }

    #[test]
    fn linear_policy_trace_is_flat() {
        let space = Space::dg(
            Arc::new(presets::unit_square_triangles().refine_uniform()),
            2,
        )
        .unwrap();
        let params = SolverParams::for_dim(2);
        let f = Field::new(|x| (3.0 * x[0]).sin());
        let res = policy_iteration(
            &space,
            &laplace(),
            &f,
            &Field::constant(0.0),
            &params,
            ConstraintMode::Slack,
        )
        .unwrap();
        assert_eq!(res.trace.len(), 8);
        assert!((res.trace[1] - res.trace[0]).abs() <= 1e-14);
    }

    #[test]
    fn linear_manufactured_solution_is_recovered() {
        let u = quadratic();
        for (k, mesh) in [
            (2, presets::unit_square_triangles()),
            (3, presets::unit_square_triangles().refine_uniform()),
        ] {
            let space = Space::dg(Arc::new(mesh), k).unwrap();
            let res = policy_iteration(
                &space,
                &laplace(),
                &Field::constant(-4.0),
                &u,
                &SolverParams::for_dim(2),
                ConstraintMode::Slack,
            )
            .unwrap();
            let r = crate::residual::evaluate_residual_nc(
                &space,
                &res.solution.v,
                &laplace(),
                &Field::constant(-4.0),
                &u,
            );
            assert!(r.total <= 1e-8, "{r:?}");
            let exact = space.interpolate(&u);
            let err = res
                .solution
                .v
                .iter()
                .zip(&exact)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-8, "{err}");
        }
    }

    /// Exhaustive active-set oracle for tiny problems: enumerates every set of
    /// active inequalities, solves the equality-constrained quadratic program
    /// by dense elimination and keeps the best feasible point.
    fn active_set_oracle(h: &[Vec<f64>], c: &[f64], g: &[Vec<f64>], hv: &[f64]) -> f64 {
        let n = c.len();
        let m = hv.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = act.len();
            let dim = n + k;
            let mut a = vec![vec![0.0; dim + 1]; dim];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = h[i][j];
                }
                a[i][dim] = -c[i];
                for (q, &r) in act.iter().enumerate() {
                    a[i][n + q] = -g[r][i];
                }
            }
            for (q, &r) in act.iter().enumerate() {
                for j in 0..n {
                    a[n + q][j] = g[r][j];
                }
                a[n + q][dim] = hv[r];
            }
            // Gaussian elimination with partial pivoting
            let mut ok = true;
            for col in 0..dim {
                let p = (col..dim)
                    .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                    .unwrap();
                if a[p][col].abs() < 1e-12 {
                    ok = false;
                    break;
                }
                a.swap(col, p);
                for i in 0..dim {
                    if i != col {
                        let f = a[i][col] / a[col][col];
                        for j in col..=dim {
                            a[i][j] -= f * a[col][j];
                        }
                    }
                }
            }
            if !ok {
                continue;
            }
            let x: Vec<f64> = (0..n).map(|i| a[i][dim] / a[i][i]).collect();
            if (0..m).all(|r| (0..n).map(|j| g[r][j] * x[j]).sum::<f64>() >= hv[r] - 1e-9) {
                let val: f64 = 0.5
                    * (0..n)
                        .map(|i| (0..n).map(|j| x[i] * h[i][j] * x[j]).sum::<f64>())
                        .sum::<f64>()
                    + (0..n).map(|i| c[i] * x[i]).sum::<f64>();
                best = best.min(val);
            }
        }
        best
    }

    #[test]
    fn random_tiny_problems_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let nd = rng.random_range(1..=5);
            let nrows = rng.random_range(1..=2);
            let mut sets = Vec::new();
            for _ in 0..3 {
                let mut set = TermSet::new((0..nd).collect(), 2.0);
                let row: Vec<f64> = (0..nd).map(|_| rng.random_range(-1.0..1.0)).collect();
                set.push_group(
                    &[row],
                    &[rng.random_range(-1.0..1.0)],
                    rng.random_range(0.5..2.0),
                );
                sets.push(set);
            }
            let sigma = rng.random_range(0.5..5.0);
            let forms = SubproblemForms::from_terms(2.0, sigma, 1.0, nd, sets, vec![]);
            let rows: Vec<Constraint> = (0..nrows)
                .map(|i| Constraint {
                    row: (0..nd).map(|d| (d, rng.random_range(-1.0..1.0))).collect(),
                    target: rng.random_range(-1.0..1.0),
                    node: i,
                })
                .collect();
            let cons = ConstraintSet {
                mode: ConstraintMode::Slack,
                rows,
            };
            let sol = solve_subproblem(&forms, &cons, &SolverParams::for_dim(2)).unwrap();
            // dense data for the oracle over x = (v, t)
            let n = nd + 1;
            let mut h = vec![vec![0.0; n]; n];
            let mut c = vec![0.0; n];
            let mut konst = 0.0;
            for s in &forms.misfit {
                let w = s.groups[0].weight;
                for i in 0..nd {
                    for j in 0..nd {
                        h[i][j] += 2.0 * w * s.rows[i] * s.rows[j];
                    }
                    c[i] += 2.0 * w * s.rows[i] * s.consts[0];
                }
                konst += w * s.consts[0] * s.consts[0];
            }
            h[nd][nd] = 2.0 * sigma;
            let mut g = Vec::new();
            let mut hv = Vec::new();
            for r in &cons.rows {
                for sign in [1.0, -1.0] {
                    let mut row = vec![0.0; n];
                    for &(d, w) in &r.row {
                        row[d] = sign * w;
                    }
                    row[nd] = 1.0;
                    g.push(row);
                    hv.push(sign * r.target);
                }
            }
            let oracle = active_set_oracle(&h, &c, &g, &hv) + konst;
            assert!(
                (sol.objective - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
                "{} vs {oracle}",
                sol.objective
            );
        }
    }

    #[test]
    fn kkt_and_slack_consistency_on_pucci() {
        let mesh = presets::l_shape();
        let space = Space::dg(Arc::new(mesh), 2).unwrap();
        let op = Operator::pucci(2, 0.1, 0.9, 0.0, PucciSign::Plus).unwrap();
        let params = SolverParams::for_dim(2);
        let res = policy_iteration(
            &space,
            &op,
            &Field::constant(1.0),
            &Field::constant(0.0),
            &params,
            ConstraintMode::Slack,
        )
        .unwrap();
        let sol = &res.solution;
        assert!(sol.kkt_residual <= params.kkt_tol);
        let cons = boundary_constraints(&space, &Field::constant(0.0), ConstraintMode::Slack);
        assert!((sol.t - cons.max_violation(&sol.v)).abs() < 1e-8);
        let non_increasing = res
            .trace
            .windows(2)
            .skip(1)
            .filter(|w| w[1] <= w[0] * (1.0 + 1e-9))
            .count();
        assert!(non_increasing + 1 >= res.trace.len() - 1, "{:?}", res.trace);
    }

    #[test]
    fn three_dimensional_subproblem_converges() {
        let mesh = presets::unit_cube();
        let space = Space::dg(Arc::new(mesh), 2).unwrap();
        let op = Operator::monge_ampere(3, 1e-3, |_| 1.0).unwrap();
        let params = SolverParams {
            policy_iters: 3,
            ..SolverParams::for_dim(3)
        };
        let g = Field::new(|x| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
        let res = policy_iteration(
            &space,
            &op,
            &Field::constant(0.0),
            &g,
            &params,
            ConstraintMode::Slack,
        )
        .unwrap();
        assert!(res.solution.kkt_residual <= params.kkt_tol);
        assert!(res.trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_reruns() {
        let space = Space::dg(
            Arc::new(presets::unit_square_triangles().refine_uniform()),
            2,
        )
        .unwrap();
        let op = Operator::monge_ampere(2, 1e-4, |_| 1.0).unwrap();
        let params = SolverParams::for_dim(2);
        let zero = Field::constant(0.0);
        let a =
            policy_iteration(&space, &op, &zero, &zero, &params, ConstraintMode::Slack).unwrap();
        let b =
            policy_iteration(&space, &op, &zero, &zero, &params, ConstraintMode::Slack).unwrap();
        assert_eq!(
            a.solution.objective.to_bits(),
            b.solution.objective.to_bits()
        );
    }
}
