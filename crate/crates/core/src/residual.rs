//! Pieces of the minimal-residual objective.
//!
//! For a frozen policy the objective over `(t, v)` is
//!
//! ```text
//! σ tⁿ + Σ_q w_q |F_frozen[v](x_q) − f(x_q)|ⁿ + τ s(v; n)
//! ```
//!
//! subject to `−t ≤ g(z) − v(z) ≤ t` at the boundary nodes. Every term is a
//! weighted power of the Euclidean norm of an affine function of the local
//! coefficients, collected in [`TermSet`]s.

use crate::function::Field;
use crate::linalg::dense::{frob, Vec3};
use crate::linalg::SymMatrix;
use crate::operators::{Operator, Policy};
use crate::space::{Space, SpaceKind};

#[derive(Debug, thiserror::Error)]
pub enum ResidualError {
    #[error("jump stabilization is only defined for discontinuous spaces")]
    ConformingSpace,
    #[error("exponent must lie in (1, inf) (got {0})")]
    BadExponent(f64),
}

/// Supremizing coefficients at every volume quadrature point, per cell.
#[derive(Debug, Clone)]
pub struct PolicyField {
    pub cells: Vec<Vec<Policy>>,
}

impl PolicyField {
    /// Largest entrywise difference between two policy fields.
    pub fn max_difference(&self, other: &PolicyField) -> f64 {
        let mut d = 0.0f64;
        for (a, b) in self.cells.iter().zip(&other.cells) {
            for (p, q) in a.iter().zip(b) {
                for i in 0..3 {
                    d = d.max((p.b[i] - q.b[i]).abs());
                    for j in 0..3 {
                        d = d.max((p.a[i][j] - q.a[i][j]).abs());
                    }
                }
                d = d.max((p.c - q.c).abs()).max((p.f_a - q.f_a).abs());
            }
        }
        d
    }
}

/// Policy supremizing `op` at `v` at every volume quadrature point.
pub fn freeze_policy(space: &Space, op: &Operator, v: &[f64]) -> PolicyField {
    let cells = (0..space.mesh().num_cells())
        .map(|c| {
            let e = space.eval_volume(c);
            let coef = space.local(v, c);
            (0..e.npts())
                .map(|q| {
                    let (val, g, h) = e.field(q, &coef);
                    op.supremizer(&e.x[q], val, &g, &h)
                })
                .collect()
        })
        .collect();
    PolicyField { cells }
}

/// The starting policy of the iteration at every volume quadrature point.
pub fn initial_policy(space: &Space, op: &Operator) -> PolicyField {
    let cells = (0..space.mesh().num_cells())
        .map(|c| {
            space
                .eval_volume(c)
                .x
                .iter()
                .map(|x| op.initial_policy(x))
                .collect()
        })
        .collect();
    PolicyField { cells }
}

/// One group of rows: contributes `weight · ‖R v + c‖^p` over `rows[start..start+len]`.
#[derive(Debug, Clone, Copy)]
pub struct TermGroup {
    pub start: usize,
    pub len: usize,
    pub weight: f64,
}

/// Terms sharing one local dof list (one cell, or the two cells of a face).
#[derive(Debug, Clone)]
pub struct TermSet {
    pub dofs: Vec<usize>,
    /// Row-major, `dofs.len()` entries per row.
    pub rows: Vec<f64>,
    pub consts: Vec<f64>,
    pub groups: Vec<TermGroup>,
    pub power: f64,
}

impl TermSet {
    pub fn new(dofs: Vec<usize>, power: f64) -> Self {
        Self {
            dofs,
            rows: Vec::new(),
            consts: Vec::new(),
            groups: Vec::new(),
            power,
        }
    }

    pub fn push_group(&mut self, rows: &[Vec<f64>], consts: &[f64], weight: f64) {
        let start = self.consts.len();
        for (r, c) in rows.iter().zip(consts) {
            debug_assert_eq!(r.len(), self.dofs.len());
            self.rows.extend_from_slice(r);
            self.consts.push(*c);
        }
        self.groups.push(TermGroup {
            start,
            len: rows.len(),
            weight,
        });
    }

    fn residuals(&self, v: &[f64]) -> Vec<f64> {
        let m = self.dofs.len();
        let loc: Vec<f64> = self.dofs.iter().map(|&d| v[d]).collect();
        self.consts
            .iter()
            .enumerate()
            .map(|(r, c)| {
                c + self.rows[r * m..(r + 1) * m]
                    .iter()
                    .zip(&loc)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        let r = self.residuals(v);
        self.groups
            .iter()
            .map(|g| {
                let n2: f64 = r[g.start..g.start + g.len].iter().map(|x| x * x).sum();
                g.weight * n2.powf(0.5 * self.power)
            })
            .sum()
    }

    /// Adds `scale ·` gradient to `grad` and, when given, `scale ·` Hessian to `hess`.
    pub fn accumulate(
        &self,
        v: &[f64],
        scale: f64,
        grad: &mut [f64],
        hess: Option<&mut SymMatrix>,
    ) {
        let m = self.dofs.len();
        let p = self.power;
        let r = self.residuals(v);
        let mut local_h = hess.as_ref().map(|_| vec![0.0; m * m]);
        let mut rtr = vec![0.0; m];
        for g in &self.groups {
            let rs = &r[g.start..g.start + g.len];
            let n2: f64 = rs.iter().map(|x| x * x).sum();
            let rho = n2.sqrt();
            if rho == 0.0 && p != 2.0 {
                continue;
            }
            // p w ρ^{p−2}
            let coef = scale * p * g.weight * if p == 2.0 { 1.0 } else { rho.powf(p - 2.0) };
            rtr.iter_mut().for_each(|x| *x = 0.0);
            for (k, rk) in rs.iter().enumerate() {
                let row = &self.rows[(g.start + k) * m..(g.start + k + 1) * m];
                for i in 0..m {
                    rtr[i] += row[i] * rk;
                }
            }
            for i in 0..m {
                grad[self.dofs[i]] += coef * rtr[i];
            }
            if let Some(h) = local_h.as_mut() {
                for k in 0..g.len {
                    let row = &self.rows[(g.start + k) * m..(g.start + k + 1) * m];
                    for i in 0..m {
                        if row[i] == 0.0 {
                            continue;
                        }
                        let ri = coef * row[i];
                        for j in 0..m {
                            h[i * m + j] += ri * row[j];
                        }
                    }
                }
                if p != 2.0 && g.len > 1 {
                    let c2 = coef * (p - 2.0) / n2;
                    for i in 0..m {
                        for j in 0..m {
                            h[i * m + j] += c2 * rtr[i] * rtr[j];
                        }
                    }
                } else if p != 2.0 {
                    // single row: (p − 2) r rᵀ / ρ² = (p − 2) on R^T R
                    let row = &self.rows[g.start * m..(g.start + 1) * m];
                    let c2 = coef * (p - 2.0);
                    for i in 0..m {
                        for j in 0..m {
                            h[i * m + j] += c2 * row[i] * row[j];
                        }
                    }
                }
            }
        }
        if let (Some(h), Some(mat)) = (local_h, hess) {
            mat.add_local(&self.dofs, &h);
        }
    }
}

/// Misfit rows `F_frozen[v] − f` at every volume quadrature point.
pub fn assemble_misfit(space: &Space, policy: &PolicyField, f: &Field, power: f64) -> Vec<TermSet> {
    let n = space.dim();
    (0..space.mesh().num_cells())
        .map(|c| {
            let e = space.eval_volume(c);
            let nl = e.nloc;
            let mut set = TermSet::new(space.cell_dofs(c), power);
            for q in 0..e.npts() {
                let pol = &policy.cells[c][q];
                let row: Vec<f64> = (0..nl)
                    .map(|i| {
                        let k = q * nl + i;
                        -frob(n, &pol.a, &e.hess[k])
                            + (0..n).map(|a| pol.b[a] * e.grad[k][a]).sum::<f64>()
                            + pol.c * e.val[k]
                    })
                    .collect();
                set.push_group(&[row], &[pol.f_a - f.value(&e.x[q])], e.w[q]);
            }
            set
        })
        .collect()
}

/// Value and gradient jump terms over interior faces with weights
/// `h_F^{1−2p}` and `h_F^{1−p}`.
pub fn assemble_stabilization(space: &Space, power: f64) -> Result<Vec<TermSet>, ResidualError> {
    if space.kind() != SpaceKind::DgSimplex {
        return Err(ResidualError::ConformingSpace);
    }
    if !(power > 1.0 && power.is_finite()) {
        return Err(ResidualError::BadExponent(power));
    }
    let n = space.dim();
    let nl = space.nloc();
    let mut out = Vec::new();
    for (fi, face) in space.mesh().faces().iter().enumerate() {
        let Some(other) = face.cells.1 else { continue };
        let (c0, c1) = if face.cells.0 < other {
            (face.cells.0, other)
        } else {
            (other, face.cells.0)
        };
        let (pts, ws) = space.face_quadrature(fi);
        let e0 = space.eval_phys(c0, &pts);
        let e1 = space.eval_phys(c1, &pts);
        let mut dofs = space.cell_dofs(c0);
        dofs.extend(space.cell_dofs(c1));
        let h = face.diameter;
        let wv = h.powf(1.0 - 2.0 * power);
        let wg = h.powf(1.0 - power);
        let mut set = TermSet::new(dofs, power);
        for q in 0..pts.len() {
            let mut vrow = vec![0.0; 2 * nl];
            let mut grows = vec![vec![0.0; 2 * nl]; n];
            for i in 0..nl {
                vrow[i] = e0.val[q * nl + i];
                vrow[nl + i] = -e1.val[q * nl + i];
                for a in 0..n {
                    grows[a][i] = e0.grad[q * nl + i][a];
                    grows[a][nl + i] = -e1.grad[q * nl + i][a];
                }
            }
            set.push_group(&[vrow], &[0.0], wv * ws[q]);
            set.push_group(&grows, &vec![0.0; n], wg * ws[q]);
        }
        out.push(set);
    }
    Ok(out)
}

/// `s(v; p)` for a DG coefficient vector.
pub fn stabilization_value(space: &Space, v: &[f64], power: f64) -> Result<f64, ResidualError> {
    Ok(assemble_stabilization(space, power)?
        .iter()
        .map(|s| s.value(v))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// `−t ≤ g(z) − v(z) ≤ t` with a shared slack `t`.
    Slack,
    /// `v(z) = g(z)`.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub row: Vec<(usize, f64)>,
    pub target: f64,
    pub node: usize,
}

impl Constraint {
    pub fn apply(&self, v: &[f64]) -> f64 {
        self.row.iter().map(|&(d, w)| w * v[d]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub mode: ConstraintMode,
    pub rows: Vec<Constraint>,
}

impl ConstraintSet {
    /// Number of scalar inequalities (two per row in slack mode).
    pub fn inequality_count(&self) -> usize {
        match self.mode {
            ConstraintMode::Slack => 2 * self.rows.len(),
            ConstraintMode::Fixed => 0,
        }
    }

    /// `max_z |g(z) − v(z)|`.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        self.rows
            .iter()
            .fold(0.0f64, |m, r| m.max((r.target - r.apply(v)).abs()))
    }
}

/// Nodal boundary constraints `g_j(z) = g(z)` at every boundary node entry.
pub fn boundary_constraints(space: &Space, g: &Field, mode: ConstraintMode) -> ConstraintSet {
    let nodes = space.boundary_nodes();
    let rows = nodes
        .entries
        .into_iter()
        .map(|e| Constraint {
            target: g.value(&e.point),
            row: e.row,
            node: e.node,
        })
        .collect();
    ConstraintSet { mode, rows }
}

/// The policy-frozen objective.
#[derive(Debug, Clone)]
pub struct SubproblemForms {
    pub power: f64,
    pub sigma: f64,
    pub tau: f64,
    pub ndof: usize,
    pub misfit: Vec<TermSet>,
    pub stabilization: Vec<TermSet>,
    /// Dof blocks (consecutive dof ranges) with a representative point each,
    /// used for the sparsity pattern and the fill-reducing ordering.
    pub block_sizes: Vec<usize>,
    pub block_coords: Vec<Vec3>,
}

impl SubproblemForms {
    /// Forms from explicit term sets with one block per dof.
    pub fn from_terms(
        power: f64,
        sigma: f64,
        tau: f64,
        ndof: usize,
        misfit: Vec<TermSet>,
        stabilization: Vec<TermSet>,
    ) -> Self {
        Self {
            power,
            sigma,
            tau,
            ndof,
            misfit,
            stabilization,
            block_sizes: vec![1; ndof],
            block_coords: vec![[0.0; 3]; ndof],
        }
    }

    /// Assembles the objective for `policy`; stabilization is included for DG spaces.
    pub fn assemble(space: &Space, policy: &PolicyField, f: &Field, sigma: f64, tau: f64) -> Self {
        let power = space.dim() as f64;
        let misfit = assemble_misfit(space, policy, f, power);
        let stabilization = match space.kind() {
            SpaceKind::DgSimplex => assemble_stabilization(space, power).expect("dg space"),
            SpaceKind::BfsRectangle => Vec::new(),
        };
        let (block_sizes, block_coords) = space.dof_blocks();
        Self {
            power,
            sigma,
            tau,
            ndof: space.ndof(),
            misfit,
            stabilization,
            block_sizes,
            block_coords,
        }
    }

    pub fn misfit_value(&self, v: &[f64]) -> f64 {
        self.misfit.iter().map(|s| s.value(v)).sum()
    }

    pub fn stabilization_value(&self, v: &[f64]) -> f64 {
        self.stabilization.iter().map(|s| s.value(v)).sum()
    }

    pub fn value(&self, t: f64, v: &[f64]) -> f64 {
        self.sigma * t.abs().powf(self.power)
            + self.misfit_value(v)
            + self.tau * self.stabilization_value(v)
    }

    /// Value at `x = (v, t)` (slack last).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.value(x[self.ndof], &x[..self.ndof])
    }

    /// Gradient at `x = (v, t)`; with `hess`, also adds the Hessian.
    pub fn derivatives(&self, x: &[f64], mut hess: Option<&mut SymMatrix>) -> Vec<f64> {
        let nd = self.ndof;
        let mut grad = vec![0.0; nd + 1];
        let v = &x[..nd];
        for s in &self.misfit {
            s.accumulate(v, 1.0, &mut grad, hess.as_deref_mut());
        }
        for s in &self.stabilization {
            s.accumulate(v, self.tau, &mut grad, hess.as_deref_mut());
        }
        let t = x[nd];
        let p = self.power;
        grad[nd] += self.sigma * p * t.abs().powf(p - 1.0) * t.signum();
        if let Some(h) = hess {
            h.add(nd, nd, self.sigma * p * (p - 1.0) * t.abs().powf(p - 2.0));
        }
        grad
    }

    /// Every set of dofs that appears together in one term.
    pub fn couplings(&self) -> impl Iterator<Item = &[usize]> {
        self.misfit
            .iter()
            .chain(&self.stabilization)
            .map(|s| s.dofs.as_slice())
    }
}

/// Parts of the nonconforming residual of a discrete function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualParts {
    pub boundary: f64,
    pub misfit: f64,
    pub stabilization: f64,
    pub total: f64,
}

/// Sup of `|g − v|` over lattice samples of order `k + 3` on every boundary face.
pub fn boundary_sup(space: &Space, v: &[f64], g: &Field) -> f64 {
    let m = space.degree() + 3;
    let mut out = 0.0f64;
    for (fi, face) in space.mesh().faces().iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        let c = face.cells.0;
        let pts = space.face_samples(fi, m);
        let e = space.eval_phys(c, &pts);
        let coef = space.local(v, c);
        for (q, x) in pts.iter().enumerate() {
            out = out.max((g.value(x) - e.field(q, &coef).0).abs());
        }
    }
    out
}

/// Cellwise `∫_T |f − F_pw[v]|ⁿ` with the nonlinear operator at quadrature points.
pub fn misfit_per_cell(space: &Space, v: &[f64], op: &Operator, f: &Field) -> Vec<f64> {
    let p = space.dim() as i32;
    (0..space.mesh().num_cells())
        .map(|c| {
            let e = space.eval_volume(c);
            let coef = space.local(v, c);
            (0..e.npts())
                .map(|q| {
                    let (val, g, h) = e.field(q, &coef);
                    let r = f.value(&e.x[q]) - op.evaluate(&e.x[q], val, &g, &h);
                    e.w[q] * r.abs().powi(p)
                })
                .sum()
        })
        .collect()
}

/// `‖g − v‖_∞(∂Ω) + ‖f − F_pw[v]‖_{Lⁿ} + s(v)^{1/n}`.
pub fn evaluate_residual_nc(
    space: &Space,
    v: &[f64],
    op: &Operator,
    f: &Field,
    g: &Field,
) -> ResidualParts {
    let n = space.dim() as f64;
    let boundary = boundary_sup(space, v, g);
    let misfit = misfit_per_cell(space, v, op, f)
        .iter()
        .sum::<f64>()
        .powf(1.0 / n);
    let stabilization = match space.kind() {
        SpaceKind::DgSimplex => stabilization_value(space, v, n)
            .expect("dg space")
            .powf(1.0 / n),
        SpaceKind::BfsRectangle => 0.0,
    };
    ResidualParts {
        boundary,
        misfit,
        stabilization,
        total: boundary + misfit + stabilization,
    }
}
