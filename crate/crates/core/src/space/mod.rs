//! Discrete spaces: discontinuous P_k on simplices and the C¹ bicubic
//! Bogner–Fox–Schmit space on rectangles.

pub mod bfs;
pub mod lagrange;

use std::collections::HashMap;
use std::sync::Arc;

use crate::function::Field;
use crate::linalg::dense::{inverse, Mat3, Vec3, ZERO};
use crate::mesh::{CellKind, Mesh};
use crate::quadrature::{lattice_points, quadrature_rule, QuadratureRule, RefShape};

use lagrange::{LagrangeBasis, PointEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    DgSimplex,
    BfsRectangle,
}

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("{kind:?} space needs a {needed:?} mesh")]
    WrongMesh { kind: SpaceKind, needed: CellKind },
    #[error("polynomial degree {0} not supported (need 1..=6)")]
    BadDegree(usize),
    #[error("reference point {0:?} is outside the reference cell")]
    OutsideCell(Vec3),
}

/// Basis data of one cell at a set of points, in the physical frame.
/// Entry `[p * nloc + i]` belongs to point `p` and local basis function `i`.
#[derive(Debug, Clone)]
pub struct Eval {
    pub nloc: usize,
    pub x: Vec<Vec3>,
    /// Physical quadrature weights (empty for plain point evaluation).
    pub w: Vec<f64>,
    pub val: Vec<f64>,
    pub grad: Vec<Vec3>,
    pub hess: Vec<Mat3>,
}

impl Eval {
    pub fn npts(&self) -> usize {
        self.x.len()
    }

    /// Value, gradient and Hessian of the local expansion `coef` at point `p`.
    pub fn field(&self, p: usize, coef: &[f64]) -> (f64, Vec3, Mat3) {
        let mut v = 0.0;
        let mut g = [0.0; 3];
        let mut h = ZERO;
        let base = p * self.nloc;
        for (i, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            v += c * self.val[base + i];
            let gi = &self.grad[base + i];
            let hi = &self.hess[base + i];
            for a in 0..3 {
                g[a] += c * gi[a];
                for b in 0..3 {
                    h[a][b] += c * hi[a][b];
                }
            }
        }
        (v, g, h)
    }
}

/// One boundary constraint entry: a boundary point and the trace functional
/// of one adjacent cell at that point.
#[derive(Debug, Clone)]
pub struct BoundaryNode {
    pub point: Vec3,
    pub cell: usize,
    /// Sparse row over global dofs: v(point) restricted to `cell`.
    pub row: Vec<(usize, f64)>,
    /// Index of the geometric node this entry belongs to.
    pub node: usize,
}

#[derive(Debug, Clone)]
pub struct BoundaryNodeSet {
    pub entries: Vec<BoundaryNode>,
    pub num_geometric: usize,
}

/// Reference-frame basis table at the points of a fixed rule.
#[derive(Debug, Clone)]
struct RefTable {
    evals: Vec<PointEval>,
}

#[derive(Debug, Clone)]
pub struct Space {
    kind: SpaceKind,
    degree: usize,
    mesh: Arc<Mesh>,
    nloc: usize,
    ndof: usize,
    lagrange: Option<LagrangeBasis>,
    vol_rule: QuadratureRule,
    vol_table: Option<RefTable>,
    face_rule: QuadratureRule,
    /// Affine map per simplex: (x0, J, J^{-1}, |det J|).
    maps: Vec<(Vec3, Mat3, Mat3, f64)>,
    /// Inverse reference mass matrix (DG), row-major.
    mass_inv: Vec<f64>,
}

impl Space {
    /// Discontinuous P_k on a simplicial mesh.
    pub fn dg(mesh: Arc<Mesh>, degree: usize) -> Result<Self, SpaceError> {
        if mesh.kind() != CellKind::Simplex {
            return Err(SpaceError::WrongMesh {
                kind: SpaceKind::DgSimplex,
                needed: CellKind::Simplex,
            });
        }
        if !(1..=6).contains(&degree) {
            return Err(SpaceError::BadDegree(degree));
        }
        let n = mesh.dim();
        let basis = LagrangeBasis::new(n, degree);
        let nloc = basis.len();
        let shape = RefShape::simplex(n);
        let vol_rule = quadrature_rule(shape, 2 * degree + 2);
        let face_rule = quadrature_rule(RefShape::simplex(n - 1), 2 * degree + 2);
        let evals: Vec<PointEval> = vol_rule.points.iter().map(|p| basis.eval(p)).collect();
        let mut mass = nalgebra::DMatrix::<f64>::zeros(nloc, nloc);
        for (q, e) in evals.iter().enumerate() {
            for i in 0..nloc {
                for j in 0..nloc {
                    mass[(i, j)] += vol_rule.weights[q] * e.val[i] * e.val[j];
                }
            }
        }
        let minv = mass.try_inverse().expect("mass matrix is invertible");
        let mass_inv = (0..nloc * nloc)
            .map(|k| minv[(k / nloc, k % nloc)])
            .collect();
        let maps = (0..mesh.num_cells())
            .map(|c| {
                let pts = mesh.cell_vertices(c);
                let mut j = ZERO;
                for k in 0..n {
                    for d in 0..n {
                        j[d][k] = pts[k + 1][d] - pts[0][d];
                    }
                }
                let det = crate::linalg::dense::determinant(n, &j);
                (pts[0], j, inverse(n, &j), det.abs())
            })
            .collect();
        let ndof = nloc * mesh.num_cells();
        Ok(Self {
            kind: SpaceKind::DgSimplex,
            degree,
            mesh,
            nloc,
            ndof,
            lagrange: Some(basis),
            vol_rule,
            vol_table: Some(RefTable { evals }),
            face_rule,
            maps,
            mass_inv,
        })
    }

    /// Bicubic BFS space on a rectangular mesh.
    pub fn bfs(mesh: Arc<Mesh>) -> Result<Self, SpaceError> {
        if mesh.kind() != CellKind::Rectangle {
            return Err(SpaceError::WrongMesh {
                kind: SpaceKind::BfsRectangle,
                needed: CellKind::Rectangle,
            });
        }
        let degree = 3;
        let ndof = 4 * mesh.num_vertices();
        Ok(Self {
            kind: SpaceKind::BfsRectangle,
            degree,
            mesh,
            nloc: 16,
            ndof,
            lagrange: None,
            vol_rule: quadrature_rule(RefShape::Square, 2 * degree + 2),
            vol_table: None,
            face_rule: quadrature_rule(RefShape::Interval, 2 * degree + 2),
            maps: Vec::new(),
            mass_inv: Vec::new(),
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    /// Number of local basis functions per cell.
    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn is_conforming(&self) -> bool {
        self.kind == SpaceKind::BfsRectangle
    }

    pub fn volume_rule(&self) -> &QuadratureRule {
        &self.vol_rule
    }

    /// Global dofs of cell `c` in local order.
    pub fn cell_dofs(&self, c: usize) -> Vec<usize> {
        match self.kind {
            SpaceKind::DgSimplex => (c * self.nloc..(c + 1) * self.nloc).collect(),
            SpaceKind::BfsRectangle => self
                .mesh
                .cell(c)
                .iter()
                .flat_map(|&v| 4 * v..4 * v + 4)
                .collect(),
        }
    }

    /// Local coefficients of `v` on cell `c`.
    pub fn local(&self, v: &[f64], c: usize) -> Vec<f64> {
        match self.kind {
            SpaceKind::DgSimplex => v[c * self.nloc..(c + 1) * self.nloc].to_vec(),
            SpaceKind::BfsRectangle => self.cell_dofs(c).iter().map(|&d| v[d]).collect(),
        }
    }

    /// Block structure for the linear algebra: (block sizes, a point per block).
    /// DG blocks are cells; BFS blocks are vertices.
    pub fn dof_blocks(&self) -> (Vec<usize>, Vec<Vec3>) {
        match self.kind {
            SpaceKind::DgSimplex => (
                vec![self.nloc; self.mesh.num_cells()],
                (0..self.mesh.num_cells())
                    .map(|c| self.mesh.centroid(c))
                    .collect(),
            ),
            SpaceKind::BfsRectangle => (
                vec![4; self.mesh.num_vertices()],
                self.mesh.vertices().to_vec(),
            ),
        }
    }

    pub fn to_physical(&self, c: usize, xi: &Vec3) -> Vec3 {
        match self.kind {
            SpaceKind::DgSimplex => {
                let (x0, j, _, _) = &self.maps[c];
                let mut x = *x0;
                for d in 0..3 {
                    for k in 0..3 {
                        x[d] += j[d][k] * xi[k];
                    }
                }
                x
            }
            SpaceKind::BfsRectangle => {
                let (lo, hi) = self.mesh.rect_bounds(c);
                [
                    lo[0] + xi[0] * (hi[0] - lo[0]),
                    lo[1] + xi[1] * (hi[1] - lo[1]),
                    0.0,
                ]
            }
        }
    }

    pub fn to_reference(&self, c: usize, x: &Vec3) -> Vec3 {
        match self.kind {
            SpaceKind::DgSimplex => {
                let (x0, _, jinv, _) = &self.maps[c];
                let mut xi = [0.0; 3];
                for k in 0..3 {
                    for d in 0..3 {
                        xi[k] += jinv[k][d] * (x[d] - x0[d]);
                    }
                }
                xi
            }
            SpaceKind::BfsRectangle => {
                let (lo, hi) = self.mesh.rect_bounds(c);
                [
                    (x[0] - lo[0]) / (hi[0] - lo[0]),
                    (x[1] - lo[1]) / (hi[1] - lo[1]),
                    0.0,
                ]
            }
        }
    }

    fn in_reference(&self, xi: &Vec3) -> bool {
        let tol = 1e-10;
        match self.kind {
            SpaceKind::DgSimplex => {
                let n = self.dim();
                xi[..n].iter().all(|&t| t >= -tol) && xi[..n].iter().sum::<f64>() <= 1.0 + tol
            }
            SpaceKind::BfsRectangle => xi[..2].iter().all(|&t| (-tol..=1.0 + tol).contains(&t)),
        }
    }

    fn transform(&self, c: usize, e: &PointEval, out: &mut Eval) {
        let n = self.dim();
        let (_, _, jinv, _) = &self.maps[c];
        for i in 0..self.nloc {
            out.val.push(e.val[i]);
            let g = &e.grad[i];
            let mut gp = [0.0; 3];
            for d in 0..n {
                gp[d] = (0..n).map(|k| jinv[k][d] * g[k]).sum();
            }
            out.grad.push(gp);
            let h = &e.hess[i];
            let mut t = ZERO; // H J^{-1}
            for k in 0..n {
                for e2 in 0..n {
                    t[k][e2] = (0..n).map(|l| h[k][l] * jinv[l][e2]).sum();
                }
            }
            let mut hp = ZERO;
            for d in 0..n {
                for e2 in 0..n {
                    hp[d][e2] = (0..n).map(|k| jinv[k][d] * t[k][e2]).sum();
                }
            }
            out.hess.push(hp);
        }
    }

    fn empty_eval(&self, npts: usize) -> Eval {
        Eval {
            nloc: self.nloc,
            x: Vec::with_capacity(npts),
            w: Vec::new(),
            val: Vec::with_capacity(npts * self.nloc),
            grad: Vec::with_capacity(npts * self.nloc),
            hess: Vec::with_capacity(npts * self.nloc),
        }
    }

    /// Basis evaluation at reference points of cell `c`.
    pub fn eval_ref(&self, c: usize, xis: &[Vec3]) -> Result<Eval, SpaceError> {
        let mut out = self.empty_eval(xis.len());
        for xi in xis {
            if !self.in_reference(xi) {
                return Err(SpaceError::OutsideCell(*xi));
            }
            self.push_point(c, xi, &mut out);
        }
        Ok(out)
    }

    fn push_point(&self, c: usize, xi: &Vec3, out: &mut Eval) {
        out.x.push(self.to_physical(c, xi));
        match self.kind {
            SpaceKind::DgSimplex => {
                let e = self.lagrange.as_ref().expect("dg basis").eval(xi);
                self.transform(c, &e, out);
            }
            SpaceKind::BfsRectangle => {
                let (lo, hi) = self.mesh.rect_bounds(c);
                let e = bfs::eval(xi[0], xi[1], hi[0] - lo[0], hi[1] - lo[1]);
                out.val.extend_from_slice(&e.val);
                out.grad.extend_from_slice(&e.grad);
                out.hess.extend_from_slice(&e.hess);
            }
        }
    }

    /// Basis evaluation at physical points known to lie in cell `c`.
    pub fn eval_phys(&self, c: usize, xs: &[Vec3]) -> Eval {
        let mut out = self.empty_eval(xs.len());
        for x in xs {
            let xi = self.to_reference(c, x);
            self.push_point(c, &xi, &mut out);
        }
        out
    }

    /// Basis evaluation at the volume quadrature points of cell `c`, with
    /// physical weights.
    pub fn eval_volume(&self, c: usize) -> Eval {
        let rule = &self.vol_rule;
        let mut out = self.empty_eval(rule.len());
        match (&self.vol_table, self.kind) {
            (Some(table), SpaceKind::DgSimplex) => {
                let det = self.maps[c].3;
                for (q, p) in rule.points.iter().enumerate() {
                    out.x.push(self.to_physical(c, p));
                    self.transform(c, &table.evals[q], &mut out);
                }
                out.w = rule.weights.iter().map(|w| w * det).collect();
            }
            _ => {
                for p in &rule.points {
                    self.push_point(c, p, &mut out);
                }
                let vol = self.mesh.volume(c);
                out.w = rule.weights.iter().map(|w| w * vol).collect();
            }
        }
        out
    }

    /// Quadrature points and physical weights on face `f` (degree 2k+2).
    pub fn face_quadrature(&self, f: usize) -> (Vec<Vec3>, Vec<f64>) {
        let face = &self.mesh.faces()[f];
        let n = self.dim();
        let pts: Vec<Vec3> = face.vertices[..n]
            .iter()
            .map(|&v| self.mesh.vertex(v))
            .collect();
        let scale = face.measure / RefShape::simplex(n - 1).volume();
        let xs = self
            .face_rule
            .points
            .iter()
            .map(|r| face_map(&pts, r))
            .collect();
        let ws = self.face_rule.weights.iter().map(|w| w * scale).collect();
        (xs, ws)
    }

    /// Lattice sample points of order `m` on face `f` (physical).
    pub fn face_samples(&self, f: usize, m: usize) -> Vec<Vec3> {
        let face = &self.mesh.faces()[f];
        let n = self.dim();
        let pts: Vec<Vec3> = face.vertices[..n]
            .iter()
            .map(|&v| self.mesh.vertex(v))
            .collect();
        lattice_points(RefShape::simplex(n - 1), m)
            .iter()
            .map(|r| face_map(&pts, r))
            .collect()
    }

    /// Lattice sample points of order `m` on the reference cell.
    pub fn cell_samples(&self, m: usize) -> Vec<Vec3> {
        match self.kind {
            SpaceKind::DgSimplex => lattice_points(RefShape::simplex(self.dim()), m),
            SpaceKind::BfsRectangle => lattice_points(RefShape::Square, m),
        }
    }

    /// Interpolation: cellwise L² projection for DG, Hermite interpolation for BFS.
    pub fn interpolate(&self, f: &Field) -> Vec<f64> {
        let mut v = vec![0.0; self.ndof];
        match self.kind {
            SpaceKind::DgSimplex => {
                let table = self.vol_table.as_ref().expect("dg table");
                let nl = self.nloc;
                for c in 0..self.mesh.num_cells() {
                    let mut b = vec![0.0; nl];
                    for (q, p) in self.vol_rule.points.iter().enumerate() {
                        let fx = f.value(&self.to_physical(c, p)) * self.vol_rule.weights[q];
                        for i in 0..nl {
                            b[i] += fx * table.evals[q].val[i];
                        }
                    }
                    for i in 0..nl {
                        v[c * nl + i] = (0..nl).map(|j| self.mass_inv[i * nl + j] * b[j]).sum();
                    }
                }
            }
            SpaceKind::BfsRectangle => {
                for (k, x) in self.mesh.vertices().iter().enumerate() {
                    let fv = bfs::vertex_functionals(f.value(x), &f.gradient(x), &f.hessian(x));
                    v[4 * k..4 * k + 4].copy_from_slice(&fv);
                }
            }
        }
        v
    }

    /// Value of `v` at a physical point of cell `c`.
    pub fn eval_at(&self, v: &[f64], c: usize, x: &Vec3) -> (f64, Vec3, Mat3) {
        let e = self.eval_phys(c, std::slice::from_ref(x));
        e.field(0, &self.local(v, c))
    }

    /// Boundary constraint entries (see [`BoundaryNodeSet`]).
    ///
    /// DG: the degree-k Lagrange nodes on boundary faces; every cell having a
    /// Lagrange node at such a point contributes its own entry, so each
    /// discontinuous trace is constrained separately. BFS: the P3 Lagrange
    /// points of the boundary edges, one entry per geometric point.
    pub fn boundary_nodes(&self) -> BoundaryNodeSet {
        match self.kind {
            SpaceKind::DgSimplex => self.dg_boundary_nodes(),
            SpaceKind::BfsRectangle => self.bfs_boundary_nodes(),
        }
    }

    fn dg_node_key(&self, c: usize, i: usize) -> Vec<(usize, usize)> {
        let basis = self.lagrange.as_ref().expect("dg basis");
        let w = basis.node_weights(i);
        let cell = self.mesh.cell(c);
        let mut key: Vec<(usize, usize)> = cell
            .iter()
            .zip(w.iter())
            .filter(|(_, &wt)| wt > 0)
            .map(|(&v, &wt)| (v, wt))
            .collect();
        key.sort_unstable();
        key
    }

    fn dg_boundary_nodes(&self) -> BoundaryNodeSet {
        let basis = self.lagrange.as_ref().expect("dg basis");
        let mut geometric: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        let mut count = 0;
        for face in self.mesh.faces().iter().filter(|f| f.is_boundary()) {
            let c = face.cells.0;
            let opposite = face.local.0;
            for i in 0..basis.len() {
                if basis.node_weights(i)[opposite] == 0 {
                    let key = self.dg_node_key(c, i);
                    geometric.entry(key).or_insert_with(|| {
                        count += 1;
                        count - 1
                    });
                }
            }
        }
        let mut entries = Vec::new();
        for c in 0..self.mesh.num_cells() {
            for i in 0..basis.len() {
                let key = self.dg_node_key(c, i);
                if let Some(&node) = geometric.get(&key) {
                    entries.push(BoundaryNode {
                        point: self.to_physical(c, &basis.nodes()[i]),
                        cell: c,
                        row: vec![(c * self.nloc + i, 1.0)],
                        node,
                    });
                }
            }
        }
        BoundaryNodeSet {
            entries,
            num_geometric: count,
        }
    }

    fn bfs_boundary_nodes(&self) -> BoundaryNodeSet {
        #[derive(Hash, PartialEq, Eq)]
        enum Key {
            Vertex(usize),
            Edge(usize, usize, usize),
        }
        let mut seen: HashMap<Key, usize> = HashMap::new();
        let mut entries = Vec::new();
        for face in self.mesh.faces().iter().filter(|f| f.is_boundary()) {
            let (a, b) = (face.vertices[0], face.vertices[1]);
            let (pa, pb) = (self.mesh.vertex(a), self.mesh.vertex(b));
            let c = face.cells.0;
            for i in 0..4 {
                let key = match i {
                    0 => Key::Vertex(a),
                    3 => Key::Vertex(b),
                    _ => Key::Edge(a, b, i),
                };
                if seen.contains_key(&key) {
                    continue;
                }
                let node = seen.len();
                seen.insert(key, node);
                let t = i as f64 / 3.0;
                let x = [
                    pa[0] + t * (pb[0] - pa[0]),
                    pa[1] + t * (pb[1] - pa[1]),
                    0.0,
                ];
                let e = self.eval_phys(c, std::slice::from_ref(&x));
                let row = self
                    .cell_dofs(c)
                    .into_iter()
                    .zip(e.val.iter().copied())
                    .filter(|(_, w)| *w != 0.0)
                    .collect();
                entries.push(BoundaryNode {
                    point: x,
                    cell: c,
                    row,
                    node,
                });
            }
        }
        let num_geometric = seen.len();
        BoundaryNodeSet {
            entries,
            num_geometric,
        }
    }
}

fn face_map(pts: &[Vec3], r: &Vec3) -> Vec3 {
    let mut x = pts[0];
    for (k, p) in pts.iter().enumerate().skip(1) {
        for d in 0..3 {
            x[d] += r[k - 1] * (p[d] - pts[0][d]);
        }
    }
    x
}
