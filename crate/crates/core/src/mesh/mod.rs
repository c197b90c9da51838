//! Simplicial (2D/3D) and rectangular (2D) meshes.
//!
//! Simplices are refined by tagged bisection (newest-vertex bisection in 2D,
//! its Maubach/Stevenson generalization in 3D); rectangles only support
//! uniform quadsection.

mod refine;
mod vtk;

pub use vtk::write_vtk;

use crate::linalg::dense::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("adaptive refinement requires a simplicial mesh")]
    NotSimplicial,
    #[error("cell id {0} out of range")]
    BadCell(usize),
    #[error("degenerate cell {0} (zero measure)")]
    Degenerate(usize),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Simplex,
    Rectangle,
}

/// A codimension-one face (edge in 2D, triangle in 3D).
#[derive(Debug, Clone)]
pub struct Face {
    /// Vertex ids, sorted; `n` entries are used.
    pub vertices: [usize; 3],
    /// Adjacent cells; the first is the lower cell id, the second is `None` on the boundary.
    pub cells: (usize, Option<usize>),
    /// Local face index inside each adjacent cell.
    pub local: (usize, usize),
    /// Diameter h_F.
    pub diameter: f64,
    /// (n−1)-dimensional measure.
    pub measure: f64,
    /// Unit normal pointing out of `cells.0`.
    pub normal: Vec3,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }
}

/// Refinement bookkeeping for one simplex: vertex order used by the
/// bisection rule and the tag selecting the refinement edge `order[0]–order[tag]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bisection {
    pub order: [usize; 4],
    pub tag: u8,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    kind: CellKind,
    vertices: Vec<Vec3>,
    /// Simplices: positively oriented vertex tuples. Rectangles: counterclockwise corners starting bottom-left.
    cells: Vec<[usize; 4]>,
    bisection: Vec<Bisection>,
    /// Index of the cell in the previous mesh this cell descends from.
    parent: Vec<Option<usize>>,
    faces: Vec<Face>,
    cell_faces: Vec<[usize; 4]>,
}

impl Mesh {
    /// Triangle mesh; the longest edge of each triangle becomes its first
    /// refinement edge (ties: lexicographically lowest vertex pair).
    pub fn from_triangles(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let vertices: Vec<Vec3> = vertices.into_iter().map(|p| [p[0], p[1], 0.0]).collect();
        let mut bis = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let mut best: Option<(f64, usize, usize, usize)> = None;
            for (a, b, c) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
                let (p, q) = if t[a] < t[b] {
                    (t[a], t[b])
                } else {
                    (t[b], t[a])
                };
                let len = dist(&vertices[p], &vertices[q]);
                let better = match best {
                    None => true,
                    Some((bl, bp, bq, _)) => {
                        len > bl * (1.0 + 1e-12)
                            || ((len - bl).abs() <= 1e-12 * bl && (p, q) < (bp, bq))
                    }
                };
                if better {
                    best = Some((len, p, q, t[c]));
                }
            }
            let (_, p, q, r) = best.expect("triangle has edges");
            bis.push(Bisection {
                order: [p, r, q, usize::MAX],
                tag: 2,
            });
        }
        Self::from_bisection(2, vertices, bis)
    }

    /// Simplicial mesh with explicit bisection ordering and tags (`tags[c]` in 1..=dim).
    pub(crate) fn from_bisection(
        dim: usize,
        vertices: Vec<Vec3>,
        bisection: Vec<Bisection>,
    ) -> Result<Self, MeshError> {
        let parent = vec![None; bisection.len()];
        let mut m = Self {
            dim,
            kind: CellKind::Simplex,
            vertices,
            cells: Vec::new(),
            bisection,
            parent,
            faces: Vec::new(),
            cell_faces: Vec::new(),
        };
        m.orient_cells()?;
        m.build_faces();
        Ok(m)
    }

    /// Tetrahedral mesh of `[0,1]^3` with `n^3` Kuhn cubes of 6 tetrahedra
    /// each, all sharing the main diagonal direction (a compatible initial
    /// tagging for 3D bisection).
    pub fn kuhn_cube(n: usize) -> Self {
        let np = n + 1;
        let id = |i: usize, j: usize, k: usize| (k * np + j) * np + i;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(np * np * np);
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut bis = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for p in &perms {
                        let mut c = [i, j, k];
                        let mut order = [id(c[0], c[1], c[2]), 0, 0, 0];
                        for (s, &ax) in p.iter().enumerate() {
                            c[ax] += 1;
                            order[s + 1] = id(c[0], c[1], c[2]);
                        }
                        bis.push(Bisection { order, tag: 3 });
                    }
                }
            }
        }
        Self::from_bisection(3, vertices, bis).expect("Kuhn cubes are valid")
    }

    /// A single tetrahedron (useful for tests).
    pub fn single_tetrahedron(vertices: [[f64; 3]; 4]) -> Result<Self, MeshError> {
        Self::from_bisection(
            3,
            vertices.to_vec(),
            vec![Bisection {
                order: [0, 1, 2, 3],
                tag: 3,
            }],
        )
    }

    /// Uniform `nx × ny` grid of axis-aligned rectangles on `[x0,x1] × [y0,y1]`.
    pub fn rect_grid(nx: usize, ny: usize, xr: [f64; 2], yr: [f64; 2]) -> Self {
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = xr[0] + (xr[1] - xr[0]) * i as f64 / nx as f64;
                let y = yr[0] + (yr[1] - yr[0]) * j as f64 / ny as f64;
                vertices.push([x, y, 0.0]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::from_rectangles(vertices, cells)
    }

    pub(crate) fn from_rectangles(vertices: Vec<Vec3>, cells: Vec<[usize; 4]>) -> Self {
        let n = cells.len();
        let mut m = Self {
            dim: 2,
            kind: CellKind::Rectangle,
            vertices,
            cells,
            bisection: Vec::new(),
            parent: vec![None; n],
            faces: Vec::new(),
            cell_faces: Vec::new(),
        };
        m.build_faces();
        m
    }

    fn orient_cells(&mut self) -> Result<(), MeshError> {
        let n = self.dim;
        self.cells = Vec::with_capacity(self.bisection.len());
        for (c, b) in self.bisection.iter().enumerate() {
            let mut v = [usize::MAX; 4];
            v[..=n].copy_from_slice(&b.order[..=n]);
            let det = self.signed_det(&v);
            if det.abs() <= 1e-300 {
                return Err(MeshError::Degenerate(c));
            }
            if det < 0.0 {
                v.swap(n - 1, n);
            }
            self.cells.push(v);
        }
        Ok(())
    }

    fn signed_det(&self, v: &[usize; 4]) -> f64 {
        let x0 = self.vertices[v[0]];
        let e = |k: usize, d: usize| self.vertices[v[k]][d] - x0[d];
        match self.dim {
            2 => e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0),
            _ => {
                e(1, 0) * (e(2, 1) * e(3, 2) - e(2, 2) * e(3, 1))
                    - e(1, 1) * (e(2, 0) * e(3, 2) - e(2, 2) * e(3, 0))
                    + e(1, 2) * (e(2, 0) * e(3, 1) - e(2, 1) * e(3, 0))
            }
        }
    }

    /// Local vertex indices of local face `f` (opposite vertex `f` for simplices).
    pub fn local_face_vertices(&self, f: usize) -> Vec<usize> {
        match self.kind {
            CellKind::Simplex => (0..=self.dim).filter(|&i| i != f).collect(),
            CellKind::Rectangle => vec![f, (f + 1) % 4],
        }
    }

    pub fn faces_per_cell(&self) -> usize {
        match self.kind {
            CellKind::Simplex => self.dim + 1,
            CellKind::Rectangle => 4,
        }
    }

    fn build_faces(&mut self) {
        let nf = self.faces_per_cell();
        let nv = self.dim; // vertices per face
        let mut entries: Vec<([usize; 3], usize, usize)> =
            Vec::with_capacity(self.cells.len() * nf);
        for (c, cell) in self.cells.iter().enumerate() {
            for f in 0..nf {
                let mut key = [usize::MAX; 3];
                for (k, &l) in self.local_face_vertices(f).iter().enumerate() {
                    key[k] = cell[l];
                }
                key[..nv].sort_unstable();
                entries.push((key, c, f));
            }
        }
        entries.sort_unstable();
        let mut faces = Vec::new();
        let mut cell_faces = vec![[usize::MAX; 4]; self.cells.len()];
        let mut i = 0;
        while i < entries.len() {
            let (key, c0, f0) = entries[i];
            let other = if i + 1 < entries.len() && entries[i + 1].0 == key {
                Some(entries[i + 1])
            } else {
                None
            };
            let fid = faces.len();
            cell_faces[c0][f0] = fid;
            let (cells, local) = match other {
                Some((_, c1, f1)) => {
                    cell_faces[c1][f1] = fid;
                    i += 2;
                    ((c0, Some(c1)), (f0, f1))
                }
                None => {
                    i += 1;
                    ((c0, None), (f0, usize::MAX))
                }
            };
            let pts: Vec<Vec3> = key[..nv].iter().map(|&v| self.vertices[v]).collect();
            let mut diameter = 0.0f64;
            for a in 0..nv {
                for b in a + 1..nv {
                    diameter = diameter.max(dist(&pts[a], &pts[b]));
                }
            }
            let (measure, mut normal) = if self.dim == 2 {
                let t = sub(&pts[1], &pts[0]);
                let l = (t[0] * t[0] + t[1] * t[1]).sqrt();
                (l, [t[1] / l, -t[0] / l, 0.0])
            } else {
                let cr = cross(&sub(&pts[1], &pts[0]), &sub(&pts[2], &pts[0]));
                let l = norm3(&cr);
                (0.5 * l, [cr[0] / l, cr[1] / l, cr[2] / l])
            };
            // orient outward from cells.0: normal must point away from its centroid
            let cc = self.centroid(cells.0);
            let d = sub(&pts[0], &cc);
            if d[0] * normal[0] + d[1] * normal[1] + d[2] * normal[2] < 0.0 {
                normal = [-normal[0], -normal[1], -normal[2]];
            }
            faces.push(Face {
                vertices: key,
                cells,
                local,
                diameter,
                measure,
                normal,
            });
        }
        self.faces = faces;
        self.cell_faces = cell_faces;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Vec3 {
        self.vertices[v]
    }

    /// Number of vertices per cell.
    pub fn cell_size(&self) -> usize {
        match self.kind {
            CellKind::Simplex => self.dim + 1,
            CellKind::Rectangle => 4,
        }
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..self.cell_size()]
    }

    pub fn cell_vertices(&self, c: usize) -> Vec<Vec3> {
        self.cell(c).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face ids of cell `c`, indexed by local face.
    pub fn cell_faces(&self, c: usize) -> &[usize] {
        &self.cell_faces[c][..self.faces_per_cell()]
    }

    /// Parent cell id (in the mesh this one was refined from).
    pub fn parent(&self, c: usize) -> Option<usize> {
        self.parent[c]
    }

    /// Refinement edge of a simplex as a vertex pair.
    pub fn refinement_edge(&self, c: usize) -> Option<(usize, usize)> {
        self.bisection
            .get(c)
            .map(|b| (b.order[0], b.order[b.tag as usize]))
    }

    pub fn centroid(&self, c: usize) -> Vec3 {
        let vs = self.cell(c);
        let mut x = [0.0; 3];
        for &v in vs {
            for d in 0..3 {
                x[d] += self.vertices[v][d];
            }
        }
        x.map(|s| s / vs.len() as f64)
    }

    pub fn volume(&self, c: usize) -> f64 {
        match self.kind {
            CellKind::Simplex => {
                let f = if self.dim == 2 { 2.0 } else { 6.0 };
                self.signed_det(&self.cells[c]).abs() / f
            }
            CellKind::Rectangle => {
                let (lo, hi) = self.rect_bounds(c);
                (hi[0] - lo[0]) * (hi[1] - lo[1])
            }
        }
    }

    /// Bounding corners of a rectangle cell.
    pub fn rect_bounds(&self, c: usize) -> ([f64; 2], [f64; 2]) {
        let v = &self.cells[c];
        let a = self.vertices[v[0]];
        let b = self.vertices[v[2]];
        ([a[0], a[1]], [b[0], b[1]])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.volume(c)).sum()
    }

    /// Cell diameter (longest vertex distance).
    pub fn diameter(&self, c: usize) -> f64 {
        let pts = self.cell_vertices(c);
        let mut d = 0.0f64;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                d = d.max(dist(&pts[a], &pts[b]));
            }
        }
        d
    }

    /// Shape measure diameter / inradius.
    pub fn shape_ratio(&self, c: usize) -> f64 {
        match self.kind {
            CellKind::Simplex => {
                let surface: f64 = self
                    .cell_faces(c)
                    .iter()
                    .map(|&f| self.faces[f].measure)
                    .sum();
                let inradius = self.dim as f64 * self.volume(c) / surface;
                self.diameter(c) / inradius
            }
            CellKind::Rectangle => {
                let (lo, hi) = self.rect_bounds(c);
                let r = 0.5 * (hi[0] - lo[0]).min(hi[1] - lo[1]);
                self.diameter(c) / r
            }
        }
    }

    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.num_cells())
            .map(|c| self.shape_ratio(c))
            .fold(0.0, f64::max)
    }

    /// Marks every vertex lying on a boundary face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut b = vec![false; self.num_vertices()];
        for f in self.faces.iter().filter(|f| f.is_boundary()) {
            for &v in &f.vertices[..self.dim] {
                b[v] = true;
            }
        }
        b
    }

    /// Checks the structural invariants: conformity (every face has at most
    /// two cells and no vertex lies inside another cell's face), positive
    /// measures, and consistent orientation.
    pub fn validate(&self) -> Result<(), MeshError> {
        for c in 0..self.num_cells() {
            if self.kind == CellKind::Simplex && self.signed_det(&self.cells[c]) <= 0.0 {
                return Err(MeshError::Invalid(format!(
                    "cell {c} has non-positive orientation"
                )));
            }
            if self.volume(c) <= 0.0 {
                return Err(MeshError::Degenerate(c));
            }
        }
        // every interior face must be shared by exactly two cells
        let mut count = std::collections::HashMap::new();
        for c in 0..self.num_cells() {
            for f in 0..self.faces_per_cell() {
                let mut key: Vec<usize> = self
                    .local_face_vertices(f)
                    .iter()
                    .map(|&l| self.cells[c][l])
                    .collect();
                key.sort_unstable();
                *count.entry(key).or_insert(0usize) += 1;
            }
        }
        if let Some((k, n)) = count.iter().find(|(_, &n)| n > 2) {
            return Err(MeshError::Invalid(format!(
                "face {k:?} shared by {n} cells"
            )));
        }
        // refinement only ever creates vertices at edge midpoints, so a
        // hanging vertex shows up as a vertex sitting at a cell edge midpoint
        let key = |x: &Vec3| x.map(|t| (t * 2f64.powi(40)).round() as i64);
        let verts: std::collections::HashSet<[i64; 3]> = self.vertices.iter().map(key).collect();
        let cs = self.cell_size();
        for c in 0..self.num_cells() {
            let v = &self.cells[c];
            for a in 0..cs {
                for b in a + 1..cs {
                    if self.kind == CellKind::Rectangle && (a + 2 == b) {
                        continue; // diagonal of a rectangle
                    }
                    let (p, q) = (self.vertices[v[a]], self.vertices[v[b]]);
                    let mid = [
                        0.5 * (p[0] + q[0]),
                        0.5 * (p[1] + q[1]),
                        0.5 * (p[2] + q[2]),
                    ];
                    if verts.contains(&key(&mid)) {
                        return Err(MeshError::Invalid(format!(
                            "hanging vertex on edge ({}, {}) of cell {c}",
                            v[a], v[b]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Finds a cell containing `x` (linear scan; tests and diagnostics only).
    pub fn locate(&self, x: &Vec3) -> Option<usize> {
        (0..self.num_cells()).find(|&c| self.contains(c, x, 1e-12))
    }

    /// Whether cell `c` contains `x` up to a relative tolerance.
    pub fn contains(&self, c: usize, x: &Vec3, tol: f64) -> bool {
        match self.kind {
            CellKind::Rectangle => {
                let (lo, hi) = self.rect_bounds(c);
                x[0] >= lo[0] - tol
                    && x[0] <= hi[0] + tol
                    && x[1] >= lo[1] - tol
                    && x[1] <= hi[1] + tol
            }
            CellKind::Simplex => self
                .barycentric(c, x)
                .iter()
                .take(self.dim + 1)
                .all(|&l| l >= -tol),
        }
    }

    /// Barycentric coordinates of `x` with respect to simplex `c`.
    pub fn barycentric(&self, c: usize, x: &Vec3) -> [f64; 4] {
        let n = self.dim;
        let v = &self.cells[c];
        let x0 = self.vertices[v[0]];
        let mut j = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            for d in 0..n {
                j[(d, k)] = self.vertices[v[k + 1]][d] - x0[d];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(n, (0..n).map(|d| x[d] - x0[d]));
        let lam = j
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| nalgebra::DVector::zeros(n));
        let mut out = [0.0; 4];
        let mut s = 0.0;
        for k in 0..n {
            out[k + 1] = lam[k];
            s += lam[k];
        }
        out[0] = 1.0 - s;
        out
    }
}

pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Preset initial meshes.
pub mod presets {
    use super::Mesh;

    /// Unit square split into two triangles along the diagonal (0,0)–(1,1).
    pub fn unit_square_triangles() -> Mesh {
        Mesh::from_triangles(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .expect("valid preset")
    }

    /// Unit square as a single rectangle.
    pub fn unit_square_rectangle() -> Mesh {
        Mesh::rect_grid(1, 1, [0.0, 1.0], [0.0, 1.0])
    }

    /// L-shaped domain (−1,1)² ∖ [0,1]×[−1,0] with six triangles whose
    /// diagonals all pass through the re-entrant corner.
    pub fn l_shape() -> Mesh {
        Mesh::from_triangles(
            vec![
                [-1.0, -1.0],
                [0.0, -1.0],
                [-1.0, 0.0],
                [0.0, 0.0],
                [1.0, 0.0],
                [-1.0, 1.0],
                [0.0, 1.0],
                [1.0, 1.0],
            ],
            vec![
                [0, 1, 3],
                [0, 3, 2],
                [2, 3, 5],
                [3, 6, 5],
                [3, 4, 7],
                [3, 7, 6],
            ],
        )
        .expect("valid preset")
    }

    /// Unit cube as six Kuhn tetrahedra.
    pub fn unit_cube() -> Mesh {
        Mesh::kuhn_cube(1)
    }
}
