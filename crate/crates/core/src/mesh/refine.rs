//! Tagged bisection with conforming closure, and rectangle quadsection.

use std::collections::HashMap;

use super::{Bisection, CellKind, Mesh, MeshError};
use crate::linalg::dense::Vec3;

struct Work {
    dim: usize,
    vertices: Vec<Vec3>,
    cells: Vec<(Bisection, usize, bool)>, // (bisection data, root parent, active)
    midpoints: HashMap<(usize, usize), usize>,
}

impl Work {
    fn midpoint(&mut self, a: usize, b: usize) -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let (p, q) = (self.vertices[a], self.vertices[b]);
        let id = self.vertices.len();
        self.vertices.push([
            0.5 * (p[0] + q[0]),
            0.5 * (p[1] + q[1]),
            0.5 * (p[2] + q[2]),
        ]);
        self.midpoints.insert(key, id);
        id
    }

    /// Bisects cell `i`: x0..xn with tag d splits edge x0–x_d at z into
    /// (x0,…,x_{d−1},z,x_{d+1},…,xn) and (x1,…,x_d,z,x_{d+1},…,xn),
    /// both with tag d−1 (wrapping to n).
    fn bisect(&mut self, i: usize) {
        let (b, root, active) = self.cells[i];
        debug_assert!(active);
        self.cells[i].2 = false;
        let n = self.dim;
        let d = b.tag as usize;
        let x = b.order;
        let z = self.midpoint(x[0], x[d]);
        let tag = if d > 1 { d as u8 - 1 } else { n as u8 };
        let mut c1 = x;
        c1[d] = z;
        let mut c2 = [usize::MAX; 4];
        c2[..d].copy_from_slice(&x[1..=d]);
        c2[d] = z;
        c2[d + 1..=n].copy_from_slice(&x[d + 1..=n]);
        self.cells.push((Bisection { order: c1, tag }, root, true));
        self.cells.push((Bisection { order: c2, tag }, root, true));
    }

    fn has_split_edge(&self, i: usize) -> bool {
        let o = &self.cells[i].0.order;
        for a in 0..=self.dim {
            for b in a + 1..=self.dim {
                let key = if o[a] < o[b] {
                    (o[a], o[b])
                } else {
                    (o[b], o[a])
                };
                if self.midpoints.contains_key(&key) {
                    return true;
                }
            }
        }
        false
    }
}

impl Mesh {
    /// Bisects every marked cell once and closes the mesh by further
    /// bisections until no hanging vertex remains. Cells of the result
    /// record their ancestor in `self` via [`Mesh::parent`].
    pub fn refine_marked(&self, marked: &[usize]) -> Result<Mesh, MeshError> {
        if self.kind != CellKind::Simplex {
            return Err(MeshError::NotSimplicial);
        }
        if let Some(&bad) = marked.iter().find(|&&c| c >= self.num_cells()) {
            return Err(MeshError::BadCell(bad));
        }
        let mut w = Work {
            dim: self.dim,
            vertices: self.vertices.clone(),
            cells: self
                .bisection
                .iter()
                .enumerate()
                .map(|(c, b)| (*b, c, true))
                .collect(),
            midpoints: HashMap::new(),
        };
        let mut is_marked = vec![false; self.num_cells()];
        for &c in marked {
            is_marked[c] = true;
        }
        for (c, &m) in is_marked.iter().enumerate() {
            if m {
                w.bisect(c);
            }
        }
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < w.cells.len() {
                if w.cells[i].2 && w.has_split_edge(i) {
                    w.bisect(i);
                    changed = true;
                }
                i += 1;
            }
            if !changed {
                break;
            }
        }
        let mut bis = Vec::new();
        let mut parent = Vec::new();
        for (b, root, active) in w.cells {
            if active {
                bis.push(b);
                parent.push(Some(root));
            }
        }
        let mut m = Mesh::from_bisection(self.dim, w.vertices, bis)?;
        m.parent = parent;
        Ok(m)
    }

    /// One bisection of every cell (a single bisection generation).
    pub fn bisect_all(&self) -> Result<Mesh, MeshError> {
        let all: Vec<usize> = (0..self.num_cells()).collect();
        self.refine_marked(&all)
    }

    /// One uniform refinement: `dim` bisection generations for simplices
    /// (4 children per triangle, 8 per tetrahedron), quadsection for rectangles.
    pub fn refine_uniform(&self) -> Mesh {
        match self.kind {
            CellKind::Rectangle => self.quadsect(),
            CellKind::Simplex => {
                let mut m = self.clone();
                let mut root: Vec<usize> = (0..self.num_cells()).collect();
                for _ in 0..self.dim {
                    let next = m.bisect_all().expect("valid simplicial mesh");
                    root = (0..next.num_cells())
                        .map(|c| root[next.parent(c).expect("refined cell")])
                        .collect();
                    m = next;
                }
                m.parent = root.into_iter().map(Some).collect();
                m
            }
        }
    }

    fn quadsect(&self) -> Mesh {
        let mut w = Work {
            dim: 2,
            vertices: self.vertices.clone(),
            cells: Vec::new(),
            midpoints: HashMap::new(),
        };
        let mut cells = Vec::with_capacity(4 * self.num_cells());
        let mut parent = Vec::with_capacity(4 * self.num_cells());
        for (c, q) in self.cells.iter().enumerate() {
            let [a, b, cc, d] = *q;
            let mab = w.midpoint(a, b);
            let mbc = w.midpoint(b, cc);
            let mcd = w.midpoint(cc, d);
            let mda = w.midpoint(d, a);
            let e = w.midpoint(a, cc);
            cells.push([a, mab, e, mda]);
            cells.push([mab, b, mbc, e]);
            cells.push([e, mbc, cc, mcd]);
            cells.push([mda, e, mcd, d]);
            parent.extend([Some(c); 4]);
        }
        let mut m = Mesh::from_rectangles(w.vertices, cells);
        m.parent = parent;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::super::presets::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_counts() {
        let m = unit_square_triangles().refine_uniform();
        assert_eq!((m.num_cells(), m.num_vertices()), (8, 9));
        assert_eq!(m.faces().len(), 16);
        assert_eq!(m.faces().iter().filter(|f| !f.is_boundary()).count(), 8);
        assert_eq!(m.refine_uniform().num_cells(), 32);
        let r = unit_square_rectangle().refine_uniform();
        assert_eq!((r.num_cells(), r.num_vertices()), (4, 9));
        let c = unit_cube().refine_uniform();
        assert_eq!(c.num_cells(), 48);
        c.validate().unwrap();
        assert!((c.total_volume() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn marking_one_triangle_closes_neighbour() {
        let m = unit_square_triangles();
        let r = m.refine_marked(&[0]).unwrap();
        assert_eq!(r.num_cells(), 4);
        r.validate().unwrap();
        assert!(m.refine_marked(&[]).unwrap().num_cells() == 2);
    }

    #[test]
    fn mark_all_equals_bisection_generation() {
        let m = l_shape();
        let all: Vec<usize> = (0..m.num_cells()).collect();
        let once = m.refine_marked(&all).unwrap();
        let all2: Vec<usize> = (0..once.num_cells()).collect();
        let a = once.refine_marked(&all2).unwrap();
        let b = m.refine_uniform();
        let key = |m: &Mesh| {
            let mut v: Vec<Vec<[i64; 3]>> = (0..m.num_cells())
                .map(|c| {
                    let mut p: Vec<[i64; 3]> = m
                        .cell_vertices(c)
                        .iter()
                        .map(|x| x.map(|t| (t * 1e9).round() as i64))
                        .collect();
                    p.sort();
                    p
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&a), key(&b));
        assert_eq!(once.num_cells(), 2 * m.num_cells());
    }

    #[test]
    fn rejects_rectangles() {
        assert!(matches!(
            unit_square_rectangle().refine_marked(&[0]),
            Err(MeshError::NotSimplicial)
        ));
    }

    #[test]
    fn parents_cover_marked() {
        let m = l_shape().refine_uniform();
        let r = m.refine_marked(&[3, 7]).unwrap();
        for c in [3, 7] {
            let kids = (0..r.num_cells())
                .filter(|&k| r.parent(k) == Some(c))
                .count();
            assert!(kids >= 2);
        }
    }

    fn random_rounds(mut m: Mesh, rounds: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = m.max_shape_ratio();
        let vol = m.total_volume();
        for _ in 0..rounds {
            let k = 1 + m.num_cells() / 10;
            let marked: Vec<usize> = (0..k).map(|_| rng.random_range(0..m.num_cells())).collect();
            m = m.refine_marked(&marked).unwrap();
            m.validate().unwrap();
            assert!((m.total_volume() - vol).abs() < 1e-12 * vol);
        }
        (initial, m.max_shape_ratio())
    }

    #[test]
    fn random_refinement_keeps_shape_and_conformity_2d() {
        for seed in 0..3 {
            let (init, fin) = random_rounds(l_shape(), 20, seed);
            assert!(fin <= 2.0 * init, "{fin} > 2 * {init}");
        }
    }

    #[test]
    fn random_refinement_keeps_shape_and_conformity_3d() {
        let (init, fin) = random_rounds(unit_cube(), 8, 11);
        assert!(fin <= 2.0 * init, "{fin} > 2 * {init}");
    }
}
