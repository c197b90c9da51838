//! Lagrange basis of degree k on the reference simplex.

use nalgebra::DMatrix;

use crate::linalg::dense::{Mat3, Vec3, ZERO};
use crate::quadrature::{lattice_points, RefShape};

/// Nodal basis on equispaced lattice nodes, expanded in monomials.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    dim: usize,
    degree: usize,
    exps: Vec<[i32; 3]>,
    /// `coef[m * nloc + j]`: coefficient of monomial `m` in basis function `j`.
    coef: Vec<f64>,
    nodes: Vec<Vec3>,
    /// Integer lattice coordinates of every node (times the degree).
    node_ints: Vec<[usize; 3]>,
}

/// Values, gradients and Hessians of all basis functions at one point.
#[derive(Debug, Clone, Default)]
pub struct PointEval {
    pub val: Vec<f64>,
    pub grad: Vec<Vec3>,
    pub hess: Vec<Mat3>,
}

impl LagrangeBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!((2..=3).contains(&dim), "simplices of dimension 2 or 3");
        assert!(degree >= 1);
        let shape = RefShape::simplex(dim);
        let nodes = lattice_points(shape, degree);
        let node_ints: Vec<[usize; 3]> = nodes
            .iter()
            .map(|p| p.map(|t| (t * degree as f64).round() as usize))
            .collect();
        let mut exps = Vec::new();
        for total in 0..=degree as i32 {
            match dim {
                2 => {
                    for b in 0..=total {
                        exps.push([total - b, b, 0]);
                    }
                }
                _ => {
                    for c in 0..=total {
                        for b in 0..=total - c {
                            exps.push([total - b - c, b, c]);
                        }
                    }
                }
            }
        }
        let n = nodes.len();
        assert_eq!(n, exps.len());
        let v = DMatrix::from_fn(n, n, |i, m| monomial(&exps[m], &nodes[i]));
        let inv = v
            .try_inverse()
            .expect("Lagrange Vandermonde matrix is invertible");
        // V C = I  =>  C = V^{-1}; C[m][j]
        let mut coef = vec![0.0; n * n];
        for m in 0..n {
            for j in 0..n {
                coef[m * n + j] = inv[(m, j)];
            }
        }
        Self {
            dim,
            degree,
            exps,
            coef,
            nodes,
            node_ints,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    /// Barycentric lattice weights `(k − Σξ·k, ξ_1·k, …)` of node `i`.
    pub fn node_weights(&self, i: usize) -> [usize; 4] {
        let p = self.node_ints[i];
        let s = p[0] + p[1] + p[2];
        [self.degree - s, p[0], p[1], p[2]]
    }

    /// Evaluates all basis functions and their reference derivatives at `xi`.
    pub fn eval(&self, xi: &Vec3) -> PointEval {
        let n = self.len();
        let mut out = PointEval {
            val: vec![0.0; n],
            grad: vec![[0.0; 3]; n],
            hess: vec![ZERO; n],
        };
        for (m, e) in self.exps.iter().enumerate() {
            let (mv, mg, mh) = monomial_derivs(self.dim, e, xi);
            let row = &self.coef[m * n..(m + 1) * n];
            for j in 0..n {
                let c = row[j];
                if c == 0.0 {
                    continue;
                }
                out.val[j] += c * mv;
                for a in 0..self.dim {
                    out.grad[j][a] += c * mg[a];
                    for b in 0..self.dim {
                        out.hess[j][a][b] += c * mh[a][b];
                    }
                }
            }
        }
        out
    }
}

fn monomial(e: &[i32; 3], x: &Vec3) -> f64 {
    x[0].powi(e[0]) * x[1].powi(e[1]) * x[2].powi(e[2])
}

fn pow_d(x: f64, e: i32, d: i32) -> f64 {
    // d-th derivative of x^e
    if d > e {
        return 0.0;
    }
    let mut c = 1.0;
    for k in 0..d {
        c *= (e - k) as f64;
    }
    c * x.powi(e - d)
}

fn monomial_derivs(dim: usize, e: &[i32; 3], x: &Vec3) -> (f64, Vec3, Mat3) {
    let mut g = [0.0; 3];
    let mut h = ZERO;
    let v = monomial(e, x);
    for a in 0..dim {
        let mut d = [0i32; 3];
        d[a] += 1;
        g[a] = (0..3).map(|k| pow_d(x[k], e[k], d[k])).product();
        for b in 0..dim {
            let mut dd = d;
            dd[b] += 1;
            h[a][b] = (0..3).map(|k| pow_d(x[k], e[k], dd[k])).product();
        }
    }
    (v, g, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodal_and_partition_of_unity() {
        for dim in [2, 3] {
            for k in 1..=4 {
                let b = LagrangeBasis::new(dim, k);
                for (i, p) in b.nodes().iter().enumerate() {
                    let e = b.eval(p);
                    for j in 0..b.len() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((e.val[j] - expect).abs() < 1e-11);
                    }
                }
                let e = b.eval(&[0.1, 0.2, 0.3 * (dim - 2) as f64]);
                assert!((e.val.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let gsum: f64 = e.grad.iter().map(|g| g[0]).sum();
                assert!(gsum.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p1_centroid_values() {
        let b = LagrangeBasis::new(2, 1);
        let e = b.eval(&[1.0 / 3.0, 1.0 / 3.0, 0.0]);
        for v in e.val {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
