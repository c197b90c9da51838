//! Quadrature rules on reference cells.
//!
//! Reference cells: the unit interval `[0,1]`, the unit simplex with vertices
//! `0, e_1, …, e_n`, and the unit square `[0,1]²`. Low degrees use classical
//! closed rules; everything else is a collapsed (Duffy) tensor Gauss–Legendre
//! rule, which is exact for the requested degree with positive weights.

use crate::linalg::dense::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefShape {
    Interval,
    Triangle,
    Tetrahedron,
    Square,
}

impl RefShape {
    pub fn dim(self) -> usize {
        match self {
            RefShape::Interval => 1,
            RefShape::Triangle | RefShape::Square => 2,
            RefShape::Tetrahedron => 3,
        }
    }

    pub fn volume(self) -> f64 {
        match self {
            RefShape::Interval | RefShape::Square => 1.0,
            RefShape::Triangle => 0.5,
            RefShape::Tetrahedron => 1.0 / 6.0,
        }
    }

    /// Reference simplex of dimension `d`.
    pub fn simplex(d: usize) -> Self {
        match d {
            1 => RefShape::Interval,
            2 => RefShape::Triangle,
            3 => RefShape::Tetrahedron,
            _ => panic!("no simplex of dimension {d}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[0,1]` with `m` points.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_m
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, t);
        dp = if d != 0.0 { d } else { dp };
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = 0.5 * (1.0 - t);
        x[m - 1 - i] = 0.5 * (1.0 + t);
        w[i] = 0.5 * wt;
        w[m - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

/// Legendre polynomial `P_m(t)` and its derivative.
fn legendre(m: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// A rule on `shape` exact for polynomials of total degree `degree`
/// (coordinate degree for the square).
pub fn quadrature_rule(shape: RefShape, degree: usize) -> QuadratureRule {
    let pts = |d: usize| d.div_ceil(2).max(1);
    match shape {
        RefShape::Interval => {
            let (x, w) = gauss_legendre((degree + 1).div_ceil(2));
            QuadratureRule {
                points: x.iter().map(|&t| [t, 0.0, 0.0]).collect(),
                weights: w,
                degree,
            }
        }
        RefShape::Square => {
            let (x, w) = gauss_legendre((degree + 1).div_ceil(2));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (i, &xi) in x.iter().enumerate() {
                for (j, &yj) in x.iter().enumerate() {
                    points.push([xi, yj, 0.0]);
                    weights.push(w[i] * w[j]);
                }
            }
            QuadratureRule {
                points,
                weights,
                degree,
            }
        }
        RefShape::Triangle if degree <= 1 => QuadratureRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0, 0.0]],
            weights: vec![0.5],
            degree,
        },
        RefShape::Tetrahedron if degree <= 1 => QuadratureRule {
            points: vec![[0.25, 0.25, 0.25]],
            weights: vec![1.0 / 6.0],
            degree,
        },
        RefShape::Triangle if degree == 2 => QuadratureRule {
            points: vec![
                [1.0 / 6.0, 1.0 / 6.0, 0.0],
                [2.0 / 3.0, 1.0 / 6.0, 0.0],
                [1.0 / 6.0, 2.0 / 3.0, 0.0],
            ],
            weights: vec![1.0 / 6.0; 3],
            degree,
        },
        RefShape::Triangle => {
            // x = u, y = v (1 - u), Jacobian (1 - u)
            let (u, wu) = gauss_legendre(pts(degree + 2));
            let (v, wv) = gauss_legendre(pts(degree + 1));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (i, &ui) in u.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    points.push([ui, vj * (1.0 - ui), 0.0]);
                    weights.push(wu[i] * wv[j] * (1.0 - ui));
                }
            }
            QuadratureRule {
                points,
                weights,
                degree,
            }
        }
        RefShape::Tetrahedron => {
            // x = u, y = v (1 - u), z = w (1 - u)(1 - v), Jacobian (1 - u)^2 (1 - v)
            let (u, wu) = gauss_legendre(pts(degree + 3));
            let (v, wv) = gauss_legendre(pts(degree + 2));
            let (s, ws) = gauss_legendre(pts(degree + 1));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (i, &ui) in u.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    for (k, &sk) in s.iter().enumerate() {
                        points.push([ui, vj * (1.0 - ui), sk * (1.0 - ui) * (1.0 - vj)]);
                        weights.push(wu[i] * wv[j] * ws[k] * (1.0 - ui).powi(2) * (1.0 - vj));
                    }
                }
            }
            QuadratureRule {
                points,
                weights,
                degree,
            }
        }
    }
}

/// Equispaced lattice points of order `m` on a reference cell (the
/// Lagrange nodes of degree `m`). Ordered lexicographically by coordinates
/// (last coordinate slowest).
pub fn lattice_points(shape: RefShape, m: usize) -> Vec<Vec3> {
    let h = 1.0 / m.max(1) as f64;
    let mut out = Vec::new();
    match shape {
        RefShape::Interval => {
            for i in 0..=m {
                out.push([i as f64 * h, 0.0, 0.0]);
            }
        }
        RefShape::Square => {
            for j in 0..=m {
                for i in 0..=m {
                    out.push([i as f64 * h, j as f64 * h, 0.0]);
                }
            }
        }
        RefShape::Triangle => {
            for j in 0..=m {
                for i in 0..=m - j {
                    out.push([i as f64 * h, j as f64 * h, 0.0]);
                }
            }
        }
        RefShape::Tetrahedron => {
            for k in 0..=m {
                for j in 0..=m - k {
                    for i in 0..=m - j - k {
                        out.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                    }
                }
            }
        }
    }
    out
}
