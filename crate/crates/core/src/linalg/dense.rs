//! Small fixed-size matrix helpers for 2×2 and 3×3 symmetric matrices.
//!
//! Pointwise operator evaluation happens at every quadrature point, so these
//! work on stack arrays; the active dimension `n` (2 or 3) is passed along
//! and the unused row/column is kept at zero.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO: Mat3 = [[0.0; 3]; 3];

pub fn identity(n: usize) -> Mat3 {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

pub fn diag(n: usize, d: &[f64]) -> Mat3 {
    let mut m = ZERO;
    for i in 0..n {
        m[i][i] = d[i];
    }
    m
}

/// Frobenius product `A : B`.
pub fn frob(n: usize, a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn dot(n: usize, a: &Vec3, b: &Vec3) -> f64 {
    (0..n).map(|i| a[i] * b[i]).sum()
}

pub fn norm(n: usize, a: &Vec3) -> f64 {
    dot(n, a, a).sqrt()
}

pub fn trace(n: usize, a: &Mat3) -> f64 {
    (0..n).map(|i| a[i][i]).sum()
}

pub fn is_symmetric(n: usize, a: &Mat3, tol: f64) -> bool {
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(a[i][j].abs()));
    (0..n).all(|i| (0..n).all(|j| (a[i][j] - a[j][i]).abs() <= tol * scale.max(1.0)))
}

pub fn determinant(n: usize, a: &Mat3) -> f64 {
    match n {
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        3 => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Inverse of an invertible `n × n` matrix (adjugate formula).
pub fn inverse(n: usize, a: &Mat3) -> Mat3 {
    let det = determinant(n, a);
    let mut inv = ZERO;
    match n {
        2 => {
            inv[0][0] = a[1][1] / det;
            inv[0][1] = -a[0][1] / det;
            inv[1][0] = -a[1][0] / det;
            inv[1][1] = a[0][0] / det;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
                    let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (a[i1][j1] * a[i2][j2] - a[i1][j2] * a[i2][j1]) / det;
                }
            }
        }
        _ => panic!("unsupported dimension {n}"),
    }
    inv
}

/// `Q diag(d) Q^T` with `Q` given column-wise (`q[i][k]` = i-th entry of k-th vector).
pub fn compose(n: usize, q: &Mat3, d: &Vec3) -> Mat3 {
    let mut m = ZERO;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..n).map(|k| q[i][k] * d[k] * q[j][k]).sum();
        }
    }
    m
}

/// Symmetric eigendecomposition. Returns eigenvalues in ascending order and
/// orthonormal eigenvectors as columns of the second result.
pub fn eig_sym(n: usize, a: &Mat3) -> (Vec3, Mat3) {
    match n {
        2 => eig2(a),
        3 => jacobi3(a),
        _ => panic!("unsupported dimension {n}"),
    }
}

fn eig2(a: &Mat3) -> (Vec3, Mat3) {
    let (p, q, r) = (a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1]);
    let mean = 0.5 * (p + r);
    let half = 0.5 * (p - r);
    let rad = half.hypot(q);
    let (l1, l2) = (mean - rad, mean + rad);
    // eigenvector of the larger eigenvalue via the stable half-angle form
    let theta = 0.5 * q.atan2(half);
    let (s, c) = theta.sin_cos();
    let mut v = ZERO;
    // column 1 (largest): (c, s); column 0: (-s, c)
    v[0][1] = c;
    v[1][1] = s;
    v[0][0] = -s;
    v[1][0] = c;
    ([l1, l2, 0.0], v)
}

fn jacobi3(a: &Mat3) -> (Vec3, Mat3) {
    let mut m = *a;
    for i in 0..3 {
        for j in i + 1..3 {
            let s = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    let mut v = identity(3);
    let scale = (0..3)
        .map(|i| (0..3).map(|j| m[i][j] * m[i][j]).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    for _sweep in 0..64 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off <= 1e-16 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q].abs() <= 1e-300 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // m <- J^T m J
            for k in 0..3 {
                let (mkp, mkq) = (m[k][p], m[k][q]);
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let (mpk, mqk) = (m[p][k], m[q][k]);
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let mut vals = [0.0; 3];
    let mut vecs = ZERO;
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = m[i][i];
        for r in 0..3 {
            vecs[r][k] = v[r][i];
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check(n: usize, a: &Mat3) {
        let (d, q) = eig_sym(n, a);
        let back = compose(n, &q, &d);
        let scale = 1.0 + (0..n).map(|i| a[i][i].abs()).sum::<f64>();
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (back[i][j] - a[i][j]).abs() < 1e-12 * scale * 10.0,
                    "{back:?} vs {a:?}"
                );
                let g: f64 = (0..n).map(|k| q[k][i] * q[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-12);
            }
        }
        for k in 1..n {
            assert!(d[k - 1] <= d[k]);
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [[2.0, 1.0, 0.5], [0.3, 3.0, 1.0], [0.0, 1.0, 4.0]];
        for n in [2, 3] {
            let b = inverse(n, &a);
            for i in 0..n {
                for j in 0..n {
                    let p: f64 = (0..n).map(|k| a[i][k] * b[k][j]).sum();
                    assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn diagonal_and_repeated() {
        check(2, &diag(2, &[3.0, -1.0]));
        check(3, &diag(3, &[1.0, 1.0, 1.0]));
        check(3, &[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        assert!((determinant(3, &diag(3, &[1.0, 2.0, 3.0])) - 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn eig_reconstructs(e in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let a2 = [[e[0], e[1], 0.0], [e[1], e[2], 0.0], [0.0; 3]];
            check(2, &a2);
            let a3 = [[e[0], e[1], e[3]], [e[1], e[2], e[4]], [e[3], e[4], e[5]]];
            check(3, &a3);
        }
    }
}
