//! Bogner–Fox–Schmit bicubic Hermite element on axis-aligned rectangles.
//!
//! Local dof `4 * corner + kind` with corners ordered counterclockwise from
//! the bottom-left and kinds `(u, ∂x u, ∂y u, ∂x∂y u)`.

use crate::linalg::dense::{Mat3, Vec3, ZERO};

use super::lagrange::PointEval;

/// Cubic Hermite functions on [0,1] and their first two derivatives:
/// `[h0, h1, h2, h3]` for value at 0, slope at 0, value at 1, slope at 1.
fn hermite(t: f64) -> [[f64; 3]; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        [
            1.0 - 3.0 * t2 + 2.0 * t3,
            -6.0 * t + 6.0 * t2,
            -6.0 + 12.0 * t,
        ],
        [t - 2.0 * t2 + t3, 1.0 - 4.0 * t + 3.0 * t2, -4.0 + 6.0 * t],
        [3.0 * t2 - 2.0 * t3, 6.0 * t - 6.0 * t2, 6.0 - 12.0 * t],
        [-t2 + t3, -2.0 * t + 3.0 * t2, -2.0 + 6.0 * t],
    ]
}

pub const CORNERS: [[usize; 2]; 4] = [[0, 0], [1, 0], [1, 1], [0, 1]];

/// Physical-frame evaluation of the 16 basis functions at reference point
/// `(t, s) ∈ [0,1]²` of a cell with side lengths `(hx, hy)`.
pub fn eval(t: f64, s: f64, hx: f64, hy: f64) -> PointEval {
    let ht = hermite(t);
    let hs = hermite(s);
    let mut out = PointEval {
        val: vec![0.0; 16],
        grad: vec![[0.0; 3]; 16],
        hess: vec![ZERO; 16],
    };
    for (corner, &[cx, cy]) in CORNERS.iter().enumerate() {
        for kind in 0..4 {
            let (slope_x, slope_y) = (kind == 1 || kind == 3, kind == 2 || kind == 3);
            let fx = &ht[2 * cx + slope_x as usize];
            let fy = &hs[2 * cy + slope_y as usize];
            let scale = if slope_x { hx } else { 1.0 } * if slope_y { hy } else { 1.0 };
            let i = 4 * corner + kind;
            out.val[i] = scale * fx[0] * fy[0];
            out.grad[i] = [scale * fx[1] * fy[0] / hx, scale * fx[0] * fy[1] / hy, 0.0];
            let mut h: Mat3 = ZERO;
            h[0][0] = scale * fx[2] * fy[0] / (hx * hx);
            h[1][1] = scale * fx[0] * fy[2] / (hy * hy);
            h[0][1] = scale * fx[1] * fy[1] / (hx * hy);
            h[1][0] = h[0][1];
            out.hess[i] = h;
        }
    }
    out
}

/// The four Hermite functionals at a vertex applied to a smooth function.
pub fn vertex_functionals(value: f64, grad: &Vec3, hess: &Mat3) -> [f64; 4] {
    [value, grad[0], grad[1], hess[0][1]]
}
