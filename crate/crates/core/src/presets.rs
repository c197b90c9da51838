//! Named model problems with exact data and default parameters.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::function::Field;
use crate::linalg::dense::{diag, Mat3, Vec3, ZERO};
use crate::mesh::{self, Mesh};
use crate::operators::{LinearCoefficients, Operator, OperatorError, PucciSign, Structure};

pub const PRESET_NAMES: [&str; 5] = ["ma2d", "ma3d", "pucci-lshape", "linear2d", "hjb-finite-2d"];

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error("unknown preset '{0}' (expected one of: {names})", names = PRESET_NAMES.join(", "))]
    Unknown(String),
    #[error("the bicubic rectangle space needs a rectangular domain")]
    NotRectangular,
    #[error("epsilon is only a parameter of the Monge-Ampere presets")]
    NoEpsilon,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceChoice {
    Dg,
    BfsRectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpaceSpec {
    pub kind: SpaceChoice,
    pub degree: usize,
}

impl SpaceSpec {
    pub const fn dg(degree: usize) -> Self {
        Self {
            kind: SpaceChoice::Dg,
            degree,
        }
    }

    pub const fn bfs() -> Self {
        Self {
            kind: SpaceChoice::BfsRectangle,
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    UnitSquare,
    LShape,
    UnitCube,
}

impl Domain {
    pub fn dim(self) -> usize {
        match self {
            Domain::UnitCube => 3,
            _ => 2,
        }
    }

    /// Coarsest mesh for the given space family.
    pub fn initial_mesh(self, kind: SpaceChoice) -> Result<Mesh, PresetError> {
        match (self, kind) {
            (Domain::UnitSquare, SpaceChoice::BfsRectangle) => {
                Ok(mesh::presets::unit_square_rectangle())
            }
            (Domain::UnitSquare, SpaceChoice::Dg) => Ok(mesh::presets::unit_square_triangles()),
            (Domain::LShape, SpaceChoice::Dg) => Ok(mesh::presets::l_shape()),
            (Domain::UnitCube, SpaceChoice::Dg) => Ok(mesh::presets::unit_cube()),
            _ => Err(PresetError::NotRectangular),
        }
    }
}

/// Default solver and adaptivity parameters of a preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetDefaults {
    pub sigma: f64,
    pub tau: f64,
    pub s: f64,
    pub theta: f64,
    pub policy_iters: usize,
    pub eps: Option<f64>,
    pub kkt_tol: f64,
}

impl PresetDefaults {
    fn for_dim(n: usize, eps: Option<f64>) -> Self {
        Self {
            sigma: 10f64.powi(n as i32),
            tau: 1.0,
            s: 2.0,
            theta: 1.0 / 3.0,
            policy_iters: 8,
            eps,
            kkt_tol: if n == 2 { 1e-8 } else { 1e-6 },
        }
    }
}

type Xi = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ProblemPreset {
    pub name: String,
    pub domain: Domain,
    pub op: Operator,
    pub f: Field,
    pub g: Field,
    pub exact: Option<Field>,
    /// Space of uniform runs.
    pub space: SpaceSpec,
    /// Space of adaptive runs (always simplicial).
    pub adaptive_space: SpaceSpec,
    pub defaults: PresetDefaults,
    xi: Option<Xi>,
}

impl std::fmt::Debug for ProblemPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemPreset")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("space", &self.space)
            .field("adaptive_space", &self.adaptive_space)
            .field("defaults", &self.defaults)
            .finish()
    }
}

impl ProblemPreset {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// The same problem with the Monge-Ampère regularization `ε` replaced.
    pub fn with_epsilon(&self, eps: f64) -> Result<Self, PresetError> {
        let xi = self.xi.clone().ok_or(PresetError::NoEpsilon)?;
        let mut out = self.clone();
        out.op = Operator::monge_ampere(self.dim(), eps, move |x| xi(x))?;
        out.defaults.eps = Some(eps);
        Ok(out)
    }
}

pub fn preset(name: &str) -> Result<ProblemPreset, PresetError> {
    match name {
        "ma2d" => ma2d(),
        "ma3d" => ma3d(),
        "pucci-lshape" => pucci_lshape(),
        "linear2d" => Ok(linear2d()),
        "hjb-finite-2d" => Ok(hjb_finite_2d()),
        other => Err(PresetError::Unknown(other.to_string())),
    }
}

/// `u = −(1/sin πx + 1/sin πy)^{−1}` and its derivatives.
fn ma2d_exact() -> Field {
    fn parts(x: &Vec3) -> (f64, f64, f64, f64) {
        let (a, b) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        (a, b, PI * (PI * x[0]).cos(), PI * (PI * x[1]).cos())
    }
    Field::new(|x| {
        let (a, b, _, _) = parts(x);
        if a + b <= 0.0 {
            0.0
        } else {
            -a * b / (a + b)
        }
    })
    .with_gradient(|x| {
        let (a, b, da, db) = parts(x);
        let s2 = (a + b).powi(2);
        if s2 == 0.0 {
            return [0.0; 3];
        }
        [-b * b / s2 * da, -a * a / s2 * db, 0.0]
    })
    .with_hessian(|x| {
        let (a, b, da, db) = parts(x);
        let s = a + b;
        if s == 0.0 {
            return ZERO;
        }
        let (s2, s3) = (s * s, s * s * s);
        let mut h = ZERO;
        h[0][0] = 2.0 * b * b / s3 * da * da + b * b / s2 * PI * PI * a;
        h[1][1] = 2.0 * a * a / s3 * db * db + a * a / s2 * PI * PI * b;
        h[0][1] = -2.0 * a * b / s3 * da * db;
        h[1][0] = h[0][1];
        h
    })
}

/// `det D²u = π⁴ sin²(πx) sin²(πy) (2 − sin(πx) sin(πy)) / (sin(πx) + sin(πy))⁴`.
fn ma2d_xi(x: &Vec3) -> f64 {
    let (a, b) = ((PI * x[0]).sin(), (PI * x[1]).sin());
    let s = a + b;
    if s <= 0.0 {
        return 0.0;
    }
    PI.powi(4) * a * a * b * b * (2.0 - a * b) / s.powi(4)
}

fn ma2d() -> Result<ProblemPreset, PresetError> {
    let eps = 1e-4;
    Ok(ProblemPreset {
        name: "ma2d".into(),
        domain: Domain::UnitSquare,
        op: Operator::monge_ampere(2, eps, ma2d_xi)?,
        f: Field::constant(0.0),
        g: Field::constant(0.0),
        exact: Some(ma2d_exact()),
        space: SpaceSpec::bfs(),
        adaptive_space: SpaceSpec::dg(3),
        defaults: PresetDefaults::for_dim(2, Some(eps)),
        xi: Some(Arc::new(ma2d_xi)),
    })
}

const MA3D_EXPONENT: f64 = 1.6;

/// `u = |x|^{8/5}`.
fn ma3d_exact() -> Field {
    let a = MA3D_EXPONENT;
    let r = |x: &Vec3| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    Field::new(move |x| r(x).powf(a))
        .with_gradient(move |x| {
            let rr = r(x);
            if rr == 0.0 {
                return [0.0; 3];
            }
            let c = a * rr.powf(a - 2.0);
            [c * x[0], c * x[1], c * x[2]]
        })
        .with_hessian(move |x| {
            let rr = r(x);
            let mut h = ZERO;
            if rr == 0.0 {
                return h;
            }
            let c = a * rr.powf(a - 2.0);
            let d = a * (a - 2.0) * rr.powf(a - 4.0);
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] = d * x[i] * x[j] + if i == j { c } else { 0.0 };
                }
            }
            h
        })
}

/// `det D²u = 6 (4/5)⁴ |x|^{−6/5}`.
fn ma3d_xi(x: &Vec3) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    6.0 * 0.8f64.powi(4) * r2.powf(-0.6)
}

fn ma3d() -> Result<ProblemPreset, PresetError> {
    let eps = 1e-3;
    let exact = ma3d_exact();
    Ok(ProblemPreset {
        name: "ma3d".into(),
        domain: Domain::UnitCube,
        op: Operator::monge_ampere(3, eps, ma3d_xi)?,
        f: Field::constant(0.0),
        g: exact.clone(),
        exact: Some(exact),
        space: SpaceSpec::dg(2),
        adaptive_space: SpaceSpec::dg(2),
        defaults: PresetDefaults::for_dim(3, Some(eps)),
        xi: Some(Arc::new(ma3d_xi)),
    })
}

fn pucci_lshape() -> Result<ProblemPreset, PresetError> {
    Ok(ProblemPreset {
        name: "pucci-lshape".into(),
        domain: Domain::LShape,
        op: Operator::pucci(2, 0.1, 0.9, 0.0, PucciSign::Plus)?,
        f: Field::constant(1.0),
        g: Field::constant(0.0),
        exact: None,
        space: SpaceSpec::dg(3),
        adaptive_space: SpaceSpec::dg(3),
        defaults: PresetDefaults::for_dim(2, None),
        xi: None,
    })
}

fn paraboloid() -> Field {
    Field::new(|x| x[0] * x[0] + x[1] * x[1])
        .with_gradient(|x| [2.0 * x[0], 2.0 * x[1], 0.0])
        .with_hessian(|_| diag(2, &[2.0, 2.0]))
}

const LINEAR_A: Mat3 = [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.0]];
const LINEAR_B: Vec3 = [1.0, -0.5, 0.0];

/// `−A:D²u + b·∇u + u = f` with `u = x² + y²`.
fn linear2d() -> ProblemPreset {
    let coefficients = LinearCoefficients::constant(LINEAR_A, LINEAR_B, 1.0, 0.0);
    let disc = (0.25f64 + 0.25).sqrt();
    let structure = Structure {
        lambda: 1.5 - disc,
        big_lambda: 1.5 + disc,
        gamma: 1.25f64.sqrt(),
        mu: 1.0,
    };
    ProblemPreset {
        name: "linear2d".into(),
        domain: Domain::UnitSquare,
        op: Operator::linear(2, coefficients, structure),
        f: Field::new(|x| -6.0 + 2.0 * x[0] - x[1] + x[0] * x[0] + x[1] * x[1]),
        g: paraboloid(),
        exact: Some(paraboloid()),
        space: SpaceSpec::dg(2),
        adaptive_space: SpaceSpec::dg(2),
        defaults: PresetDefaults::for_dim(2, None),
        xi: None,
    }
}

/// `sup_α (−A_α:D²u + b_α·∇u + s_α) = 0` with `u = x² + y²`: the first member
/// vanishes identically, the second equals `x − 1 ≤ 0`.
fn hjb_finite_2d() -> ProblemPreset {
    let first = LinearCoefficients::constant(diag(2, &[1.0, 0.5]), [0.0; 3], 0.0, 3.0);
    let second = LinearCoefficients::constant(
        [[0.75, 0.25, 0.0], [0.25, 0.75, 0.0], [0.0; 3]],
        [0.5, 0.0, 0.0],
        0.0,
        2.0,
    );
    let structure = Structure {
        lambda: 0.5,
        big_lambda: 1.0,
        gamma: 0.5,
        mu: 0.0,
    };
    ProblemPreset {
        name: "hjb-finite-2d".into(),
        domain: Domain::UnitSquare,
        op: Operator::hjb_sup(2, vec![first, second], structure).expect("nonempty family"),
        f: Field::constant(0.0),
        g: paraboloid(),
        exact: Some(paraboloid()),
        space: SpaceSpec::dg(2),
        adaptive_space: SpaceSpec::dg(2),
        defaults: PresetDefaults::for_dim(2, None),
        xi: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::determinant;
    use crate::operators::{check_structure, StructureSample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual_at(p: &ProblemPreset, x: &Vec3) -> f64 {
        let u = p.exact.as_ref().unwrap();
        p.f.value(x) - p.op.evaluate(x, u.value(x), &u.gradient(x), &u.hessian(x))
    }

    #[test]
    fn all_names_resolve() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert!(p.domain.initial_mesh(p.adaptive_space.kind).is_ok());
        }
        assert!(matches!(preset("nope"), Err(PresetError::Unknown(_))));
    }

    #[test]
    fn ma2d_point_values() {
        let x = [0.5, 0.5, 0.0];
        // det D²u at the centre: u_xx = u_yy = π²/4, u_xy = 0
        assert!((ma2d_xi(&x) - PI.powi(4) / 16.0).abs() < 1e-13);
        assert!((ma2d_exact().value(&x) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn ma2d_derivatives_match_differences_and_determinant() {
        let u = ma2d_exact();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-4;
        for _ in 0..100 {
            let x = [
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                0.0,
            ];
            let hs = u.hessian(&x);
            for i in 0..2 {
                let (mut p, mut m) = (x, x);
                p[i] += h;
                m[i] -= h;
                let g = (u.value(&p) - u.value(&m)) / (2.0 * h);
                assert!((g - u.gradient(&x)[i]).abs() < 1e-6);
                for j in 0..2 {
                    let d = (u.gradient(&p)[j] - u.gradient(&m)[j]) / (2.0 * h);
                    assert!((d - hs[i][j]).abs() < 1e-5 * (1.0 + hs[i][j].abs()));
                }
            }
            assert!((determinant(2, &hs) - ma2d_xi(&x)).abs() < 1e-10 * (1.0 + ma2d_xi(&x)));
        }
    }

    #[test]
    fn ma2d_regularized_operator_vanishes_at_exact_hessian() {
        let p = preset("ma2d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0];
            let corner_dist = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
                .iter()
                .map(|c: &[f64; 2]| ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            // the unconstrained supremizer is cof(D²u)/Δu; skip points where it leaves S(ε)
            let (ev, _) = crate::linalg::dense::eig_sym(2, &p.exact.as_ref().unwrap().hessian(&x));
            if corner_dist <= 0.05 || ev[0].min(ev[1]) / (ev[0] + ev[1]) < 1e-4 {
                continue;
            }
            checked += 1;
            assert!(
                residual_at(&p, &x).abs() <= 1e-6,
                "{x:?}: {}",
                residual_at(&p, &x)
            );
        }
    }

    #[test]
    fn ma3d_data_is_consistent() {
        let p = preset("ma3d").unwrap();
        let u = p.exact.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = [
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
            ];
            let h = u.hessian(&x);
            assert!((determinant(3, &h) - ma3d_xi(&x)).abs() < 1e-10 * ma3d_xi(&x));
            // convexity
            let (ev, _) = crate::linalg::dense::eig_sym(3, &h);
            assert!(ev.iter().all(|e| *e > 0.0));
            assert!(residual_at(&p, &x).abs() <= 1e-6 * (1.0 + ma3d_xi(&x)));
        }
        // boundary data equals the exact solution on the faces
        for _ in 0..100 {
            let mut x = [
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            x[rng.random_range(0..3)] = if rng.random::<bool>() { 1.0 } else { 0.0 };
            assert!(
                (p.g.value(&x) - x.iter().map(|c| c * c).sum::<f64>().powf(0.8)).abs() <= 1e-12
            );
        }
        assert_eq!(p.space, SpaceSpec::dg(2));
        assert_eq!(p.defaults.eps, Some(1e-3));
    }

    #[test]
    fn manufactured_presets_satisfy_their_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for name in ["linear2d", "hjb-finite-2d"] {
            let p = preset(name).unwrap();
            for _ in 0..100 {
                let x = [rng.random::<f64>(), rng.random::<f64>(), 0.0];
                assert!(residual_at(&p, &x).abs() <= 1e-8, "{name}");
            }
        }
    }

    #[test]
    fn pucci_defaults() {
        let p = preset("pucci-lshape").unwrap();
        assert!(p.exact.is_none());
        assert_eq!(p.op.structure.lambda, 0.1);
        assert_eq!(p.op.structure.big_lambda, 0.9);
        assert_eq!(p.defaults.sigma, 100.0);
        assert!((p.defaults.theta - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(p.defaults.policy_iters, 8);
    }

    fn random_samples(rng: &mut ChaCha8Rng, count: usize) -> Vec<StructureSample> {
        let sym = |rng: &mut ChaCha8Rng| {
            let (a, b, c) = (
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            [[a, b, 0.0], [b, c, 0.0], [0.0; 3]]
        };
        (0..count)
            .map(|_| StructureSample {
                x: [rng.random::<f64>(), rng.random::<f64>(), 0.0],
                r: rng.random_range(-2.0..2.0),
                p: [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    0.0,
                ],
                m: sym(rng),
                s: rng.random_range(-2.0..2.0),
                q: [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    0.0,
                ],
                n: sym(rng),
            })
            .collect()
    }

    #[test]
    fn declared_structure_constants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for name in ["linear2d", "hjb-finite-2d"] {
            let p = preset(name).unwrap();
            let samples = random_samples(&mut rng, 200);
            let report = check_structure(&p.op, &samples, 1e-10);
            assert!(
                report.violations.is_empty(),
                "{name}: {:?}",
                report.violations.first()
            );
        }
    }

    #[test]
    fn epsilon_override_rebuilds_operator() {
        let p = preset("ma2d").unwrap().with_epsilon(1e-2).unwrap();
        assert_eq!(p.op.structure.lambda, 1e-2);
        assert!(preset("linear2d").unwrap().with_epsilon(1e-2).is_err());
        assert!(Domain::LShape
            .initial_mesh(SpaceChoice::BfsRectangle)
            .is_err());
    }
}
