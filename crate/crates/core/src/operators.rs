//! Nonlinear operators F(x, r, p, M) with their structure constants and
//! exact pointwise supremizers.
//!
//! Every operator here is a supremum (or, for the Pucci minimal operator,
//! an infimum) of linear operators `−A:M + b·p + c·r + f_A`. The
//! coefficients attaining the extremum at a given `(x, r, p, M)` form a
//! [`Policy`]; freezing the policy gives the linear problem solved in each
//! step of policy iteration.

use std::sync::Arc;

use crate::linalg::dense::{self, compose, eig_sym, frob, Mat3, Vec3, ZERO};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OperatorError {
    #[error("matrix argument is not symmetric")]
    NotSymmetric,
    #[error("invalid ellipticity bounds: need 0 < lambda <= Lambda (got {0}, {1})")]
    BadBounds(f64, f64),
    #[error("regularization parameter must satisfy 0 < eps < 1/n (got {0})")]
    BadEpsilon(f64),
    #[error("Monge-Ampere right-hand side must be nonnegative (got {0})")]
    NegativeXi(f64),
    #[error("HJB family must contain at least one member")]
    EmptyFamily,
}

/// Frozen linear coefficients at one point: `L v = −A:D²v + b·∇v + c v + f_A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub a: Mat3,
    pub b: Vec3,
    pub c: f64,
    pub f_a: f64,
}

impl Policy {
    /// Evaluates the linear operator at `(r, p, M)`.
    pub fn apply(&self, n: usize, r: f64, p: &Vec3, m: &Mat3) -> f64 {
        -frob(n, &self.a, m) + dense::dot(n, &self.b, p) + self.c * r + self.f_a
    }
}

type MatFn = Arc<dyn Fn(&Vec3) -> Mat3 + Send + Sync>;
type VecFn = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// Coefficients `(A(x), b(x), c(x), ξ(x))` of one linear operator.
#[derive(Clone)]
pub struct LinearCoefficients {
    pub a: MatFn,
    pub b: VecFn,
    pub c: ScalarFn,
    pub source: ScalarFn,
}

impl std::fmt::Debug for LinearCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LinearCoefficients")
    }
}

impl LinearCoefficients {
    /// Constant coefficients.
    pub fn constant(a: Mat3, b: Vec3, c: f64, source: f64) -> Self {
        Self {
            a: Arc::new(move |_| a),
            b: Arc::new(move |_| b),
            c: Arc::new(move |_| c),
            source: Arc::new(move |_| source),
        }
    }

    fn policy(&self, x: &Vec3) -> Policy {
        Policy {
            a: (self.a)(x),
            b: (self.b)(x),
            c: (self.c)(x),
            f_a: (self.source)(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PucciSign {
    Plus,
    Minus,
}

/// Constants of the structure condition: ellipticity `λ ≤ Λ`, gradient
/// Lipschitz constant `γ` and zeroth-order bound `μ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Structure {
    pub lambda: f64,
    pub big_lambda: f64,
    pub gamma: f64,
    pub mu: f64,
}

#[derive(Clone)]
pub enum OperatorKind {
    /// `−A:M + b·p + c r` (the source of `coefficients` is ignored).
    Linear(LinearCoefficients),
    /// `𝒫^±_{λ,Λ}(M) + μ|p|`.
    Pucci {
        lambda: f64,
        big_lambda: f64,
        mu: f64,
        sign: PucciSign,
    },
    /// `max_α (−A^α:M + b^α·p + c^α r + ξ^α)` over a finite family.
    HjbSup(Vec<LinearCoefficients>),
    /// `sup_{A ∈ S(ε)} (−A:M + n (ξ det A)^{1/n})`, `S(ε) = {tr A = 1, A ≥ εI}`.
    MongeAmpere { eps: f64, xi: ScalarFn },
}

impl std::fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Linear(_) => f.write_str("Linear"),
            Self::Pucci {
                lambda,
                big_lambda,
                mu,
                sign,
            } => f
                .debug_struct("Pucci")
                .field("lambda", lambda)
                .field("big_lambda", big_lambda)
                .field("mu", mu)
                .field("sign", sign)
                .finish(),
            Self::HjbSup(family) => write!(f, "HjbSup({} members)", family.len()),
            Self::MongeAmpere { eps, .. } => f
                .debug_struct("MongeAmpere")
                .field("eps", eps)
                .finish_non_exhaustive(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Operator {
    pub dim: usize,
    pub kind: OperatorKind,
    pub structure: Structure,
}

impl Operator {
    pub fn linear(dim: usize, coefficients: LinearCoefficients, structure: Structure) -> Self {
        Self {
            dim,
            kind: OperatorKind::Linear(coefficients),
            structure,
        }
    }

    pub fn pucci(
        dim: usize,
        lambda: f64,
        big_lambda: f64,
        mu: f64,
        sign: PucciSign,
    ) -> Result<Self, OperatorError> {
        if !(lambda > 0.0 && lambda <= big_lambda) {
            return Err(OperatorError::BadBounds(lambda, big_lambda));
        }
        Ok(Self {
            dim,
            kind: OperatorKind::Pucci {
                lambda,
                big_lambda,
                mu,
                sign,
            },
            structure: Structure {
                lambda,
                big_lambda,
                gamma: mu,
                mu: 0.0,
            },
        })
    }

    pub fn hjb_sup(
        dim: usize,
        family: Vec<LinearCoefficients>,
        structure: Structure,
    ) -> Result<Self, OperatorError> {
        if family.is_empty() {
            return Err(OperatorError::EmptyFamily);
        }
        Ok(Self {
            dim,
            kind: OperatorKind::HjbSup(family),
            structure,
        })
    }

    pub fn monge_ampere(
        dim: usize,
        eps: f64,
        xi: impl Fn(&Vec3) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, OperatorError> {
        if !(eps > 0.0 && eps < 1.0 / dim as f64) {
            return Err(OperatorError::BadEpsilon(eps));
        }
        Ok(Self {
            dim,
            kind: OperatorKind::MongeAmpere {
                eps,
                xi: Arc::new(xi),
            },
            structure: Structure {
                lambda: eps,
                big_lambda: 1.0 - (dim as f64 - 1.0) * eps,
                gamma: 0.0,
                mu: 0.0,
            },
        })
    }

    /// `F(x, r, p, M)`.
    pub fn evaluate(&self, x: &Vec3, r: f64, p: &Vec3, m: &Mat3) -> f64 {
        let n = self.dim;
        match &self.kind {
            OperatorKind::Linear(c) => {
                let mut pol = c.policy(x);
                pol.f_a = 0.0;
                pol.apply(n, r, p, m)
            }
            OperatorKind::Pucci { .. } | OperatorKind::MongeAmpere { .. } => {
                self.supremizer(x, r, p, m).apply(n, r, p, m)
            }
            OperatorKind::HjbSup(family) => family
                .iter()
                .map(|c| c.policy(x).apply(n, r, p, m))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Coefficients attaining `F(x, r, p, M)`.
    pub fn supremizer(&self, x: &Vec3, r: f64, p: &Vec3, m: &Mat3) -> Policy {
        let n = self.dim;
        match &self.kind {
            OperatorKind::Linear(c) => {
                let mut pol = c.policy(x);
                pol.f_a = 0.0;
                pol
            }
            OperatorKind::Pucci {
                lambda,
                big_lambda,
                mu,
                sign,
            } => {
                let (_, a) = match sign {
                    PucciSign::Plus => pucci_plus(n, m, *lambda, *big_lambda),
                    PucciSign::Minus => pucci_minus(n, m, *lambda, *big_lambda),
                }
                .expect("symmetric argument");
                Policy {
                    a,
                    b: gradient_policy(n, p, *mu),
                    c: 0.0,
                    f_a: 0.0,
                }
            }
            OperatorKind::HjbSup(family) => {
                let mut best: Option<(f64, Policy)> = None;
                for c in family {
                    let pol = c.policy(x);
                    let v = pol.apply(n, r, p, m);
                    if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                        best = Some((v, pol));
                    }
                }
                best.expect("nonempty family").1
            }
            OperatorKind::MongeAmpere { eps, xi } => {
                let xv = xi(x).max(0.0);
                let (value, a) = ma_reg_sup(n, m, xv, *eps).expect("valid arguments");
                let f_a = value + frob(n, &a, m);
                Policy {
                    a,
                    b: [0.0; 3],
                    c: 0.0,
                    f_a,
                }
            }
        }
    }

    /// Initial policy of the iteration: the linear coefficients for a linear
    /// operator, `A = I/2` for Pucci and Monge–Ampère (with the matching
    /// source `n (ξ det(I/2))^{1/n}` for the latter), and for finite HJB
    /// families the member with the largest source term.
    pub fn initial_policy(&self, x: &Vec3) -> Policy {
        let n = self.dim;
        let half = {
            let mut a = dense::identity(n);
            for row in a.iter_mut() {
                for v in row.iter_mut() {
                    *v *= 0.5;
                }
            }
            a
        };
        match &self.kind {
            OperatorKind::Linear(_) => self.supremizer(x, 0.0, &[0.0; 3], &ZERO),
            OperatorKind::Pucci { .. } => Policy {
                a: half,
                b: [0.0; 3],
                c: 0.0,
                f_a: 0.0,
            },
            OperatorKind::MongeAmpere { xi, .. } => {
                let det = 0.5f64.powi(n as i32);
                let f_a = n as f64 * (xi(x).max(0.0) * det).powf(1.0 / n as f64);
                Policy {
                    a: half,
                    b: [0.0; 3],
                    c: 0.0,
                    f_a,
                }
            }
            OperatorKind::HjbSup(_) => self.supremizer(x, 0.0, &[0.0; 3], &ZERO),
        }
    }
}

/// Pucci gradient policy: `b = μ p/|p|` so that `b·p = μ|p|` (b = 0 at p ≈ 0).
fn gradient_policy(n: usize, p: &Vec3, mu: f64) -> Vec3 {
    let np = dense::norm(n, p);
    if mu == 0.0 || np < 1e-14 {
        return [0.0; 3];
    }
    let mut b = [0.0; 3];
    for i in 0..n {
        b[i] = mu * p[i] / np;
    }
    b
}

fn check_pucci_args(n: usize, m: &Mat3, lambda: f64, big_lambda: f64) -> Result<(), OperatorError> {
    if !(lambda > 0.0 && lambda <= big_lambda) {
        return Err(OperatorError::BadBounds(lambda, big_lambda));
    }
    if !dense::is_symmetric(n, m, 1e-12) {
        return Err(OperatorError::NotSymmetric);
    }
    Ok(())
}

/// `𝒫⁺(M) = sup_{λI ≤ A ≤ ΛI} (−A:M)` with a maximizing `A`.
pub fn pucci_plus(
    n: usize,
    m: &Mat3,
    lambda: f64,
    big_lambda: f64,
) -> Result<(f64, Mat3), OperatorError> {
    check_pucci_args(n, m, lambda, big_lambda)?;
    let (ev, q) = eig_sym(n, m);
    let mut a = [0.0; 3];
    let mut value = 0.0;
    for i in 0..n {
        a[i] = if ev[i] > 0.0 { lambda } else { big_lambda };
        value -= a[i] * ev[i];
    }
    Ok((value, compose(n, &q, &a)))
}

/// `𝒫⁻(M) = inf_{λI ≤ A ≤ ΛI} (−A:M)` with a minimizing `A`.
pub fn pucci_minus(
    n: usize,
    m: &Mat3,
    lambda: f64,
    big_lambda: f64,
) -> Result<(f64, Mat3), OperatorError> {
    check_pucci_args(n, m, lambda, big_lambda)?;
    let mut neg = *m;
    for row in neg.iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    let (v, a) = pucci_plus(n, &neg, lambda, big_lambda)?;
    Ok((-v, a))
}

/// `sup_{A ∈ S(ε)} (−A:M + n (ξ det A)^{1/n})` with a maximizing `A`.
///
/// The maximizer shares an eigenbasis with `M`, so the problem reduces to
/// the concave maximization of `−Σ a_i m_i + n (ξ Π a_i)^{1/n}` over the
/// clipped simplex `Σ a_i = 1`, `a_i ≥ ε`, which is solved in closed form
/// (n = 2) or by enumerating the stationary points of all faces (n = 3).
pub fn ma_reg_sup(n: usize, m: &Mat3, xi: f64, eps: f64) -> Result<(f64, Mat3), OperatorError> {
    if xi < 0.0 {
        return Err(OperatorError::NegativeXi(xi));
    }
    if !(eps > 0.0 && eps < 1.0 / n as f64) {
        return Err(OperatorError::BadEpsilon(eps));
    }
    if !dense::is_symmetric(n, m, 1e-12) {
        return Err(OperatorError::NotSymmetric);
    }
    let (ev, q) = eig_sym(n, m);
    let a = match n {
        2 => ma_weights_2d(ev[0], ev[1], xi, eps),
        3 => ma_weights_3d(&ev, xi, eps),
        _ => panic!("unsupported dimension {n}"),
    };
    let value = ma_objective(n, &ev, &a, xi);
    Ok((value, compose(n, &q, &a)))
}

fn ma_objective(n: usize, m: &Vec3, a: &Vec3, xi: f64) -> f64 {
    let lin: f64 = (0..n).map(|i| a[i] * m[i]).sum();
    let det: f64 = a[..n].iter().product();
    -lin + n as f64 * (xi * det).max(0.0).powf(1.0 / n as f64)
}

/// Ascending eigenvalues `m1 ≤ m2`; returns `(a1, a2)` with `a1 ≥ a2`.
fn ma_weights_2d(m1: f64, m2: f64, xi: f64, eps: f64) -> Vec3 {
    let d = m2 - m1;
    // stationarity: a(1−a) = ξ / (d² + 4ξ), a ≥ 1/2
    let a = if xi == 0.0 {
        if d > 0.0 {
            1.0
        } else {
            0.5
        }
    } else {
        let b = xi / (d * d + 4.0 * xi);
        0.5 * (1.0 + (1.0 - 4.0 * b).max(0.0).sqrt())
    };
    let a = a.clamp(eps, 1.0 - eps);
    [a, 1.0 - a, 0.0]
}

fn ma_weights_3d(m: &Vec3, xi: f64, eps: f64) -> Vec3 {
    let mut candidates: Vec<Vec3> = Vec::new();
    // vertices of the clipped simplex
    for i in 0..3 {
        let mut a = [eps; 3];
        a[i] = 1.0 - 2.0 * eps;
        candidates.push(a);
    }
    if xi > 0.0 {
        // interior stationary point: a_i ∝ 1/(m_i + t) with Π (m_i + t) = ξ
        let mmin = m[0].min(m[1]).min(m[2]);
        let s = [m[0] - mmin, m[1] - mmin, m[2] - mmin];
        let f = |t: f64| (s[0] + t) * (s[1] + t) * (s[2] + t) - xi;
        let (mut lo, mut hi) = (0.0f64, xi.cbrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        if t > 0.0 {
            let inv = [1.0 / (s[0] + t), 1.0 / (s[1] + t), 1.0 / (s[2] + t)];
            let sum: f64 = inv.iter().sum();
            let a = inv.map(|v| v / sum);
            if a.iter().all(|&v| v >= eps) {
                candidates.push(a);
            }
        }
        // faces a_i = ε: concave 1D problems on the remaining pair
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let total = 1.0 - eps;
            // derivative of the face objective, strictly decreasing in a_j
            let dg = |aj: f64| {
                let ak = total - aj;
                let c = (xi * eps).cbrt();
                -m[j] + m[k] + c * (ak - aj) / (aj * ak).powf(2.0 / 3.0)
            };
            let (mut lo, mut hi) = (eps, total - eps);
            let aj = if dg(lo) <= 0.0 {
                lo
            } else if dg(hi) >= 0.0 {
                hi
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if dg(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let mut a = [0.0; 3];
            a[i] = eps;
            a[j] = aj;
            a[k] = total - aj;
            candidates.push(a);
        }
    }
    let mut best = candidates[0];
    let mut best_v = ma_objective(3, m, &best, xi);
    for a in candidates.into_iter().skip(1) {
        let v = ma_objective(3, m, &a, xi);
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    best
}

/// One sample of the structure inequality: `(x, r, p, M)` and `(s, q, N)`.
#[derive(Debug, Clone)]
pub struct StructureSample {
    pub x: Vec3,
    pub r: f64,
    pub p: Vec3,
    pub m: Mat3,
    pub s: f64,
    pub q: Vec3,
    pub n: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureViolation {
    pub sample: usize,
    /// `true` for the lower bound, `false` for the upper bound.
    pub lower: bool,
    pub amount: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StructureReport {
    pub checked: usize,
    pub violations: Vec<StructureViolation>,
}

/// Checks
/// `𝒫⁻(M−N) − γ|p−q| − μ(s−r)⁺ ≤ F(x,r,p,M) − F(x,s,q,N) ≤ 𝒫⁺(M−N) + γ|p−q| + μ(r−s)⁺`
/// at every sample, with absolute tolerance `tol` scaled by the magnitudes involved.
pub fn check_structure(op: &Operator, samples: &[StructureSample], tol: f64) -> StructureReport {
    let n = op.dim;
    let st = op.structure;
    let mut report = StructureReport {
        checked: samples.len(),
        violations: Vec::new(),
    };
    for (i, smp) in samples.iter().enumerate() {
        let mut diff = ZERO;
        for a in 0..n {
            for b in 0..n {
                diff[a][b] = smp.m[a][b] - smp.n[a][b];
            }
        }
        let dp: Vec3 = [
            smp.p[0] - smp.q[0],
            smp.p[1] - smp.q[1],
            smp.p[2] - smp.q[2],
        ];
        let grad = st.gamma * dense::norm(n, &dp);
        let lo = pucci_minus(n, &diff, st.lambda, st.big_lambda)
            .map(|v| v.0)
            .unwrap_or(f64::NAN)
            - grad
            - st.mu * (smp.s - smp.r).max(0.0);
        let hi = pucci_plus(n, &diff, st.lambda, st.big_lambda)
            .map(|v| v.0)
            .unwrap_or(f64::NAN)
            + grad
            + st.mu * (smp.r - smp.s).max(0.0);
        let fm = op.evaluate(&smp.x, smp.r, &smp.p, &smp.m);
        let fn_ = op.evaluate(&smp.x, smp.s, &smp.q, &smp.n);
        let d = fm - fn_;
        let scale = 1.0 + fm.abs() + fn_.abs();
        if !(d >= lo - tol * scale) {
            report.violations.push(StructureViolation {
                sample: i,
                lower: true,
                amount: lo - d,
            });
        }
        if !(d <= hi + tol * scale) {
            report.violations.push(StructureViolation {
                sample: i,
                lower: false,
                amount: d - hi,
            });
        }
    }
    report
}
