//! Scalar fields with optional derivatives (data, boundary values, exact solutions).

use std::sync::Arc;

use crate::linalg::dense::{Mat3, Vec3, ZERO};

type Value = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;
type Gradient = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;
type Hessian = Arc<dyn Fn(&Vec3) -> Mat3 + Send + Sync>;

/// A scalar function of position, optionally with analytic first and second
/// derivatives. Missing derivatives fall back to central differences.
#[derive(Clone)]
pub struct Field {
    value: Value,
    gradient: Option<Gradient>,
    hessian: Option<Hessian>,
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field")
            .field("gradient", &self.gradient.is_some())
            .field("hessian", &self.hessian.is_some())
            .finish()
    }
}

impl Field {
    pub fn new(value: impl Fn(&Vec3) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
            .with_gradient(|_| [0.0; 3])
            .with_hessian(|_| ZERO)
    }

    pub fn with_gradient(mut self, g: impl Fn(&Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&Vec3) -> Mat3 + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match &self.gradient {
            Some(g) => g(x),
            None => {
                let h = 1e-5;
                let mut g = [0.0; 3];
                for (d, gd) in g.iter_mut().enumerate() {
                    let (mut p, mut m) = (*x, *x);
                    p[d] += h;
                    m[d] -= h;
                    *gd = (self.value(&p) - self.value(&m)) / (2.0 * h);
                }
                g
            }
        }
    }

    pub fn hessian(&self, x: &Vec3) -> Mat3 {
        match &self.hessian {
            Some(h) => h(x),
            None => {
                let h = 1e-4;
                let mut out = ZERO;
                for i in 0..3 {
                    let (mut p, mut m) = (*x, *x);
                    p[i] += h;
                    m[i] -= h;
                    let (gp, gm) = (self.gradient(&p), self.gradient(&m));
                    for j in 0..3 {
                        out[i][j] = (gp[j] - gm[j]) / (2.0 * h);
                    }
                }
                for i in 0..3 {
                    for j in i + 1..3 {
                        let s = 0.5 * (out[i][j] + out[j][i]);
                        out[i][j] = s;
                        out[j][i] = s;
                    }
                }
                out
            }
        }
    }
}
