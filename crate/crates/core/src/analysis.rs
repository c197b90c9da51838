//! Error norms, convergence histories and experimental orders of convergence.

use std::fmt::Write as _;

use crate::function::Field;
use crate::space::Space;

/// Relative errors of a discrete function against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub max_error: f64,
    pub ln_error: f64,
    pub w1n_error: f64,
}

fn relative(err: f64, norm: f64) -> f64 {
    if norm < 1e-14 {
        err
    } else {
        err / norm
    }
}

/// L∞ error by lattice sampling of order `k + 3` in every cell; Lⁿ and W^{1,n}
/// errors by volume quadrature with broken gradients. All errors are divided
/// by the same norm of `exact` unless that norm is below `1e−14`.
pub fn error_norms(space: &Space, v: &[f64], exact: &Field) -> ErrorNorms {
    let n = space.dim() as i32;
    let samples = space.cell_samples(space.degree() + 3);
    let (mut emax, mut umax) = (0.0f64, 0.0f64);
    let (mut eln, mut uln, mut egrad, mut ugrad) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..space.mesh().num_cells() {
        let coef = space.local(v, c);
        let e = space
            .eval_ref(c, &samples)
            .expect("lattice points lie in the reference cell");
        for (q, x) in e.x.iter().enumerate() {
            let u = exact.value(x);
            emax = emax.max((e.field(q, &coef).0 - u).abs());
            umax = umax.max(u.abs());
        }
        let e = space.eval_volume(c);
        for (q, x) in e.x.iter().enumerate() {
            let (val, g, _) = e.field(q, &coef);
            let u = exact.value(x);
            let du = exact.gradient(x);
            let diff: f64 = (0..n as usize)
                .map(|i| (g[i] - du[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let size: f64 = (0..n as usize).map(|i| du[i].powi(2)).sum::<f64>().sqrt();
            eln += e.w[q] * (val - u).abs().powi(n);
            uln += e.w[q] * u.abs().powi(n);
            egrad += e.w[q] * diff.powi(n);
            ugrad += e.w[q] * size.powi(n);
        }
    }
    let root = |x: f64| x.powf(1.0 / n as f64);
    ErrorNorms {
        max_error: relative(emax, umax),
        ln_error: relative(root(eln), root(uln)),
        w1n_error: relative(root(eln + egrad), root(uln + ugrad)),
    }
}

/// One row of a convergence history.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelRecord {
    pub level: usize,
    pub ndof: usize,
    pub max_error: Option<f64>,
    pub ln_error: Option<f64>,
    pub w1n_error: Option<f64>,
    /// `Φ^{1/n}` at the final policy iterate.
    pub energy: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct RunMeta {
    pub preset: String,
    pub degree: usize,
    pub sigma: f64,
    pub tau: f64,
    pub s: f64,
    pub theta: f64,
    pub adaptive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    MaxError,
    LnError,
    W1nError,
    Energy,
    Eta,
}

impl Column {
    pub const ALL: [Column; 5] = [
        Column::MaxError,
        Column::LnError,
        Column::W1nError,
        Column::Energy,
        Column::Eta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::MaxError => "max_error",
            Column::LnError => "Ln_error",
            Column::W1nError => "W1n_error",
            Column::Energy => "energy",
            Column::Eta => "eta",
        }
    }

    fn get(self, r: &LevelRecord) -> Option<f64> {
        match self {
            Column::MaxError => r.max_error,
            Column::LnError => r.ln_error,
            Column::W1nError => r.w1n_error,
            Column::Energy => r.energy,
            Column::Eta => r.eta,
        }
    }
}

pub const CSV_HEADER: &str = "level,ndof,max_error,Ln_error,W1n_error,energy,eta";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub meta: RunMeta,
    pub rows: Vec<LevelRecord>,
}

impl RunHistory {
    pub fn new(meta: RunMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: LevelRecord) {
        self.rows.push(row);
    }

    pub fn ndofs(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.ndof).collect()
    }

    pub fn column(&self, col: Column) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| col.get(r)).collect()
    }

    /// Experimental orders of convergence of `col` with the default tail window.
    pub fn eoc(&self, col: Column) -> Eoc {
        eoc(&self.ndofs(), &self.column(col), DEFAULT_TAIL)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:.10e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.level,
                r.ndof,
                fmt(r.max_error),
                fmt(r.ln_error),
                fmt(r.w1n_error),
                fmt(r.energy),
                fmt(r.eta)
            );
        }
        out
    }
}

pub const DEFAULT_TAIL: usize = 6;

/// Per-step slopes and least-squares tail slope of `−log(err)` against `log(ndof)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eoc {
    /// Slope between consecutive rows; `None` if either entry is missing or not positive.
    pub steps: Vec<Option<f64>>,
    pub tail: Option<f64>,
    /// Rows left out of the tail fit because of missing or non-positive entries.
    pub skipped: usize,
}

pub fn eoc(ndof: &[usize], values: &[Option<f64>], window: usize) -> Eoc {
    let valid = |i: usize| {
        values[i]
            .filter(|v| *v > 0.0 && v.is_finite())
            .map(|v| ((ndof[i] as f64).ln(), v.ln()))
    };
    let steps = (1..values.len())
        .map(|i| match (valid(i - 1), valid(i)) {
            (Some((n0, e0)), Some((n1, e1))) if n1 != n0 => Some(-(e1 - e0) / (n1 - n0)),
            _ => None,
        })
        .collect();
    let start = values.len().saturating_sub(window);
    let pts: Vec<(f64, f64)> = (start..values.len()).filter_map(valid).collect();
    let skipped = values.len() - start - pts.len();
    if skipped > 0 {
        log::info!("eoc: {skipped} rows without positive entries skipped");
    }
    Eoc {
        steps,
        tail: least_squares_slope(&pts).map(|s| -s),
        skipped,
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::diag;
    use crate::mesh::{presets, Mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn quadratic() -> Field {
        Field::new(|x| x[0] * x[0] + x[1] * x[1])
            .with_gradient(|x| [2.0 * x[0], 2.0 * x[1], 0.0])
            .with_hessian(|_| diag(2, &[2.0, 2.0]))
    }

    #[test]
    fn exact_member_has_zero_error() {
        let u = quadratic();
        let dg = Space::dg(
            Arc::new(presets::unit_square_triangles().refine_uniform()),
            2,
        )
        .unwrap();
        let bfs = Space::bfs(Arc::new(Mesh::rect_grid(2, 3, [0.0, 1.0], [0.0, 1.0]))).unwrap();
        for space in [dg, bfs] {
            let e = error_norms(&space, &space.interpolate(&u), &u);
            assert!(
                e.max_error <= 1e-12 && e.ln_error <= 1e-12 && e.w1n_error <= 1e-12,
                "{e:?}"
            );
        }
    }

    #[test]
    fn constant_shift_gives_hand_computed_max_error() {
        let u = quadratic();
        let space = Space::dg(Arc::new(presets::unit_square_triangles()), 2).unwrap();
        let v: Vec<f64> = space.interpolate(&u).iter().map(|c| c + 0.1).collect();
        let e = error_norms(&space, &v, &u);
        assert!((e.max_error - 0.05).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn zero_function_has_unit_relative_error() {
        let u = quadratic();
        let space = Space::dg(Arc::new(presets::unit_square_triangles()), 3).unwrap();
        let e = error_norms(&space, &vec![0.0; space.ndof()], &u);
        for x in [e.max_error, e.ln_error, e.w1n_error] {
            assert!((x - 1.0).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn quadrature_ln_norm_matches_monte_carlo() {
        let space = Space::dg(
            Arc::new(presets::unit_square_triangles().refine_uniform()),
            2,
        )
        .unwrap();
        let mesh = space.mesh().clone();
        let zero = Field::constant(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // sample points once, cache the basis values
        let samples = 1_000_000;
        let mut cache: Vec<(usize, Vec<f64>)> = Vec::with_capacity(samples);
        for _ in 0..samples {
            let x = [rng.random::<f64>(), rng.random::<f64>(), 0.0];
            let c = mesh.locate(&x).expect("inside the square");
            cache.push((c, space.eval_phys(c, &[x]).val));
        }
        for _ in 0..20 {
            let v: Vec<f64> = (0..space.ndof())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let quad = error_norms(&space, &v, &zero);
            let mc: f64 = cache
                .iter()
                .map(|(c, vals)| {
                    let coef = space.local(&v, *c);
                    coef.iter()
                        .zip(vals)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .powi(2)
                })
                .sum::<f64>()
                / samples as f64;
            let mc = mc.sqrt();
            // |Ω| = 1 so the absolute Lⁿ norm is bounded by the max norm
            assert!(
                (quad.ln_error - mc).abs() <= 0.05 * mc,
                "{} vs {mc}",
                quad.ln_error
            );
            assert!(quad.ln_error <= quad.max_error * (1.0 + 1e-12));
        }
    }

    #[test]
    fn eoc_of_two_rows() {
        let e = eoc(&[100, 400], &[Some(0.1), Some(0.05)], 6);
        assert!((e.steps[0].unwrap() - 0.5).abs() < 1e-14);
        assert!((e.tail.unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn eoc_of_constant_column_is_zero() {
        let e = eoc(&[10, 20, 40, 80], &[Some(0.3); 4], 6);
        assert!(e.tail.unwrap().abs() < 1e-14);
        assert!(e.steps.iter().all(|s| s.unwrap().abs() < 1e-14));
    }

    #[test]
    fn eoc_of_synthetic_power_law() {
        for (n, alpha) in [(2usize, 1.0f64), (3, 2.0), (2, 0.4)] {
            let hs: Vec<f64> = (0..9).map(|j| 0.5f64.powi(j)).collect();
            let ndof: Vec<usize> = hs
                .iter()
                .map(|h| (7.0 * h.powi(-(n as i32))).round() as usize)
                .collect();
            let ndof_f: Vec<f64> = ndof.iter().map(|&d| d as f64).collect();
            // exact power law in ndof so that rounding of ndof does not matter
            let errs: Vec<Option<f64>> = ndof_f
                .iter()
                .map(|d| Some(3.0 * d.powf(-alpha / n as f64)))
                .collect();
            let e = eoc(&ndof, &errs, 6);
            assert!((e.tail.unwrap() - alpha / n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn eoc_skips_missing_rows() {
        let e = eoc(&[10, 40, 160], &[Some(1.0), Some(0.0), Some(0.25)], 6);
        assert_eq!(e.skipped, 1);
        assert!(e.steps.iter().all(|s| s.is_none()));
        assert!((e.tail.unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn paper_uniform_table_slope() {
        // relative max errors of the uniform bicubic run, ndof 36 … 16900
        let ndof = [36, 100, 324, 1156, 4356, 16900];
        let err = [
            8.6172868857682508e-02,
            5.4043462259472715e-02,
            3.3667772972124456e-02,
            2.3685108517135289e-02,
            1.6703076470093746e-02,
            1.1849159658476521e-02,
        ];
        let e = eoc(&ndof, &err.map(Some), 6);
        assert!((e.tail.unwrap() - 0.32).abs() < 0.02, "{e:?}");
    }

    #[test]
    fn csv_header_and_empty_fields() {
        let mut h = RunHistory::new(RunMeta::default());
        h.push(LevelRecord {
            level: 0,
            ndof: 12,
            energy: Some(0.5),
            eta: Some(0.25),
            ..Default::default()
        });
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(
            lines.next(),
            Some("0,12,,,,5.0000000000e-1,2.5000000000e-1")
        );
    }
}
