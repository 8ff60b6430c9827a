//! Box-constrained concave quadratic programs and SPD solves.
//!
//! The twin-plane duals all have the form
//!
//! ```text
//! maximize  c'z - 1/2 z'Qz   subject to  0 <= z <= upper
//! ```
//!
//! with no equality constraint, so each coordinate has a closed-form clipped
//! maximizer. [`solve_box_qp`] sweeps the coordinates cyclically until the
//! projected-gradient KKT residual drops below the tolerance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Above this many variables Q is kept in factored form.
pub const DENSE_LIMIT: usize = 2000;
const DIAG_FLOOR: f64 = 1e-12;

/// The Hessian of the dual, either explicit or as `Q = R M⁻¹ Rᵀ`.
#[derive(Debug, Clone)]
pub enum QMatrix {
    Dense(DMatrix<f64>),
    /// `rows_t` is `Rᵀ` (p×k) and `solved` is `M⁻¹Rᵀ` (p×k).
    Factored {
        rows_t: DMatrix<f64>,
        solved: DMatrix<f64>,
    },
}

impl QMatrix {
    pub fn dim(&self) -> usize {
        match self {
            QMatrix::Dense(q) => q.nrows(),
            QMatrix::Factored { rows_t, .. } => rows_t.ncols(),
        }
    }

    /// Build `R M⁻¹ Rᵀ` from the constraint rows `R` (k×p) and a factored
    /// `M`. Dense when `k <= DENSE_LIMIT`.
    pub fn from_factor(rows: &DMatrix<f64>, factor: &SpdFactor) -> QMatrix {
        let rows_t = rows.transpose();
        let solved = factor.solve_mat(&rows_t);
        if rows.nrows() <= DENSE_LIMIT {
            let mut q = rows * &solved;
            q.fill_upper_triangle_with_lower_triangle();
            QMatrix::Dense(q)
        } else {
            QMatrix::Factored { rows_t, solved }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        match self {
            QMatrix::Dense(q) => q.diagonal().iter().copied().collect(),
            QMatrix::Factored { rows_t, solved } => (0..rows_t.ncols()).map(|i| rows_t.column(i).dot(&solved.column(i))).collect(),
        }
    }

    pub fn mul_vec(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            QMatrix::Dense(q) => q * z,
            QMatrix::Factored { rows_t, solved } => rows_t.tr_mul(&(solved * z)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            QMatrix::Dense(q) => q.clone(),
            QMatrix::Factored { rows_t, solved } => rows_t.tr_mul(solved),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxQp {
    pub q: QMatrix,
    pub c: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxQp {
    pub fn new(q: QMatrix, c: DVector<f64>, upper: DVector<f64>) -> Result<BoxQp> {
        let k = q.dim();
        if c.len() != k || upper.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: if c.len() != k { c.len() } else { upper.len() },
            });
        }
        if let Some(u) = upper.iter().find(|u| !(**u >= 0.0)) {
            return Err(Error::InvalidParameter(format!("upper bound {u} is negative")));
        }
        if let QMatrix::Dense(m) = &q {
            if m.ncols() != k {
                return Err(Error::Dimension { expected: k, got: m.ncols() });
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-10 * (1.0 + m.amax()) {
                return Err(Error::InvalidParameter(format!("Q is not symmetric (max |Q - Q'| = {asym:.3e})")));
            }
        }
        Ok(BoxQp { q, c, upper })
    }

    pub fn dense(q: DMatrix<f64>, c: Vec<f64>, upper: Vec<f64>) -> Result<BoxQp> {
        BoxQp::new(QMatrix::Dense(q), DVector::from_vec(c), DVector::from_vec(upper))
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// `c'z - 1/2 z'Qz`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        self.c.dot(z) - 0.5 * z.dot(&self.q.mul_vec(z))
    }

    /// Largest projected-gradient violation `|clamp(z - g, 0, u) - z|` with
    /// `g = Qz - c`.
    pub fn kkt_residual(&self, z: &DVector<f64>) -> f64 {
        let g = self.q.mul_vec(z) - &self.c;
        residual(z, &g, &self.upper)
    }
}

fn residual(z: &DVector<f64>, g: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    let mut r = 0.0f64;
    for i in 0..z.len() {
        let p = (z[i] - g[i]).clamp(0.0, upper[i]);
        r = r.max((p - z[i]).abs());
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

pub fn solve_box_qp(problem: &BoxQp, tol: f64, max_iter: usize) -> Result<QpSolution> {
    solve_box_qp_from(problem, &QpOptions { tol, max_iter }, None)
}

/// Like [`solve_box_qp`], optionally starting from `warm` (clipped into the
/// box first).
pub fn solve_box_qp_from(problem: &BoxQp, opts: &QpOptions, warm: Option<&[f64]>) -> Result<QpSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {} must be > 0", opts.tol)));
    }
    let k = problem.len();
    let mut z = DVector::zeros(k);
    if let Some(w) = warm {
        if w.len() != k {
            return Err(Error::Dimension { expected: k, got: w.len() });
        }
        for i in 0..k {
            z[i] = w[i].clamp(0.0, problem.upper[i]);
        }
    }
    if k == 0 {
        return Ok(QpSolution {
            z: Vec::new(),
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    let diag = problem.q.diagonal();
    if diag.iter().any(|&d| d < DIAG_FLOOR) {
        return projected_gradient(problem, z, opts);
    }
    match &problem.q {
        QMatrix::Dense(q) => coordinate_ascent_dense(problem, q, &diag, z, opts),
        QMatrix::Factored { rows_t, solved } => coordinate_ascent_factored(problem, rows_t, solved, &diag, z, opts),
    }
}

fn finish(problem: &BoxQp, z: DVector<f64>, g: &DVector<f64>, iterations: usize, opts: &QpOptions) -> Result<QpSolution> {
    let kkt_residual = residual(&z, g, &problem.upper);
    let objective = 0.5 * (problem.c.dot(&z) - z.dot(g));
    let sol = QpSolution {
        z: z.iter().copied().collect(),
        objective,
        kkt_residual,
        iterations,
    };
    if kkt_residual <= opts.tol {
        Ok(sol)
    } else {
        Err(Error::NotConverged { best: Box::new(sol) })
    }
}

fn coordinate_ascent_dense(problem: &BoxQp, q: &DMatrix<f64>, diag: &[f64], mut z: DVector<f64>, opts: &QpOptions) -> Result<QpSolution> {
    let k = z.len();
    let upper = &problem.upper;
    let mut g = q * &z - &problem.c;
    #[cfg(debug_assertions)]
    let mut last = 0.5 * (problem.c.dot(&z) - z.dot(&g));
    for sweep in 1..=opts.max_iter {
        for i in 0..k {
            let new = (z[i] - g[i] / diag[i]).clamp(0.0, upper[i]);
            let d = new - z[i];
            if d != 0.0 {
                z[i] = new;
                g.axpy(d, &q.column(i), 1.0);
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = 0.5 * (problem.c.dot(&z) - z.dot(&g));
            debug_assert!(obj >= last - 1e-9 * (1.0 + last.abs()), "dual objective decreased: {last} -> {obj}");
            last = obj;
        }
        if residual(&z, &g, upper) <= opts.tol {
            // certify against a freshly computed gradient
            g = q * &z - &problem.c;
            if residual(&z, &g, upper) <= opts.tol || sweep == opts.max_iter {
                return finish(problem, z, &g, sweep, opts);
            }
        }
    }
    let g = q * &z - &problem.c;
    finish(problem, z, &g, opts.max_iter, opts)
}

fn coordinate_ascent_factored(
    problem: &BoxQp,
    rows_t: &DMatrix<f64>,
    solved: &DMatrix<f64>,
    diag: &[f64],
    mut z: DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let k = z.len();
    let upper = &problem.upper;
    // v = M⁻¹Rᵀz, so (Qz)_i = R_i . v
    let mut v = solved * &z;
    for sweep in 1..=opts.max_iter {
        for i in 0..k {
            let gi = rows_t.column(i).dot(&v) - problem.c[i];
            let new = (z[i] - gi / diag[i]).clamp(0.0, upper[i]);
            let d = new - z[i];
            if d != 0.0 {
                z[i] = new;
                v.axpy(d, &solved.column(i), 1.0);
            }
        }
        let g = rows_t.tr_mul(&v) - &problem.c;
        if residual(&z, &g, upper) <= opts.tol {
            v = solved * &z;
            let g = rows_t.tr_mul(&v) - &problem.c;
            return finish(problem, z, &g, sweep, opts);
        }
    }
    let g = problem.q.mul_vec(&z) - &problem.c;
    finish(problem, z, &g, opts.max_iter, opts)
}

/// Projected gradient ascent with step `1/L`, `L` a Gershgorin bound on the
/// largest eigenvalue of Q. Used when some diagonal entry of Q is below the
/// coordinate-update floor.
fn projected_gradient(problem: &BoxQp, mut z: DVector<f64>, opts: &QpOptions) -> Result<QpSolution> {
    let dense = problem.q.to_dense();
    let lipschitz = dense.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let upper = &problem.upper;
    let mut g = &dense * &z - &problem.c;
    for it in 1..=opts.max_iter {
        for i in 0..z.len() {
            // zero-curvature coordinates go straight to the bound their
            // linear term prefers
            z[i] = if dense[(i, i)] < DIAG_FLOOR && g[i] != 0.0 {
                if g[i] < 0.0 {
                    upper[i]
                } else {
                    0.0
                }
            } else {
                (z[i] - step * g[i]).clamp(0.0, upper[i])
            };
        }
        g = &dense * &z - &problem.c;
        if residual(&z, &g, upper) <= opts.tol {
            return finish(problem, z, &g, it, opts);
        }
    }
    finish(problem, z, &g, opts.max_iter, opts)
}

#[derive(Debug, Clone)]
pub struct SpdSystem {
    pub m: DMatrix<f64>,
    pub ridge: f64,
    pub rhs: DVector<f64>,
}

/// Cholesky factor of `M + ridge I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, ridge: f64) -> Result<SpdFactor> {
        if !m.is_square() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += ridge;
        }
        let dim = a.nrows();
        Cholesky::new(a).map(|chol| SpdFactor { chol }).ok_or(Error::NotPositiveDefinite { dim })
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// Solve `(M + ridge I) x = rhs` through a Cholesky factorization.
pub fn spd_solve(system: &SpdSystem) -> Result<DVector<f64>> {
    if system.rhs.len() != system.m.nrows() {
        return Err(Error::Dimension {
            expected: system.m.nrows(),
            got: system.rhs.len(),
        });
    }
    Ok(SpdFactor::new(&system.m, system.ridge)?.solve_vec(&system.rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qp(q: &[f64], c: &[f64], u: &[f64]) -> BoxQp {
        let k = c.len();
        BoxQp::dense(DMatrix::from_row_slice(k, k, q), c.to_vec(), u.to_vec()).unwrap()
    }

    #[test]
    fn scalar_interior_optimum() {
        let s = solve_box_qp(&qp(&[1.0], &[1.0], &[10.0]), 1e-12, 100).unwrap();
        assert_eq!(s.z, vec![1.0]);
        assert_eq!(s.objective, 0.5);
    }

    #[test]
    fn scalar_active_upper_bound() {
        let s = solve_box_qp(&qp(&[1.0], &[5.0], &[2.0]), 1e-12, 100).unwrap();
        assert_eq!(s.z, vec![2.0]);
        assert_eq!(s.objective, 8.0);
    }

    /// Exhaustive 0.001-step grid over [0,1]^2.
    fn grid_argmax_2d(q: &DMatrix<f64>, c: &[f64]) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in 0..=1000 {
            for b in 0..=1000 {
                let (x, y) = (a as f64 / 1000.0, b as f64 / 1000.0);
                let obj = c[0] * x + c[1] * y - 0.5 * (q[(0, 0)] * x * x + 2.0 * q[(0, 1)] * x * y + q[(1, 1)] * y * y);
                if obj > best.0 {
                    best = (obj, x, y);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn two_dim_matches_grid_oracle() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (gx, gy) = grid_argmax_2d(&q, &[1.0, 1.0]);
        let s = solve_box_qp(&BoxQp::dense(q, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(), 1e-9, 1000).unwrap();
        assert!((s.z[0] - gx).abs() <= 2e-3 && (s.z[1] - gy).abs() <= 2e-3, "{:?} vs ({gx}, {gy})", s.z);
        // closed form: 2x + 0.5y = 1, 0.5x + y = 1 -> x = 2/7, y = 6/7
        assert!((s.z[0] - 2.0 / 7.0).abs() < 1e-8 && (s.z[1] - 6.0 / 7.0).abs() < 1e-8);
    }

    #[test]
    fn zero_diagonal_uses_fallback() {
        // second variable has no curvature and a positive linear term
        let s = solve_box_qp(&qp(&[1.0, 0.0, 0.0, 0.0], &[0.5, 1.0], &[1.0, 3.0]), 1e-10, 1000).unwrap();
        assert!((s.z[0] - 0.5).abs() < 1e-9);
        assert_eq!(s.z[1], 3.0);
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0]);
        let p = BoxQp::dense(q, vec![1.0, 1.0], vec![100.0, 100.0]).unwrap();
        match solve_box_qp(&p, 1e-12, 2) {
            Err(Error::NotConverged { best }) => {
                assert_eq!(best.iterations, 2);
                assert!(best.kkt_residual > 1e-12);
                assert!(best.z.iter().zip(&[100.0, 100.0]).all(|(z, u)| *z >= 0.0 && z <= u));
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(BoxQp::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]), vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(BoxQp::dense(DMatrix::identity(2, 2), vec![0.0; 2], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn factored_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 5;
        let k = 12;
        let rows = DMatrix::from_fn(k, p, |_, _| rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(8, p, |_, _| rng.gen_range(-1.0..1.0));
        let factor = SpdFactor::new(&a.tr_mul(&a), 0.5).unwrap();
        let rows_t = rows.transpose();
        let solved = factor.solve_mat(&rows_t);
        let fact = QMatrix::Factored { rows_t, solved };
        let dense = QMatrix::from_factor(&rows, &factor);
        let c = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..2.0));
        let u = DVector::from_element(k, 0.7);
        let opts = QpOptions { tol: 1e-10, max_iter: 100_000 };
        let s1 = solve_box_qp_from(&BoxQp::new(fact, c.clone(), u.clone()).unwrap(), &opts, None).unwrap();
        let s2 = solve_box_qp_from(&BoxQp::new(dense, c, u).unwrap(), &opts, None).unwrap();
        assert!((s1.objective - s2.objective).abs() < 1e-9);
    }

    #[test]
    fn warm_start_is_clipped_and_converges() {
        let p = qp(&[2.0, 0.5, 0.5, 1.0], &[1.0, 1.0], &[1.0, 1.0]);
        let s = solve_box_qp_from(&p, &QpOptions { tol: 1e-10, max_iter: 1000 }, Some(&[5.0, -3.0])).unwrap();
        assert!((s.z[0] - 2.0 / 7.0).abs() < 1e-8);
    }

    #[test]
    fn spd_identity_and_scalar() {
        let x = spd_solve(&SpdSystem {
            m: DMatrix::identity(3, 3),
            ridge: 0.0,
            rhs: DVector::from_vec(vec![1.0, 0.0, 0.0]),
        })
        .unwrap();
        assert_eq!(x, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let x = spd_solve(&SpdSystem {
            m: DMatrix::zeros(1, 1),
            ridge: 2.0,
            rhs: DVector::from_vec(vec![4.0]),
        })
        .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spd_matches_lu_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let m = g.tr_mul(&g);
        let rhs = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let x = spd_solve(&SpdSystem {
            m: m.clone(),
            ridge: 1e-3,
            rhs: rhs.clone(),
        })
        .unwrap();
        let a = &m + DMatrix::identity(6, 6) * 1e-3;
        assert!((&a * &x - &rhs).norm() <= 1e-8 * (1.0 + rhs.norm()));
        let lu = a.lu().solve(&rhs).unwrap();
        assert!((x - lu).amax() < 1e-9);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdFactor::new(&m, 0.0), Err(Error::NotPositiveDefinite { dim: 2 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        /// Iterates stay inside the box and raising one upper bound never
        /// lowers the optimal value.
        #[test]
        fn box_feasibility_and_monotone_bounds(seed in 0u64..100_000, k in 1usize..7, bump in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(k + 2, k, |_, _| rng.gen_range(-1.0..1.0));
            let q = a.tr_mul(&a) + DMatrix::identity(k, k) * 0.05;
            let q = (&q + q.transpose()) * 0.5;
            let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let u: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.5)).collect();
            let s = solve_box_qp(&BoxQp::dense(q.clone(), c.clone(), u.clone()).unwrap(), 1e-10, 100_000).unwrap();
            for (z, ub) in s.z.iter().zip(&u) {
                prop_assert!(*z >= 0.0 && z <= ub);
            }
            let mut u2 = u.clone();
            u2[0] += bump;
            let s2 = solve_box_qp(&BoxQp::dense(q, c, u2).unwrap(), 1e-10, 100_000).unwrap();
            prop_assert!(s2.objective >= s.objective - 1e-9);
        }
    }
}
