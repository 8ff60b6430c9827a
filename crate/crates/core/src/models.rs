//! UTSVM and IFUTSVM-ID training and the twin-plane decision rule.
//!
//! Every plane problem has the same shape once `b` is folded into the
//! coefficient vector `v = (w; b)`:
//!
//! ```text
//! min  1/2 |A v|^2 + ridge/2 |v|^2 + sum_i upper_i * xi_i
//! s.t. R_i v >= r_i - xi_i,  xi >= 0
//! ```
//!
//! `A` holds the augmented rows of the class the plane should pass close to,
//! `R` the signed augmented constraint rows. Its dual is the box QP
//! `max r'z - 1/2 z' R H⁻¹ R' z, 0 <= z <= upper` with `H = A'A + ridge I`,
//! and the plane is `v = H⁻¹ R' z`. In kernel mode the rows are kernel rows
//! against the reference matrix `D = [X1; X2]` instead of raw features.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, Kernel, KernelSpec, Linear};
use crate::membership::{assign_scores, FuzzyParams, ScoreWeights};
use crate::qp::{solve_box_qp_from, BoxQp, QMatrix, QpOptions, QpSolution, SpdFactor};
use crate::sampling::{build_plan, generate_universum, SamplingPlan};

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Utsvm,
    IfutsvmId,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Utsvm => "UTSVM",
            ModelKind::IfutsvmId => "IFUTSVM-ID",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Linear,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub cu: f64,
    pub epsilon: f64,
    /// `None` trains the linear model.
    pub kernel: Option<KernelSpec>,
    /// UTSVM ridge; `None` means `1e-7 * trace(A'A) / p`.
    pub delta: Option<f64>,
    pub fuzzy: FuzzyParams,
    pub seed: u64,
    /// Use `sqrt(w'Kw)` instead of `|w|` as the plane norm in kernel mode.
    #[serde(default)]
    pub rkhs_norm: bool,
    /// Replace the fuzzy scores by ones; the unweighted ablation.
    #[serde(default)]
    pub uniform_scores: bool,
}

impl Hyperparams {
    /// The tied setting used in experiments: `c2 = c1`, `c4 = c3`.
    pub fn tied(c1: f64, c3: f64, cu: f64, epsilon: f64, kernel: Option<KernelSpec>) -> Hyperparams {
        Hyperparams {
            c1,
            c2: c1,
            c3,
            c4: c3,
            cu,
            epsilon,
            kernel,
            delta: None,
            fuzzy: FuzzyParams::default(),
            seed: 0,
            rkhs_norm: false,
            uniform_scores: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Hyperparams {
        self.seed = seed;
        self
    }

    /// `cu` may be 0 (universum switched off); the other penalties must be
    /// strictly positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
        }
        if !(self.cu >= 0.0 && self.cu.is_finite()) {
            return Err(Error::InvalidParameter(format!("cu = {} must be >= 0", self.cu)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!("epsilon = {} must lie in [0, 1)", self.epsilon)));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("delta = {d} must be > 0")));
            }
        }
        if let Some(k) = self.kernel {
            KernelSpec::new(k.width)?;
        }
        self.fuzzy.validate()
    }

    pub fn mode(&self) -> Mode {
        if self.kernel.is_some() {
            Mode::Kernel
        } else {
            Mode::Linear
        }
    }

    /// Kernel used by the fuzzy scheme: the model kernel, or the plain inner
    /// product in linear mode.
    pub fn score_kernel(&self) -> Box<dyn Kernel> {
        match self.kernel {
            Some(k) => Box::new(k),
            None => Box::new(Linear),
        }
    }

    /// Sample scores for `train`: fuzzy scores in the score kernel's space,
    /// or all ones with `uniform_scores`.
    pub fn scores(&self, train: &Dataset) -> Result<ScoreWeights> {
        if self.uniform_scores {
            Ok(ScoreWeights::ones(train))
        } else {
            assign_scores(train, self.score_kernel().as_ref(), &self.fuzzy)
        }
    }
}

/// Append a column of ones.
pub fn augment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    x.clone().insert_column(n, 1.0)
}

fn stack(blocks: &[(&DMatrix<f64>, f64)], p: usize) -> DMatrix<f64> {
    let rows = blocks.iter().map(|(b, _)| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, p);
    let mut at = 0;
    for (b, sign) in blocks {
        out.rows_mut(at, b.nrows()).copy_from(&(*b * *sign));
        at += b.nrows();
    }
    out
}

/// A plane problem with its factorization done; only bounds and right-hand
/// sides remain free.
#[derive(Debug, Clone)]
pub struct PlaneSystem {
    quad: DMatrix<f64>,
    rows: DMatrix<f64>,
    n_margin: usize,
    ridge: f64,
    factor: SpdFactor,
    q: QMatrix,
}

#[derive(Debug, Clone)]
pub struct PlaneFit {
    /// `(w; b)`.
    pub coef: DVector<f64>,
    pub dual: QpSolution,
    pub converged: bool,
    pub primal_objective: f64,
}

impl PlaneSystem {
    /// `rows` holds `n_margin` margin constraints (right-hand side 1) followed
    /// by universum constraints (right-hand side ε - 1).
    pub fn new(quad: DMatrix<f64>, rows: DMatrix<f64>, n_margin: usize, ridge: f64) -> Result<PlaneSystem> {
        if rows.ncols() != quad.ncols() {
            return Err(Error::Dimension {
                expected: quad.ncols(),
                got: rows.ncols(),
            });
        }
        let factor = SpdFactor::new(&quad.tr_mul(&quad), ridge)?;
        let q = QMatrix::from_factor(&rows, &factor);
        Ok(PlaneSystem {
            quad,
            rows,
            n_margin,
            ridge,
            factor,
            q,
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_margin(&self) -> usize {
        self.n_margin
    }

    pub fn rhs(&self, epsilon: f64) -> DVector<f64> {
        DVector::from_fn(self.rows.nrows(), |i, _| if i < self.n_margin { 1.0 } else { epsilon - 1.0 })
    }

    pub fn upper(&self, margin_upper: &[f64], cu: f64) -> Result<DVector<f64>> {
        if margin_upper.len() != self.n_margin {
            return Err(Error::Dimension {
                expected: self.n_margin,
                got: margin_upper.len(),
            });
        }
        Ok(DVector::from_fn(self.rows.nrows(), |i, _| if i < self.n_margin { margin_upper[i] } else { cu }))
    }

    /// `1/2 |Av|^2 + ridge/2 |v|^2 + sum upper_i max(0, r_i - R_i v)`.
    pub fn primal_objective(&self, v: &DVector<f64>, upper: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
        let fit = 0.5 * (&self.quad * v).norm_squared() + 0.5 * self.ridge * v.norm_squared();
        let lhs = &self.rows * v;
        let hinge: f64 = (0..lhs.len()).map(|i| upper[i] * (rhs[i] - lhs[i]).max(0.0)).sum();
        fit + hinge
    }

    /// Solve the dual. With `lenient`, a non-converged solve returns its best
    /// iterate with `converged = false` instead of an error.
    pub fn solve(&self, margin_upper: &[f64], cu: f64, epsilon: f64, opts: &QpOptions, warm: Option<&[f64]>, lenient: bool) -> Result<PlaneFit> {
        let upper = self.upper(margin_upper, cu)?;
        let rhs = self.rhs(epsilon);
        let problem = BoxQp::new(self.q.clone(), rhs.clone(), upper.clone())?;
        let (dual, converged) = match solve_box_qp_from(&problem, opts, warm) {
            Ok(s) => (s, true),
            Err(Error::NotConverged { best }) if lenient => (*best, false),
            Err(e) => return Err(e),
        };
        let z = DVector::from_column_slice(&dual.z);
        let coef = self.factor.solve_vec(&self.rows.tr_mul(&z));
        let primal_objective = self.primal_objective(&coef, &upper, &rhs);
        Ok(PlaneFit {
            coef,
            dual,
            converged,
            primal_objective,
        })
    }
}

/// Multipliers and solver diagnostics of a fit. For UTSVM, `alpha`/`beta`
/// are the margin and universum multipliers of plane 1 and `eta`/`theta`
/// those of plane 2.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
    pub kkt_residual: [f64; 2],
    pub iterations: [usize; 2],
    pub converged: [bool; 2],
    pub dual_objective: [f64; 2],
    pub primal_objective: [f64; 2],
    /// The balanced-data fallback ran without universum terms.
    pub balanced_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinModel {
    pub kind: ModelKind,
    pub mode: Mode,
    pub hyperparams: Hyperparams,
    pub n_features: usize,
    pub w1: DVector<f64>,
    pub b1: f64,
    pub w2: DVector<f64>,
    pub b2: f64,
    /// `D = [X1; X2]`, kernel mode only.
    pub reference: Option<DMatrix<f64>>,
    pub dual_report: DualReport,
    norms: [f64; 2],
}

impl TwinModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ModelKind,
        hyperparams: Hyperparams,
        n_features: usize,
        plane1: &DVector<f64>,
        plane2: &DVector<f64>,
        reference: Option<DMatrix<f64>>,
        dual_report: DualReport,
    ) -> Result<TwinModel> {
        let mode = hyperparams.mode();
        let p = plane1.len();
        let expect = match (&reference, mode) {
            (Some(d), Mode::Kernel) => d.nrows() + 1,
            (None, Mode::Linear) => n_features + 1,
            _ => return Err(Error::ModelFormat("reference matrix must be present exactly in kernel mode".into())),
        };
        if p != expect || plane2.len() != expect {
            return Err(Error::Dimension { expected: expect, got: p });
        }
        let mut model = TwinModel {
            kind,
            mode,
            hyperparams,
            n_features,
            w1: plane1.rows(0, p - 1).into_owned(),
            b1: plane1[p - 1],
            w2: plane2.rows(0, p - 1).into_owned(),
            b2: plane2[p - 1],
            reference,
            dual_report,
            norms: [0.0; 2],
        };
        model.norms = model.plane_norms();
        for (i, &norm) in model.norms.iter().enumerate() {
            if !(norm >= DEGENERATE_NORM) {
                return Err(Error::DegeneratePlane { plane: i as u8 + 1, norm });
            }
        }
        Ok(model)
    }

    fn plane_norms(&self) -> [f64; 2] {
        match (&self.reference, self.hyperparams.kernel, self.hyperparams.rkhs_norm) {
            (Some(d), Some(k), true) => {
                let gram = crate::kernel::self_kernel_matrix(d, &k);
                let rk = |w: &DVector<f64>| w.dot(&(&gram * w)).max(0.0).sqrt();
                [rk(&self.w1), rk(&self.w2)]
            }
            _ => [self.w1.norm(), self.w2.norm()],
        }
    }

    pub fn plane_norm(&self) -> [f64; 2] {
        self.norms
    }

    /// Representation of the rows of `x` the planes act on: `x` itself or
    /// `K(x, D)`.
    pub fn represent(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        match (&self.reference, self.hyperparams.kernel) {
            (Some(d), Some(k)) => kernel_matrix(x, d, &k),
            _ => Ok(x.clone()),
        }
    }

    /// `(d1, d2)` for every row of `x`.
    pub fn decision_distances_batch(&self, x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        let r = self.represent(x)?;
        let f1 = &r * &self.w1;
        let f2 = &r * &self.w2;
        Ok((0..r.nrows())
            .map(|i| ((f1[i] + self.b1).abs() / self.norms[0], (f2[i] + self.b2).abs() / self.norms[1]))
            .collect())
    }

    pub fn decision_distances(&self, x: &[f64]) -> Result<(f64, f64)> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.decision_distances_batch(&row)?[0])
    }

    pub fn predict(&self, x: &[f64]) -> Result<i8> {
        let (d1, d2) = self.decision_distances(x)?;
        Ok(nearer_plane(d1, d2))
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<i8>> {
        Ok(self.decision_distances_batch(x)?.into_iter().map(|(d1, d2)| nearer_plane(d1, d2)).collect())
    }
}

/// +1 when plane 1 is at least as close.
pub fn nearer_plane(d1: f64, d2: f64) -> i8 {
    if d1 <= d2 {
        1
    } else {
        -1
    }
}

/// Labels from precomputed representations; the CV loop uses this to avoid
/// building a model per grid point.
pub fn classify(rep: &DMatrix<f64>, plane1: &DVector<f64>, plane2: &DVector<f64>) -> Result<Vec<i8>> {
    let p = plane1.len();
    let (w1, w2) = (plane1.rows(0, p - 1), plane2.rows(0, p - 1));
    let (n1, n2) = (w1.norm(), w2.norm());
    if !(n1 >= DEGENERATE_NORM) {
        return Err(Error::DegeneratePlane { plane: 1, norm: n1 });
    }
    if !(n2 >= DEGENERATE_NORM) {
        return Err(Error::DegeneratePlane { plane: 2, norm: n2 });
    }
    let f1 = rep * w1;
    let f2 = rep * w2;
    Ok((0..rep.nrows())
        .map(|i| nearer_plane((f1[i] + plane1[p - 1]).abs() / n1, (f2[i] + plane2[p - 1]).abs() / n2))
        .collect())
}

/// Augmented class blocks of a training set in the representation the planes
/// use.
#[derive(Debug, Clone)]
pub struct Basis {
    /// `[X1; X2]` in kernel mode.
    pub reference: Option<DMatrix<f64>>,
    pub kernel: Option<KernelSpec>,
    /// Augmented positive rows, `[K(X1, D) e]` or `[X1 e]`.
    pub pos: DMatrix<f64>,
    /// Augmented negative rows.
    pub neg: DMatrix<f64>,
}

impl Basis {
    pub fn new(train: &Dataset, kernel: Option<KernelSpec>) -> Result<Basis> {
        let x1 = train.positives();
        let x2 = train.negatives();
        match kernel {
            None => Ok(Basis {
                reference: None,
                kernel,
                pos: augment(&x1),
                neg: augment(&x2),
            }),
            Some(k) => {
                let mut d = DMatrix::zeros(train.len(), train.n_features());
                d.rows_mut(0, x1.nrows()).copy_from(&x1);
                d.rows_mut(x1.nrows(), x2.nrows()).copy_from(&x2);
                let kd = crate::kernel::self_kernel_matrix(&d, &k);
                let pos = augment(&kd.rows(0, x1.nrows()).into_owned());
                let neg = augment(&kd.rows(x1.nrows(), x2.nrows()).into_owned());
                Ok(Basis {
                    reference: Some(d),
                    kernel,
                    pos,
                    neg,
                })
            }
        }
    }

    /// Representation of arbitrary rows, not augmented.
    pub fn represent(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.reference, self.kernel) {
            (Some(d), Some(k)) => kernel_matrix(x, d, &k),
            _ => Ok(x.clone()),
        }
    }

    pub fn represent_augmented(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(augment(&self.represent(x)?))
    }

    pub fn dim(&self) -> usize {
        self.pos.ncols()
    }
}

/// IFUTSVM-ID blocks for one training set, scores, and sampling plan.
#[derive(Debug, Clone)]
pub struct IfutsvmBlocks {
    pub basis: Basis,
    /// Margin bounds before scaling: `s2` on the undersampled negatives.
    pub s2_star: Vec<f64>,
    pub s1: Vec<f64>,
    /// `-[X2* e]` followed by `[U* e]`.
    rows1: DMatrix<f64>,
    /// `[X1 e]` followed by `[U e]`.
    rows2: DMatrix<f64>,
    n_margin1: usize,
    n_margin2: usize,
    pub balanced: bool,
}

impl IfutsvmBlocks {
    pub fn new(train: &Dataset, kernel: Option<KernelSpec>, scores: &ScoreWeights, plan: &SamplingPlan) -> Result<IfutsvmBlocks> {
        if scores.s1.len() != train.m1() || scores.s2.len() != train.m2() {
            return Err(Error::Dimension {
                expected: train.len(),
                got: scores.s1.len() + scores.s2.len(),
            });
        }
        let basis = Basis::new(train, kernel)?;
        let p = basis.dim();
        let neg_star = basis.neg.select_rows(&plan.x2_star_indices);
        let (rows1, rows2) = if plan.balanced {
            (stack(&[(&neg_star, -1.0)], p), basis.pos.clone())
        } else {
            let u_star = basis.represent_augmented(&plan.universum_star)?;
            let u = basis.represent_augmented(&plan.universum.rows)?;
            (stack(&[(&neg_star, -1.0), (&u_star, 1.0)], p), stack(&[(&basis.pos, 1.0), (&u, 1.0)], p))
        };
        Ok(IfutsvmBlocks {
            s2_star: plan.x2_star_indices.iter().map(|&i| scores.s2[i]).collect(),
            s1: scores.s1.clone(),
            n_margin1: neg_star.nrows(),
            n_margin2: basis.pos.nrows(),
            rows1,
            rows2,
            basis,
            balanced: plan.balanced,
        })
    }

    /// Factor both planes for the regularizers `c3`, `c4`.
    pub fn systems(&self, c3: f64, c4: f64) -> Result<(PlaneSystem, PlaneSystem)> {
        let p1 = PlaneSystem::new(self.basis.pos.clone(), self.rows1.clone(), self.n_margin1, c3)?;
        let p2 = PlaneSystem::new(self.basis.neg.clone(), self.rows2.clone(), self.n_margin2, c4)?;
        Ok((p1, p2))
    }

    pub fn margin_bounds(&self, c1: f64, c2: f64) -> (Vec<f64>, Vec<f64>) {
        (self.s2_star.iter().map(|s| c1 * s).collect(), self.s1.iter().map(|s| c2 * s).collect())
    }
}

/// Scores and sampling plan behind an IFUTSVM-ID fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub scores: ScoreWeights,
    pub plan: SamplingPlan,
}

pub fn fit_ifutsvm_id(train: &Dataset, hp: &Hyperparams) -> Result<TwinModel> {
    Ok(fit_ifutsvm_id_detailed(train, hp, &QpOptions::default())?.0)
}

pub fn fit_ifutsvm_id_detailed(train: &Dataset, hp: &Hyperparams, opts: &QpOptions) -> Result<(TwinModel, FitDiagnostics)> {
    hp.validate()?;
    let scores = hp.scores(train)?;
    let plan = build_plan(train, hp.seed)?;
    let model = fit_ifutsvm_id_with(train, hp, &scores, &plan, opts)?;
    Ok((model, FitDiagnostics { scores, plan }))
}

/// IFUTSVM-ID with caller-supplied scores and sampling plan.
pub fn fit_ifutsvm_id_with(train: &Dataset, hp: &Hyperparams, scores: &ScoreWeights, plan: &SamplingPlan, opts: &QpOptions) -> Result<TwinModel> {
    ifutsvm_id_inner(train, hp, scores, plan, opts, false)
}

fn ifutsvm_id_inner(train: &Dataset, hp: &Hyperparams, scores: &ScoreWeights, plan: &SamplingPlan, opts: &QpOptions, lenient: bool) -> Result<TwinModel> {
    hp.validate()?;
    if train.m1() < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 minority samples, found {}", train.m1())));
    }
    let blocks = IfutsvmBlocks::new(train, hp.kernel, scores, plan)?;
    let (sys1, sys2) = blocks.systems(hp.c3, hp.c4)?;
    let (u1, u2) = blocks.margin_bounds(hp.c1, hp.c2);
    let fit1 = sys1.solve(&u1, hp.cu, hp.epsilon, opts, None, lenient)?;
    let fit2 = sys2.solve(&u2, hp.cu, hp.epsilon, opts, None, lenient)?;
    let report = dual_report(&fit1, sys1.n_margin(), &fit2, sys2.n_margin(), blocks.balanced);
    TwinModel::new(
        ModelKind::IfutsvmId,
        *hp,
        train.n_features(),
        &fit1.coef,
        &fit2.coef,
        blocks.basis.reference,
        report,
    )
}

fn dual_report(fit1: &PlaneFit, n1: usize, fit2: &PlaneFit, n2: usize, balanced: bool) -> DualReport {
    DualReport {
        alpha: fit1.dual.z[..n1].to_vec(),
        beta: fit1.dual.z[n1..].to_vec(),
        eta: fit2.dual.z[..n2].to_vec(),
        theta: fit2.dual.z[n2..].to_vec(),
        kkt_residual: [fit1.dual.kkt_residual, fit2.dual.kkt_residual],
        iterations: [fit1.dual.iterations, fit2.dual.iterations],
        converged: [fit1.converged, fit2.converged],
        dual_objective: [fit1.dual.objective, fit2.dual.objective],
        primal_objective: [fit1.primal_objective, fit2.primal_objective],
        balanced_fallback: balanced,
    }
}

/// UTSVM blocks: plane 1 fits `X1` and pushes `X2` and `U` away, plane 2
/// the mirror image, both with the ridge `delta`.
#[derive(Debug, Clone)]
pub struct UtsvmBlocks {
    pub basis: Basis,
    rows1: DMatrix<f64>,
    rows2: DMatrix<f64>,
}

impl UtsvmBlocks {
    pub fn new(train: &Dataset, kernel: Option<KernelSpec>, universum: &DMatrix<f64>) -> Result<UtsvmBlocks> {
        if universum.nrows() > 0 && universum.ncols() != train.n_features() {
            return Err(Error::Dimension {
                expected: train.n_features(),
                got: universum.ncols(),
            });
        }
        let basis = Basis::new(train, kernel)?;
        let p = basis.dim();
        let u = if universum.nrows() > 0 {
            basis.represent_augmented(universum)?
        } else {
            DMatrix::zeros(0, p)
        };
        Ok(UtsvmBlocks {
            rows1: stack(&[(&basis.neg, -1.0), (&u, 1.0)], p),
            rows2: stack(&[(&basis.pos, 1.0), (&u, -1.0)], p),
            basis,
        })
    }

    /// `1e-7 * trace(A'A) / p` for the given quadratic block.
    pub fn default_delta(quad: &DMatrix<f64>) -> f64 {
        1e-7 * quad.norm_squared() / quad.ncols() as f64
    }

    pub fn systems(&self, delta: Option<f64>) -> Result<(PlaneSystem, PlaneSystem)> {
        let d1 = delta.unwrap_or_else(|| Self::default_delta(&self.basis.pos));
        let d2 = delta.unwrap_or_else(|| Self::default_delta(&self.basis.neg));
        Ok((
            PlaneSystem::new(self.basis.pos.clone(), self.rows1.clone(), self.basis.neg.nrows(), d1)?,
            PlaneSystem::new(self.basis.neg.clone(), self.rows2.clone(), self.basis.pos.nrows(), d2)?,
        ))
    }
}

pub fn fit_utsvm(train: &Dataset, universum: &DMatrix<f64>, hp: &Hyperparams) -> Result<TwinModel> {
    fit_utsvm_with(train, universum, hp, &QpOptions::default())
}

pub fn fit_utsvm_with(train: &Dataset, universum: &DMatrix<f64>, hp: &Hyperparams, opts: &QpOptions) -> Result<TwinModel> {
    utsvm_inner(train, universum, hp, opts, false)
}

fn utsvm_inner(train: &Dataset, universum: &DMatrix<f64>, hp: &Hyperparams, opts: &QpOptions, lenient: bool) -> Result<TwinModel> {
    hp.validate()?;
    if train.m1() == 0 || train.m2() == 0 {
        return Err(Error::InvalidDataset("UTSVM needs both classes".into()));
    }
    let blocks = UtsvmBlocks::new(train, hp.kernel, universum)?;
    let (sys1, sys2) = blocks.systems(hp.delta)?;
    let fit1 = sys1.solve(&vec![hp.c1; train.m2()], hp.cu, hp.epsilon, opts, None, lenient)?;
    let fit2 = sys2.solve(&vec![hp.c2; train.m1()], hp.cu, hp.epsilon, opts, None, lenient)?;
    let report = dual_report(&fit1, sys1.n_margin(), &fit2, sys2.n_margin(), universum.nrows() == 0);
    TwinModel::new(
        ModelKind::Utsvm,
        *hp,
        train.n_features(),
        &fit1.coef,
        &fit2.coef,
        blocks.basis.reference,
        report,
    )
}

/// Universum for UTSVM: `m2 - m1` midpoints, or `⌈m1/2⌉` on balanced data.
pub fn utsvm_universum(train: &Dataset, seed: u64) -> Result<DMatrix<f64>> {
    let count = if train.m2() > train.m1() {
        train.m2() - train.m1()
    } else {
        train.m1().div_ceil(2)
    };
    Ok(generate_universum(train, count, seed)?.rows)
}

/// Train either model from a dataset and hyperparameters alone.
pub fn fit(kind: ModelKind, train: &Dataset, hp: &Hyperparams, opts: &QpOptions) -> Result<TwinModel> {
    match kind {
        ModelKind::Utsvm => fit_utsvm_with(train, &utsvm_universum(train, hp.seed)?, hp, opts),
        ModelKind::IfutsvmId => Ok(fit_ifutsvm_id_detailed(train, hp, opts)?.0),
    }
}

/// As `fit`, but a dual that exhausts `max_iter` keeps its best iterate;
/// `dual_report.converged` says which planes did.
pub fn fit_lenient(kind: ModelKind, train: &Dataset, hp: &Hyperparams, opts: &QpOptions) -> Result<TwinModel> {
    hp.validate()?;
    match kind {
        ModelKind::Utsvm => utsvm_inner(train, &utsvm_universum(train, hp.seed)?, hp, opts, true),
        ModelKind::IfutsvmId => {
            let scores = hp.scores(train)?;
            let plan = build_plan(train, hp.seed)?;
            ifutsvm_id_inner(train, hp, &scores, &plan, opts, true)
        }
    }
}

const MAGIC: &[u8; 8] = b"TWINSVM1";

/// Header of a serialized model; the binary file stores it as JSON between
/// the magic bytes and the coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub mode: Mode,
    pub n: usize,
    /// Reference rows (0 in linear mode).
    pub m: usize,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelJson {
    #[serde(flatten)]
    header: ModelHeader,
    w1: Vec<f64>,
    b1: f64,
    w2: Vec<f64>,
    b2: f64,
    /// Row-major `m x n`.
    reference: Vec<f64>,
}

impl TwinModel {
    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            kind: self.kind,
            mode: self.mode,
            n: self.n_features,
            m: self.reference.as_ref().map_or(0, |d| d.nrows()),
            hyperparams: self.hyperparams,
            seed: self.hyperparams.seed,
        }
    }

    fn reference_row_major(&self) -> Vec<f64> {
        self.reference.as_ref().map_or_else(Vec::new, |d| d.transpose().as_slice().to_vec())
    }

    fn from_parts(h: ModelHeader, w1: Vec<f64>, b1: f64, w2: Vec<f64>, b2: f64, reference: Vec<f64>) -> Result<TwinModel> {
        if h.mode != h.hyperparams.mode() {
            return Err(Error::ModelFormat("mode does not match the kernel setting".into()));
        }
        let reference = match h.mode {
            Mode::Linear => None,
            Mode::Kernel => {
                if reference.len() != h.m * h.n {
                    return Err(Error::ModelFormat(format!("reference has {} values, expected {}", reference.len(), h.m * h.n)));
                }
                Some(DMatrix::from_row_slice(h.m, h.n, &reference))
            }
        };
        let mut v1 = w1;
        v1.push(b1);
        let mut v2 = w2;
        v2.push(b2);
        TwinModel::new(
            h.kind,
            h.hyperparams,
            h.n,
            &DVector::from_vec(v1),
            &DVector::from_vec(v2),
            reference,
            DualReport::default(),
        )
        .map_err(|e| match e {
            Error::Dimension { expected, got } => Error::ModelFormat(format!("coefficient length {got}, expected {expected}")),
            other => other,
        })
    }

    /// Magic, little-endian u32 header length, JSON header, then `w1, b1, w2,
    /// b2` and the row-major reference matrix as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| Error::ModelFormat(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let mut put = |v: f64| out.write_all(&v.to_le_bytes());
        for &v in self.w1.iter() {
            put(v)?;
        }
        put(self.b1)?;
        for &v in self.w2.iter() {
            put(v)?;
        }
        put(self.b2)?;
        for v in self.reference_row_major() {
            put(v)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<TwinModel> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if buf.len() < 12 || &buf[..8] != MAGIC {
            return Err(bad("not a model file"));
        }
        let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let body = buf.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let h: ModelHeader = serde_json::from_slice(body).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let floats = &buf[12 + hlen..];
        if floats.len() % 8 != 0 {
            return Err(bad("coefficient block is not a whole number of f64 values"));
        }
        let vals: Vec<f64> = floats.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let p = if h.mode == Mode::Kernel { h.m } else { h.n };
        if vals.len() != 2 * (p + 1) + h.m * h.n {
            return Err(bad("coefficient block has the wrong length"));
        }
        TwinModel::from_parts(
            h,
            vals[..p].to_vec(),
            vals[p],
            vals[p + 1..2 * p + 1].to_vec(),
            vals[2 * p + 1],
            vals[2 * p + 2..].to_vec(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let m = ModelJson {
            header: self.header(),
            w1: self.w1.iter().copied().collect(),
            b1: self.b1,
            w2: self.w2.iter().copied().collect(),
            b2: self.b2,
            reference: self.reference_row_major(),
        };
        serde_json::to_string_pretty(&m).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<TwinModel> {
        let m: ModelJson = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        TwinModel::from_parts(m.header, m.w1, m.b1, m.w2, m.b2, m.reference)
    }
}
