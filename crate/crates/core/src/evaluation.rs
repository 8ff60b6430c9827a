//! Metrics, cross-validated grid search, and rank statistics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_folds, Dataset};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::models::{classify, utsvm_universum, Hyperparams, IfutsvmBlocks, ModelKind, PlaneSystem, UtsvmBlocks};
use crate::qp::QpOptions;
use crate::rng;
use crate::sampling::build_plan;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    /// Positive class is +1.
    pub fn from_labels(truth: &[i8], predicted: &[i8]) -> Result<ConfusionMatrix> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t > 0, p > 0) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fn_ += 1,
                (false, true) => cm.fp += 1,
                (false, false) => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        precision: ratio(cm.tp, cm.tp + cm.fp),
    }
}

pub fn accuracy(truth: &[i8], predicted: &[i8]) -> f64 {
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Hyperparameter lattice with `c2 = c1` and `c4 = c3`. An empty `width`
/// axis means linear mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c1: Vec<f64>,
    pub c3: Vec<f64>,
    pub cu: Vec<f64>,
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub width: Vec<f64>,
}

fn powers(base: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| base.powi(e)).collect()
}

impl Grid {
    /// `c ∈ {1e-5..1e5}`, `ε ∈ {0.1, 0.3, 0.5, 0.6}`, `μ ∈ {2^-5..2^5}`.
    pub fn full() -> Grid {
        Grid {
            c1: powers(10.0, -5, 5),
            c3: powers(10.0, -5, 5),
            cu: powers(10.0, -5, 5),
            epsilon: vec![0.1, 0.3, 0.5, 0.6],
            width: powers(2.0, -5, 5),
        }
    }

    pub fn point(hp: &Hyperparams) -> Grid {
        Grid {
            c1: vec![hp.c1],
            c3: vec![hp.c3],
            cu: vec![hp.cu],
            epsilon: vec![hp.epsilon],
            width: hp.kernel.map(|k| vec![k.width]).unwrap_or_default(),
        }
    }

    /// Axes sorted ascending with duplicates removed; lattice order and the
    /// tie-break both follow this normal form.
    pub fn normalized(&self) -> Result<Grid> {
        let norm = |name: &str, v: &[f64]| -> Result<Vec<f64>> {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("grid axis {name} has a non-finite value")));
            }
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            Ok(v)
        };
        let g = Grid {
            c1: norm("c1", &self.c1)?,
            c3: norm("c3", &self.c3)?,
            cu: norm("cu", &self.cu)?,
            epsilon: norm("epsilon", &self.epsilon)?,
            width: norm("width", &self.width)?,
        };
        if g.c1.is_empty() || g.c3.is_empty() || g.cu.is_empty() || g.epsilon.is_empty() {
            return Err(Error::Config("every grid axis except width needs at least one value".into()));
        }
        Ok(g)
    }

    fn widths(&self) -> Vec<Option<f64>> {
        if self.width.is_empty() {
            vec![None]
        } else {
            self.width.iter().map(|&w| Some(w)).collect()
        }
    }

    pub fn len(&self) -> usize {
        self.c1.len() * self.c3.len() * self.cu.len() * self.epsilon.len() * self.width.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub c1: f64,
    pub c3: f64,
    pub cu: f64,
    pub epsilon: f64,
    pub width: Option<f64>,
    pub mean_accuracy: f64,
    pub fold_accuracy: Vec<f64>,
    /// Folds where a dual stopped at the sweep limit; its best iterate was
    /// used.
    pub unconverged: usize,
    /// Folds where training failed outright; they count as accuracy 0.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub kind: ModelKind,
    pub k: usize,
    pub seed: u64,
    /// Lattice order.
    pub rows: Vec<CvRow>,
    pub best: usize,
}

impl CvTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c1,c3,cu,epsilon,width,mean_accuracy,unconverged,failed\n");
        for r in &self.rows {
            let w = r.width.map(|w| w.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.c1, r.c3, r.cu, r.epsilon, w, r.mean_accuracy, r.unconverged, r.failed
            ));
        }
        s
    }
}

#[derive(Clone, Copy)]
struct Outcome {
    acc: f64,
    unconverged: bool,
    failed: bool,
}

const FAILED: Outcome = Outcome {
    acc: 0.0,
    unconverged: false,
    failed: true,
};

/// Lattice index with `c1` outermost and the kernel width innermost.
fn lattice_index(g: &Grid, i1: usize, i3: usize, iu: usize, ie: usize, iw: usize) -> usize {
    (((i1 * g.c3.len() + i3) * g.cu.len() + iu) * g.epsilon.len() + ie) * g.width.len().max(1) + iw
}

/// k-fold stratified CV over the lattice. `template` supplies everything the
/// lattice does not vary (fuzzy parameters, δ, norm flag); its seed is
/// replaced per fold. Returns the winner, ties going to the earliest lattice
/// point.
pub fn grid_search_cv(
    kind: ModelKind,
    train: &Dataset,
    grid: &Grid,
    k: usize,
    seed: u64,
    template: &Hyperparams,
    opts: &QpOptions,
) -> Result<(Hyperparams, CvTable)> {
    let grid = grid.normalized()?;
    let folds = stratified_folds(train, k, seed)?;
    let widths = grid.widths();
    let tasks: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..widths.len()).map(move |w| (f, w))).collect();
    let per_task: Vec<Vec<(usize, Outcome)>> = tasks
        .par_iter()
        .map(|&(f, iw)| {
            let (tr, va) = &folds[f];
            let fold_train = train.subset(tr);
            let fold_val = train.subset(va);
            let fold_seed = rng::derive(seed, &[f as u64]);
            let kernel = widths[iw].map(KernelSpec::new).transpose();
            let result = kernel.and_then(|kernel| match kind {
                ModelKind::IfutsvmId => cv_ifutsvm(&grid, iw, &fold_train, &fold_val, kernel, fold_seed, template, opts),
                ModelKind::Utsvm => cv_utsvm(&grid, iw, &fold_train, &fold_val, kernel, fold_seed, template, opts),
            });
            result.unwrap_or_else(|_| {
                let mut all = Vec::new();
                for_each_point(&grid, |i1, i3, iu, ie| all.push((lattice_index(&grid, i1, i3, iu, ie, iw), FAILED)));
                all
            })
        })
        .collect();

    let n = grid.len();
    let mut table: Vec<Vec<Outcome>> = vec![Vec::with_capacity(k); n];
    // tasks are fold-major, so each lattice point collects its folds in order
    for outcomes in per_task {
        debug_assert_eq!(outcomes.len() * grid.width.len().max(1), n);
        for (idx, o) in outcomes {
            table[idx].push(o);
        }
    }
    let mut rows = Vec::with_capacity(n);
    for (i1, &c1) in grid.c1.iter().enumerate() {
        for (i3, &c3) in grid.c3.iter().enumerate() {
            for (iu, &cu) in grid.cu.iter().enumerate() {
                for (ie, &epsilon) in grid.epsilon.iter().enumerate() {
                    for (iw, width) in widths.iter().enumerate() {
                        let outs = &table[lattice_index(&grid, i1, i3, iu, ie, iw)];
                        let fold_accuracy: Vec<f64> = outs.iter().map(|o| o.acc).collect();
                        rows.push(CvRow {
                            c1,
                            c3,
                            cu,
                            epsilon,
                            width: *width,
                            mean_accuracy: fold_accuracy.iter().sum::<f64>() / k as f64,
                            fold_accuracy,
                            unconverged: outs.iter().filter(|o| o.unconverged).count(),
                            failed: outs.iter().filter(|o| o.failed).count(),
                        });
                    }
                }
            }
        }
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_accuracy > rows[best].mean_accuracy {
            best = i;
        }
    }
    let b = &rows[best];
    let mut hp = *template;
    hp.c1 = b.c1;
    hp.c2 = b.c1;
    hp.c3 = b.c3;
    hp.c4 = b.c3;
    hp.cu = b.cu;
    hp.epsilon = b.epsilon;
    hp.kernel = b.width.map(|w| KernelSpec { width: w });
    Ok((hp, CvTable { kind, k, seed, rows, best }))
}

fn for_each_point(g: &Grid, mut f: impl FnMut(usize, usize, usize, usize)) {
    for i1 in 0..g.c1.len() {
        for i3 in 0..g.c3.len() {
            for iu in 0..g.cu.len() {
                for ie in 0..g.epsilon.len() {
                    f(i1, i3, iu, ie);
                }
            }
        }
    }
}

/// Solve both planes for one `(c1, cu, ε)` and score the validation rows.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    sys: &(PlaneSystem, PlaneSystem),
    bounds: (Vec<f64>, Vec<f64>),
    cu: f64,
    epsilon: f64,
    opts: &QpOptions,
    warm: &mut [Option<Vec<f64>>; 2],
    val_rep: &DMatrix<f64>,
    val_labels: &[i8],
) -> Outcome {
    let f1 = sys.0.solve(&bounds.0, cu, epsilon, opts, warm[0].as_deref(), true);
    let f2 = sys.1.solve(&bounds.1, cu, epsilon, opts, warm[1].as_deref(), true);
    match (f1, f2) {
        (Ok(f1), Ok(f2)) => {
            let unconverged = !(f1.converged && f2.converged);
            let out = match classify(val_rep, &f1.coef, &f2.coef) {
                Ok(pred) => Outcome {
                    acc: accuracy(val_labels, &pred),
                    unconverged,
                    failed: false,
                },
                Err(_) => FAILED,
            };
            warm[0] = Some(f1.dual.z);
            warm[1] = Some(f2.dual.z);
            out
        }
        _ => FAILED,
    }
}

#[allow(clippy::too_many_arguments)]
fn cv_ifutsvm(
    grid: &Grid,
    iw: usize,
    train: &Dataset,
    val: &Dataset,
    kernel: Option<KernelSpec>,
    seed: u64,
    template: &Hyperparams,
    opts: &QpOptions,
) -> Result<Vec<(usize, Outcome)>> {
    let scores = Hyperparams { kernel, ..*template }.scores(train)?;
    let plan = build_plan(train, seed)?;
    let blocks = IfutsvmBlocks::new(train, kernel, &scores, &plan)?;
    let val_rep = blocks.basis.represent(val.features())?;
    let mut out = Vec::with_capacity(grid.len() / grid.width.len().max(1));
    for (i3, &c3) in grid.c3.iter().enumerate() {
        let sys = blocks.systems(c3, c3);
        let mut warm = [None, None];
        for (i1, &c1) in grid.c1.iter().enumerate() {
            for (iu, &cu) in grid.cu.iter().enumerate() {
                for (ie, &eps) in grid.epsilon.iter().enumerate() {
                    let o = match &sys {
                        Ok(sys) => evaluate(sys, blocks.margin_bounds(c1, c1), cu, eps, opts, &mut warm, &val_rep, val.labels()),
                        Err(_) => FAILED,
                    };
                    out.push((lattice_index(grid, i1, i3, iu, ie, iw), o));
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cv_utsvm(
    grid: &Grid,
    iw: usize,
    train: &Dataset,
    val: &Dataset,
    kernel: Option<KernelSpec>,
    seed: u64,
    template: &Hyperparams,
    opts: &QpOptions,
) -> Result<Vec<(usize, Outcome)>> {
    let universum = utsvm_universum(train, seed)?;
    let blocks = UtsvmBlocks::new(train, kernel, &universum)?;
    let val_rep = blocks.basis.represent(val.features())?;
    // c3 does not enter UTSVM; every c3 shares one solve.
    let sys = blocks.systems(template.delta);
    let mut warm = [None, None];
    let mut out = Vec::with_capacity(grid.len() / grid.width.len().max(1));
    for (i1, &c1) in grid.c1.iter().enumerate() {
        for (iu, &cu) in grid.cu.iter().enumerate() {
            for (ie, &eps) in grid.epsilon.iter().enumerate() {
                let o = match &sys {
                    Ok(sys) => evaluate(
                        sys,
                        (vec![c1; train.m2()], vec![c1; train.m1()]),
                        cu,
                        eps,
                        opts,
                        &mut warm,
                        &val_rep,
                        val.labels(),
                    ),
                    Err(_) => FAILED,
                };
                for i3 in 0..grid.c3.len() {
                    out.push((lattice_index(grid, i1, i3, iu, ie, iw), o));
                }
            }
        }
    }
    Ok(out)
}

/// Accuracy matrix (datasets × models) with per-row ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub accuracies: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
}

impl RankTable {
    pub fn to_csv(&self, models: &[String], datasets: &[String]) -> String {
        let mut s = String::from("dataset");
        for m in models {
            s.push_str(&format!(",{m}_acc,{m}_rank"));
        }
        s.push('\n');
        for (i, row) in self.accuracies.iter().enumerate() {
            s.push_str(datasets.get(i).map_or("", String::as_str));
            for (a, r) in row.iter().zip(&self.ranks[i]) {
                s.push_str(&format!(",{a},{r}"));
            }
            s.push('\n');
        }
        s.push_str("average_rank");
        for r in &self.average_ranks {
            s.push_str(&format!(",,{r}"));
        }
        s.push('\n');
        s
    }
}

/// Rank 1 is the highest accuracy; tied entries share the mean of the ranks
/// they span.
pub fn average_ranks(accuracies: &[Vec<f64>]) -> Result<RankTable> {
    let n = accuracies.len();
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one dataset".into()));
    }
    let p = accuracies[0].len();
    if p < 2 {
        return Err(Error::InvalidParameter("need at least two models".into()));
    }
    let mut ranks = Vec::with_capacity(n);
    for (i, row) in accuracies.iter().enumerate() {
        if row.len() != p {
            return Err(Error::Dimension { expected: p, got: row.len() });
        }
        if row.iter().any(|a| a.is_nan()) {
            return Err(Error::InvalidParameter(format!("NaN accuracy in row {i}")));
        }
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let mut r = vec![0.0; p];
        let mut start = 0;
        while start < p {
            let mut end = start + 1;
            while end < p && row[order[end]] == row[order[start]] {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let shared = (start + 1 + end) as f64 / 2.0;
            for &j in &order[start..end] {
                r[j] = shared;
            }
            start = end;
        }
        ranks.push(r);
    }
    let average_ranks = (0..p).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    Ok(RankTable {
        accuracies: accuracies.to_vec(),
        ranks,
        average_ranks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub chi_sq: f64,
    /// `None` when `chi_sq >= N(p - 1)`.
    pub f_stat: Option<f64>,
}

pub fn friedman(average_ranks: &[f64], n: usize, p: usize) -> Result<Friedman> {
    if p < 2 || n < 2 {
        return Err(Error::InvalidParameter(format!("Friedman test needs p >= 2 and N >= 2, got p = {p}, N = {n}")));
    }
    if average_ranks.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: average_ranks.len(),
        });
    }
    let pf = p as f64;
    if average_ranks.iter().any(|&r| !(1.0..=pf).contains(&r)) {
        return Err(Error::InvalidParameter(format!("average ranks must lie in [1, {p}]")));
    }
    let nf = n as f64;
    let sum_sq: f64 = average_ranks.iter().map(|r| r * r).sum();
    let chi_sq = 12.0 * nf / (pf * (pf + 1.0)) * (sum_sq - pf * (pf + 1.0).powi(2) / 4.0);
    let den = nf * (pf - 1.0) - chi_sq;
    let f_stat = (den > 0.0).then(|| (nf - 1.0) * chi_sq / den);
    Ok(Friedman { chi_sq, f_stat })
}

/// `q_alpha * sqrt(p(p+1) / (6N))`.
pub fn nemenyi_cd(p: usize, n: usize, q_alpha: f64) -> f64 {
    q_alpha * ((p * (p + 1)) as f64 / (6.0 * n as f64)).sqrt()
}

/// Two-tailed Nemenyi critical values at α = 0.05 for p = 2..=10 models.
pub const Q_ALPHA_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];

pub fn q_alpha_05(p: usize) -> Option<f64> {
    p.checked_sub(2).and_then(|i| Q_ALPHA_05.get(i)).copied()
}

/// The statistics block of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub n_datasets: usize,
    pub n_models: usize,
    pub average_ranks: Vec<f64>,
    pub chi_sq: f64,
    pub f_stat: Option<f64>,
    pub f_critical: Option<f64>,
    pub rejects_null: Option<bool>,
    pub q_alpha: f64,
    pub cd: f64,
    /// `|R_i - R_j|`.
    pub rank_differences: Vec<Vec<f64>>,
    /// `|R_i - R_j| > C.D.`
    pub significant: Vec<Vec<bool>>,
}

pub fn statistics(table: &RankTable, q_alpha: f64, f_critical: Option<f64>) -> Result<Statistics> {
    let n = table.ranks.len();
    let p = table.average_ranks.len();
    let fr = friedman(&table.average_ranks, n, p)?;
    let cd = nemenyi_cd(p, n, q_alpha);
    let r = &table.average_ranks;
    let rank_differences: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| (r[i] - r[j]).abs()).collect()).collect();
    let significant = rank_differences.iter().map(|row| row.iter().map(|&d| d > cd).collect()).collect();
    Ok(Statistics {
        n_datasets: n,
        n_models: p,
        average_ranks: r.clone(),
        chi_sq: fr.chi_sq,
        f_stat: fr.f_stat,
        f_critical,
        rejects_null: fr.f_stat.zip(f_critical).map(|(f, c)| f > c),
        q_alpha,
        cd,
        rank_differences,
        significant,
    })
}
