//! Intuitionistic fuzzy sample weights.
//!
//! Each training sample gets a membership degree from its kernel-space
//! distance to its own class center, a non-membership degree from the share
//! of opposite-label samples in its neighborhood, and a score combining the
//! two. The scores become per-sample upper bounds on the dual variables, so a
//! sample with score 0 drops out of training.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{self_kernel_matrix, ClassCenter, Kernel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzyParams {
    /// Membership smoothing η. `None` means `1e-4 * (r + 1)` per class.
    pub eta: Option<f64>,
    /// Neighborhood radius for the non-membership count. `None` means the
    /// median pairwise kernel-space distance of the training set.
    pub rho: Option<f64>,
}

impl FuzzyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("rho", self.rho)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    /// Scores of the positive samples, in dataset order.
    pub s1: Vec<f64>,
    /// Scores of the negative samples, in dataset order.
    pub s2: Vec<f64>,
    /// Per-sample membership ϑ, dataset order.
    pub membership: Vec<f64>,
    /// Per-sample non-membership σ, dataset order.
    pub nonmembership: Vec<f64>,
    /// Per-sample score s, dataset order.
    pub score: Vec<f64>,
    /// Resolved η for the positive and negative class.
    pub eta: [f64; 2],
    pub rho: f64,
}

impl ScoreWeights {
    /// All scores equal to one; the unweighted ablation.
    pub fn ones(ds: &Dataset) -> ScoreWeights {
        ScoreWeights {
            s1: vec![1.0; ds.m1()],
            s2: vec![1.0; ds.m2()],
            membership: vec![1.0; ds.len()],
            nonmembership: vec![0.0; ds.len()],
            score: vec![1.0; ds.len()],
            eta: [f64::NAN; 2],
            rho: f64::NAN,
        }
    }
}

/// Membership degrees and the η used for each class.
pub fn membership(ds: &Dataset, kernel: &dyn Kernel, params: &FuzzyParams) -> Result<(Vec<f64>, [f64; 2])> {
    params.validate()?;
    if ds.m1() == 0 || ds.m2() == 0 {
        return Err(Error::InvalidDataset("membership needs both classes".into()));
    }
    let mut theta = vec![0.0; ds.len()];
    let mut etas = [0.0; 2];
    for (slot, idx) in [ds.positive_indices(), ds.negative_indices()].into_iter().enumerate() {
        let rows = ds.features().select_rows(&idx);
        let center = ClassCenter::new(&rows, kernel)?;
        let dist = center.member_distances();
        let r = dist.iter().cloned().fold(0.0, f64::max);
        let eta = params.eta.unwrap_or(1e-4 * (r + 1.0));
        etas[slot] = eta;
        for (&i, d) in idx.iter().zip(dist) {
            theta[i] = 1.0 - d / (r + eta);
        }
    }
    Ok((theta, etas))
}

/// Kernel-space distances between all pairs of training samples.
pub fn pairwise_distances(features: &DMatrix<f64>, kernel: &dyn Kernel) -> DMatrix<f64> {
    let k = self_kernel_matrix(features, kernel);
    let m = k.nrows();
    DMatrix::from_fn(m, m, |i, j| (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0).sqrt())
}

/// Median of the strictly-upper-triangular entries.
pub fn median_pairwise_distance(dist: &DMatrix<f64>) -> f64 {
    let m = dist.nrows();
    let mut v: Vec<f64> = (0..m).flat_map(|j| (0..j).map(move |i| (i, j))).map(|(i, j)| dist[(i, j)]).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Non-membership `σ_i = (1 - ϑ_i) μ_i`, where `μ_i` is the fraction of
/// opposite-label samples among all samples within closed distance `rho` of
/// `x_i` (itself included).
pub fn nonmembership(ds: &Dataset, dist: &DMatrix<f64>, rho: f64, theta: &[f64]) -> Vec<f64> {
    let y = ds.labels();
    (0..ds.len())
        .map(|i| {
            let mut all = 0usize;
            let mut hetero = 0usize;
            for j in 0..ds.len() {
                if dist[(i, j)] <= rho {
                    all += 1;
                    if y[j] != y[i] {
                        hetero += 1;
                    }
                }
            }
            // all >= 1 because dist[(i, i)] == 0
            let mu = hetero as f64 / all as f64;
            (1.0 - theta[i]) * mu
        })
        .collect()
}

/// Intuitionistic fuzzy score of one sample.
pub fn score(theta: f64, sigma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) || sigma < 0.0 || sigma > 1.0 - theta {
        return Err(Error::InvalidParameter(format!(
            "score needs 0 <= theta <= 1 and 0 <= sigma <= 1 - theta, got ({theta}, {sigma})"
        )));
    }
    Ok(if sigma == 0.0 {
        theta
    } else if theta <= sigma {
        0.0
    } else {
        (1.0 - sigma) / (2.0 - theta - sigma)
    })
}

/// Membership, non-membership, and score for every sample, computed in the
/// feature space of `kernel`.
pub fn assign_scores(ds: &Dataset, kernel: &dyn Kernel, params: &FuzzyParams) -> Result<ScoreWeights> {
    let (theta, eta) = membership(ds, kernel, params)?;
    let dist = pairwise_distances(ds.features(), kernel);
    let rho = params.rho.unwrap_or_else(|| median_pairwise_distance(&dist));
    let sigma = nonmembership(ds, &dist, rho, &theta);
    let score = theta.iter().zip(&sigma).map(|(&t, &s)| score(t, s)).collect::<Result<Vec<f64>>>()?;
    let pick = |y: i8| -> Vec<f64> { (0..ds.len()).filter(|&i| ds.labels()[i] == y).map(|i| score[i]).collect() };
    Ok(ScoreWeights {
        s1: pick(1),
        s2: pick(-1),
        membership: theta,
        nonmembership: sigma,
        score,
        eta,
        rho,
    })
}
