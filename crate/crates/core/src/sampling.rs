//! Majority undersampling and universum construction.
//!
//! The plan for a training set holds `X₂*` (m1 rows drawn from the negative
//! class), the universum `U` (m2 - m1 midpoints of random positive/negative
//! pairs) and the reduced universum `U*` (⌈m1/2⌉ rows of `U`). Sub-seeds for
//! the three draws are separate ChaCha streams of the master seed.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Universum rows plus the `(positive, negative)` pair each one averages.
/// Pair indices are positions within `ds.positive_indices()` /
/// `ds.negative_indices()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Universum {
    pub rows: DMatrix<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl Universum {
    pub fn empty(n: usize) -> Universum {
        Universum {
            rows: DMatrix::zeros(0, n),
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub x2_star: DMatrix<f64>,
    /// Positions within the negative class.
    pub x2_star_indices: Vec<usize>,
    /// `U`, exactly `max(m2 - m1, 0)` rows.
    pub universum: Universum,
    /// Midpoints generated on top of `U` when `m2 - m1 < ⌈m1/2⌉`, so that
    /// `U*` can still have `⌈m1/2⌉` rows.
    pub extra: Universum,
    /// `U*`.
    pub universum_star: DMatrix<f64>,
    /// Positions of the `U*` rows within `U` followed by `extra`.
    pub universum_star_indices: Vec<usize>,
    /// `m1 == m2`: no universum, the classifier runs without universum terms.
    pub balanced: bool,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn u(&self) -> usize {
        self.universum.len()
    }

    pub fn g(&self) -> usize {
        self.universum_star_indices.len()
    }
}

/// Draw `m1` distinct negative rows uniformly without replacement.
pub fn undersample_majority(ds: &Dataset, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if ds.m1() > ds.m2() {
        return Err(Error::InvalidDataset(format!(
            "minority convention violated: m1 = {} > m2 = {}",
            ds.m1(),
            ds.m2()
        )));
    }
    if ds.m1() == 0 {
        return Err(Error::InvalidDataset("no positive samples".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_UNDERSAMPLE);
    let picks = rand::seq::index::sample(&mut rng, ds.m2(), ds.m1()).into_vec();
    let neg = ds.negative_indices();
    let rows: Vec<usize> = picks.iter().map(|&p| neg[p]).collect();
    Ok((ds.features().select_rows(&rows), picks))
}

/// Random averaging: each row is `(x_p + x_n) / 2` for a uniformly drawn
/// positive `x_p` and negative `x_n`.
pub fn generate_universum(ds: &Dataset, count: usize, seed: u64) -> Result<Universum> {
    if ds.m1() == 0 || ds.m2() == 0 {
        return Err(Error::InvalidDataset("universum needs both classes".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_UNIVERSUM);
    Ok(draw_midpoints(ds, count, &mut rng))
}

fn draw_midpoints(ds: &Dataset, count: usize, rng: &mut impl Rng) -> Universum {
    let pos = ds.positive_indices();
    let neg = ds.negative_indices();
    let x = ds.features();
    let mut rows = DMatrix::zeros(count, ds.n_features());
    let mut pairs = Vec::with_capacity(count);
    for r in 0..count {
        let p = rng.gen_range(0..pos.len());
        let n = rng.gen_range(0..neg.len());
        for j in 0..ds.n_features() {
            rows[(r, j)] = 0.5 * (x[(pos[p], j)] + x[(neg[n], j)]);
        }
        pairs.push((p, n));
    }
    Universum { rows, pairs }
}

/// `g` distinct rows of `universum`, uniform without replacement.
pub fn reduce_universum(universum: &DMatrix<f64>, g: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if g > universum.nrows() {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {g} rows from a universum of {}",
            universum.nrows()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_REDUCE);
    let idx = rand::seq::index::sample(&mut rng, universum.nrows(), g).into_vec();
    Ok((universum.select_rows(&idx), idx))
}

pub fn build_plan(ds: &Dataset, seed: u64) -> Result<SamplingPlan> {
    if ds.m1() < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 minority samples, found {}", ds.m1())));
    }
    let (x2_star, x2_star_indices) = undersample_majority(ds, seed)?;
    let n = ds.n_features();
    if ds.m1() == ds.m2() {
        return Ok(SamplingPlan {
            x2_star,
            x2_star_indices,
            universum: Universum::empty(n),
            extra: Universum::empty(n),
            universum_star: DMatrix::zeros(0, n),
            universum_star_indices: Vec::new(),
            balanced: true,
            seed,
        });
    }
    let u = ds.m2() - ds.m1();
    let g = ds.m1().div_ceil(2);
    // One stream feeds both U and the top-up rows, so U is the same whether
    // or not a top-up is needed.
    let mut rng = rng::stream(seed, rng::STREAM_UNIVERSUM);
    let universum = draw_midpoints(ds, u, &mut rng);
    let extra = draw_midpoints(ds, g.saturating_sub(u), &mut rng);
    let pool = if extra.is_empty() {
        universum.rows.clone()
    } else {
        let mut pool = DMatrix::zeros(u + extra.len(), n);
        pool.rows_mut(0, u).copy_from(&universum.rows);
        pool.rows_mut(u, extra.len()).copy_from(&extra.rows);
        pool
    };
    let (universum_star, universum_star_indices) = reduce_universum(&pool, g, seed)?;
    Ok(SamplingPlan {
        x2_star,
        x2_star_indices,
        universum,
        extra,
        universum_star,
        universum_star_indices,
        balanced: false,
        seed,
    })
}
