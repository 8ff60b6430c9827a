#![allow(dead_code)]

use std::path::PathBuf;

use ifutsvm::dataset::Dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

/// Two isotropic Gaussian blobs in `n` dimensions; positives around the
/// origin, negatives shifted by `gap` along the first axis.
pub fn blobs(seed: u64, m1: usize, m2: usize, n: usize, gap: f64, sd: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).unwrap();
    let m = m1 + m2;
    let x = DMatrix::from_fn(m, n, |i, j| {
        let shift = if i >= m1 && j == 0 { gap } else { 0.0 };
        shift + normal.sample(&mut rng)
    });
    let y = (0..m).map(|i| if i < m1 { 1 } else { -1 }).collect();
    Dataset::from_labels("blobs", x, y).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.gen_range(lo.log10()..hi.log10()))
}

/// Dense symmetric matrix `G'G + shift I` with `G` standard normal.
pub fn random_spd(rng: &mut ChaCha8Rng, k: usize, shift: f64) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let g = DMatrix::from_fn(k, k, |_, _| normal.sample(rng));
    g.tr_mul(&g) + DMatrix::identity(k, k) * shift
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Headerless CSV with the class token in the last column.
pub fn to_csv(ds: &Dataset) -> String {
    let mut s = String::new();
    for i in 0..ds.len() {
        for v in ds.features().row(i).iter() {
            s.push_str(&format!("{v},"));
        }
        let token = if ds.labels()[i] == 1 { &ds.classes()[0] } else { &ds.classes()[1] };
        s.push_str(token);
        s.push('\n');
    }
    s
}
