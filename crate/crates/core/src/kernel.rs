//! Gaussian kernel, Gram blocks, and kernel-space class geometry.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive semidefinite kernel over feature vectors.
pub trait Kernel: Sync {
    fn eval(&self, p: &[f64], q: &[f64]) -> f64;
}

/// Gaussian kernel `exp(-||p - q||^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub width: f64,
}

impl KernelSpec {
    pub fn new(width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel width {width} must be > 0")));
        }
        Ok(KernelSpec { width })
    }
}

impl Kernel for KernelSpec {
    fn eval(&self, p: &[f64], q: &[f64]) -> f64 {
        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

/// Plain inner product; used for input-space (linear mode) geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Linear;

impl Kernel for Linear {
    fn eval(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * b).sum()
    }
}

pub fn gaussian(p: &[f64], q: &[f64], spec: KernelSpec) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(spec.eval(p, q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub rows_from: String,
    pub cols_from: String,
}

/// Row-major copy of a sample matrix: column `i` of the result is row `i` of
/// `a`, contiguous in memory.
pub(crate) fn row_major(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose()
}

/// `K(A, B^T)`: entry `(i, j)` is `kernel(A_i, B_j)`.
pub fn kernel_matrix<K: Kernel + ?Sized>(a: &DMatrix<f64>, b: &DMatrix<f64>, kernel: &K) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let at = row_major(a);
    let bt = row_major(b);
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for j in 0..b.nrows() {
        let q = bt.column(j);
        for i in 0..a.nrows() {
            out[(i, j)] = kernel.eval(at.column(i).as_slice(), q.as_slice());
        }
    }
    Ok(out)
}

pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: KernelSpec) -> Result<GramMatrix> {
    Ok(GramMatrix {
        values: kernel_matrix(a, b, &spec)?,
        rows_from: "A".into(),
        cols_from: "B".into(),
    })
}

/// Symmetric self-Gram, evaluating each pair once.
pub fn self_kernel_matrix<K: Kernel + ?Sized>(a: &DMatrix<f64>, kernel: &K) -> DMatrix<f64> {
    let at = row_major(a);
    let m = a.nrows();
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let v = kernel.eval(at.column(i).as_slice(), at.column(j).as_slice());
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Center of a class in feature space, kept implicitly through kernel sums.
/// The pairwise-mean term `(1/m^2) sum_ij K(x_i, x_j)` is computed once.
pub struct ClassCenter<'a, K: Kernel + ?Sized> {
    rows: DMatrix<f64>,
    kernel: &'a K,
    pair_mean: f64,
}

impl<'a, K: Kernel + ?Sized> ClassCenter<'a, K> {
    pub fn new(class_rows: &DMatrix<f64>, kernel: &'a K) -> Result<Self> {
        if class_rows.nrows() == 0 {
            return Err(Error::InvalidDataset("empty class".into()));
        }
        let gram = self_kernel_matrix(class_rows, kernel);
        let m = class_rows.nrows() as f64;
        Ok(ClassCenter {
            rows: row_major(class_rows),
            kernel,
            pair_mean: gram.sum() / (m * m),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `||psi(x) - C||`, squared form clamped at zero.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let m = self.len() as f64;
        let cross: f64 = self.rows.column_iter().map(|r| self.kernel.eval(x, r.as_slice())).sum();
        let d2 = self.kernel.eval(x, x) - 2.0 * cross / m + self.pair_mean;
        d2.max(0.0).sqrt()
    }

    /// Distances of every class member to the center.
    pub fn member_distances(&self) -> Vec<f64> {
        self.rows.column_iter().map(|r| self.distance(r.as_slice())).collect()
    }

    /// Largest member distance.
    pub fn radius(&self) -> f64 {
        self.member_distances().into_iter().fold(0.0, f64::max)
    }
}

pub fn centroid_distance<K: Kernel + ?Sized>(x: &[f64], class_rows: &DMatrix<f64>, kernel: &K) -> Result<f64> {
    if x.len() != class_rows.ncols() {
        return Err(Error::Dimension {
            expected: class_rows.ncols(),
            got: x.len(),
        });
    }
    Ok(ClassCenter::new(class_rows, kernel)?.distance(x))
}

pub fn class_radius<K: Kernel + ?Sized>(class_rows: &DMatrix<f64>, kernel: &K) -> Result<f64> {
    Ok(ClassCenter::new(class_rows, kernel)?.radius())
}

/// Feature-space distance between two samples,
/// `sqrt(K(p,p) + K(q,q) - 2 K(p,q))`, which is `sqrt(2 - 2K)` for the
/// Gaussian kernel.
pub fn feature_distance<K: Kernel + ?Sized>(p: &[f64], q: &[f64], kernel: &K) -> f64 {
    (kernel.eval(p, p) + kernel.eval(q, q) - 2.0 * kernel.eval(p, q)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0))
    }

    /// Degree-2 polynomial kernel (1 + p.q)^2, with its explicit feature map
    /// for the oracle below.
    struct Poly2;
    impl Kernel for Poly2 {
        fn eval(&self, p: &[f64], q: &[f64]) -> f64 {
            let d: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            (1.0 + d).powi(2)
        }
    }

    fn poly2_features(x: &[f64]) -> Vec<f64> {
        let s2 = std::f64::consts::SQRT_2;
        let mut phi = vec![1.0];
        phi.extend(x.iter().map(|v| s2 * v));
        for i in 0..x.len() {
            phi.push(x[i] * x[i]);
            for j in (i + 1)..x.len() {
                phi.push(s2 * x[i] * x[j]);
            }
        }
        phi
    }

    #[test]
    fn gaussian_values() {
        let s = KernelSpec::new(1.0).unwrap();
        assert_eq!(gaussian(&[0.3, -1.0], &[0.3, -1.0], s).unwrap(), 1.0);
        assert!((gaussian(&[0.0], &[1.0], s).unwrap() - 0.6065306597126334).abs() < 1e-15);
        assert!(gaussian(&[0.0], &[1.0, 2.0], s).is_err());
        assert!(KernelSpec::new(0.0).is_err());
    }

    #[test]
    fn gaussian_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = KernelSpec::new(0.7).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert_eq!(gaussian(&p, &q, s).unwrap(), gaussian(&q, &p, s).unwrap());
        }
    }

    #[test]
    fn gram_shapes_and_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 2, 2);
        let s = KernelSpec::new(1.3).unwrap();
        let g = gram(&a, &b, s).unwrap().values;
        assert_eq!(g.shape(), (3, 2));
        for i in 0..3 {
            for j in 0..2 {
                let p: Vec<f64> = a.row(i).iter().copied().collect();
                let q: Vec<f64> = b.row(j).iter().copied().collect();
                assert_eq!(g[(i, j)], gaussian(&p, &q, s).unwrap());
            }
        }
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(gram(&dup, &dup, s).unwrap().values, DMatrix::from_element(2, 2, 1.0));
        assert!(gram(&a, &DMatrix::zeros(2, 3), s).is_err());
    }

    #[test]
    fn self_gram_properties_over_width_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 12, 3);
        for e in -5..=5 {
            let s = KernelSpec::new(2f64.powi(e)).unwrap();
            let g = self_kernel_matrix(&a, &s);
            for i in 0..12 {
                assert_eq!(g[(i, i)], 1.0);
                for j in 0..12 {
                    assert!(g[(i, j)] >= 0.0 && g[(i, j)] <= 1.0);
                    assert!((g[(i, j)] - g[(j, i)]).abs() <= 1e-12);
                }
            }
            let eig = g.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-8 * 12.0, "min eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn centroid_distance_single_member() {
        let s = KernelSpec::new(0.9).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        assert_eq!(centroid_distance(&[0.5, -0.5], &x, &s).unwrap(), 0.0);
        let y = [1.5, 0.25];
        let k = gaussian(&[0.5, -0.5], &y, s).unwrap();
        let d = centroid_distance(&y, &x, &s).unwrap();
        assert!((d * d - 2.0 * (1.0 - k)).abs() < 1e-15);
        assert!(centroid_distance(&y, &DMatrix::zeros(0, 2), &s).is_err());
    }

    #[test]
    fn centroid_distance_matches_explicit_feature_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let class = random_matrix(&mut rng, 5, 3);
        let rows: Vec<Vec<f64>> = (0..5).map(|i| class.row(i).iter().copied().collect()).collect();
        let phis: Vec<Vec<f64>> = rows.iter().map(|r| poly2_features(r)).collect();
        let dim = phis[0].len();
        let center: Vec<f64> = (0..dim).map(|d| phis.iter().map(|p| p[d]).sum::<f64>() / 5.0).collect();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let px = poly2_features(&x);
            let explicit = px.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let implicit = centroid_distance(&x, &class, &Poly2).unwrap();
            assert!((explicit - implicit).abs() < 1e-10, "{explicit} vs {implicit}");
        }
    }

    #[test]
    fn radius_is_max_member_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = KernelSpec::new(1.0).unwrap();
        assert_eq!(class_radius(&DMatrix::from_row_slice(1, 1, &[3.0]), &s).unwrap(), 0.0);
        assert_eq!(class_radius(&DMatrix::from_row_slice(2, 1, &[3.0, 3.0]), &s).unwrap(), 0.0);
        for trial in 0..20 {
            let m = 2 + trial % 40;
            let class = random_matrix(&mut rng, m, 2);
            let r = class_radius(&class, &s).unwrap();
            let brute: Vec<f64> = (0..m)
                .map(|i| {
                    let x: Vec<f64> = class.row(i).iter().copied().collect();
                    centroid_distance(&x, &class, &s).unwrap()
                })
                .collect();
            let max = brute.iter().cloned().fold(0.0, f64::max);
            assert_eq!(r, max);
            assert!(brute.iter().all(|&d| d <= r));
        }
    }

    #[test]
    fn subset_radius_can_exceed_class_radius() {
        // {-1, 1, 0 x 100}: the center sits near 0 and r is about 1, while the
        // subset {-1, 1, 1} (still holding an argmax member) has radius 4/3.
        let mut vals = vec![-1.0, 1.0];
        vals.extend(std::iter::repeat_n(0.0, 100));
        let class = DMatrix::from_column_slice(vals.len(), 1, &vals);
        let r = class_radius(&class, &Linear).unwrap();
        let sub = DMatrix::from_column_slice(3, 1, &[-1.0, 1.0, 1.0]);
        let r_sub = class_radius(&sub, &Linear).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!((r_sub - 4.0 / 3.0).abs() < 1e-12);
    }
}
