//! Binary classification datasets with an explicit minority convention.
//!
//! Labels are `+1` / `-1` and `+1` always names the minority class (or the
//! lexicographically smaller class token when both classes have the same
//! size). Every constructor enforces this, so downstream code can read `X₁`
//! as "positive = minority" without checking.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: DMatrix<f64>,
    labels: Vec<i8>,
    /// Class tokens for `+1` and `-1`, in that order.
    classes: [String; 2],
    m1: usize,
}

impl Dataset {
    /// Build from ±1 labels. If `+1` is the majority the labels (and
    /// `classes`) are swapped.
    pub fn new(name: impl Into<String>, features: DMatrix<f64>, labels: Vec<i8>, classes: [String; 2]) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidDataset("feature rows must have at least one column".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::InvalidDataset(format!("label {bad} is not +1 or -1")));
        }
        let mut ds = Dataset {
            name: name.into(),
            features,
            labels,
            classes,
            m1: 0,
        };
        ds.m1 = ds.labels.iter().filter(|&&y| y == 1).count();
        if ds.m1 > ds.m2() {
            ds.swap_classes();
        }
        Ok(ds)
    }

    /// Build from raw class tokens: the less frequent token becomes `+1`,
    /// ties go to the lexicographically smaller token.
    pub fn from_tokens(name: impl Into<String>, features: DMatrix<f64>, tokens: &[String]) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        if counts.len() < 2 {
            return Err(Error::InvalidDataset(format!("need 2 distinct class tokens, found {}", counts.len())));
        }
        if counts.len() > 2 {
            return Err(Error::InvalidDataset(format!("multiclass data ({} classes) is not supported", counts.len())));
        }
        // BTreeMap iterates in lexicographic order, so min_by_key keeps the
        // smaller token on ties.
        let (minority, _) = counts.iter().min_by_key(|(_, &c)| c).unwrap();
        let minority = minority.to_string();
        let majority = counts.keys().find(|k| **k != minority).unwrap().to_string();
        let labels = tokens.iter().map(|t| if *t == minority { 1 } else { -1 }).collect();
        Dataset::new(name, features, labels, [minority, majority])
    }

    /// Build from ±1 labels with generic class names.
    pub fn from_labels(name: impl Into<String>, features: DMatrix<f64>, labels: Vec<i8>) -> Result<Self> {
        Dataset::new(name, features, labels, ["+1".into(), "-1".into()])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn classes(&self) -> &[String; 2] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.labels.len() - self.m1
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        self.class_indices(1)
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        self.class_indices(-1)
    }

    fn class_indices(&self, y: i8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == y).collect()
    }

    /// X₁: rows of the positive (minority) class, in dataset order.
    pub fn positives(&self) -> DMatrix<f64> {
        self.features.select_rows(&self.positive_indices())
    }

    /// X₂: rows of the negative (majority) class, in dataset order.
    pub fn negatives(&self) -> DMatrix<f64> {
        self.features.select_rows(&self.negative_indices())
    }

    /// Rows at `indices`, labels kept as they are. Callers that may break
    /// the minority convention must go through [`Dataset::new`] instead.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let labels: Vec<i8> = indices.iter().map(|&i| self.labels[i]).collect();
        let m1 = labels.iter().filter(|&&y| y == 1).count();
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels,
            classes: self.classes.clone(),
            m1,
        }
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Dataset {
        assert_eq!(features.nrows(), self.len());
        Dataset { features, ..self.clone() }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Dataset {
        self.name = name.into();
        self
    }

    fn swap_classes(&mut self) {
        for y in &mut self.labels {
            *y = -*y;
        }
        self.classes.swap(0, 1);
        self.m1 = self.labels.len() - self.m1;
    }

    /// Flip labels if `other` encodes the classes the other way round, so
    /// that `+1` means the same class token in both.
    pub fn align_to(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        if out.classes[0] == other.classes[1] && out.classes[1] == other.classes[0] {
            out.swap_classes();
        }
        out
    }
}

/// Parse a KEEL `.dat` file: `@`-prefixed header lines, an `@data` sentinel,
/// then comma-separated rows whose last field is the class token.
pub fn parse_keel(text: &str) -> Result<Dataset> {
    let mut name = String::new();
    let mut n_attributes = 0usize;
    let mut data_start = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if !line.starts_with('@') {
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            return Err(Error::Parse {
                line: idx + 1,
                message: "data row before @data".into(),
            });
        }
        let lower = line.to_ascii_lowercase();
        if lower.starts_with("@relation") {
            let rest = line["@relation".len()..].trim();
            if !rest.is_empty() {
                name = rest.to_string();
            }
        } else if lower.starts_with("@attribute") {
            n_attributes += 1;
        } else if lower.starts_with("@data") {
            data_start = Some(idx + 1);
            break;
        }
    }
    let start = data_start.ok_or_else(|| Error::Parse {
        line: text.lines().count().max(1),
        message: "missing @data section".into(),
    })?;
    let arity = (n_attributes > 0).then_some(n_attributes);
    let (features, tokens) = parse_rows(text.lines().enumerate().skip(start), arity)?;
    Dataset::from_tokens(name, features, &tokens)
}

/// Parse headerless comma-separated rows with a trailing label column.
pub fn parse_csv(text: &str, name: &str) -> Result<Dataset> {
    let (features, tokens) = parse_rows(text.lines().enumerate(), None)?;
    Dataset::from_tokens(name, features, &tokens)
}

/// Load a `.dat` (KEEL) or headerless CSV file; the format is detected from
/// the content, the dataset name from the file stem unless a `@relation`
/// header names it.
pub fn load(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    let is_keel = text.lines().any(|l| l.trim_start().starts_with('@'));
    if is_keel {
        parse_keel(&text).map(|ds| if ds.name().is_empty() { ds.with_name(stem) } else { ds })
    } else {
        parse_csv(&text, &stem)
    }
}

fn parse_rows<'a>(lines: impl Iterator<Item = (usize, &'a str)>, arity: Option<usize>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut values = Vec::new();
    let mut tokens = Vec::new();
    let mut width = arity;
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('@') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected || expected < 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        for f in &fields[..expected - 1] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("non-numeric feature {f:?}"),
            })?;
            values.push(v);
        }
        tokens.push(fields[expected - 1].to_string());
    }
    if tokens.is_empty() {
        return Err(Error::InvalidDataset("no data rows".into()));
    }
    let n = width.unwrap() - 1;
    Ok((DMatrix::from_row_slice(tokens.len(), n, &values), tokens))
}

/// Stratified train/test split. Per class, `round(train_fraction * size)`
/// samples go to the training side.
pub fn stratified_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = rng::stream(seed, rng::STREAM_SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in [ds.positive_indices(), ds.negative_indices()] {
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::Split(format!(
                "a class of {} samples would get {} train / {} test samples",
                idx.len(),
                n_train,
                idx.len() - n_train
            )));
        }
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Stratified k-fold assignment: each class is shuffled and dealt round-robin
/// over the folds. Returns `(train_indices, validation_indices)` per fold.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k} folds, need at least 2")));
    }
    if ds.m1() < k {
        return Err(Error::Split(format!("minority class has {} samples, fewer than k = {k}", ds.m1())));
    }
    let mut rng = rng::stream(seed, rng::STREAM_FOLDS);
    let mut fold_of = vec![0usize; ds.len()];
    for mut idx in [ds.positive_indices(), ds.negative_indices()] {
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| fold_of[i] == f);
            (train, val)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Flip exactly `round(fraction * m)` labels chosen uniformly without
/// replacement. The minority convention is re-applied afterwards. Returns the
/// noisy dataset and the flipped indices.
pub fn inject_label_noise(ds: &Dataset, spec: NoiseSpec) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=0.5).contains(&spec.fraction) {
        return Err(Error::InvalidParameter(format!("noise fraction {} outside [0, 0.5]", spec.fraction)));
    }
    let count = (spec.fraction * ds.len() as f64).round() as usize;
    let mut rng = rng::stream(spec.seed, rng::STREAM_NOISE);
    let mut flipped = rand::seq::index::sample(&mut rng, ds.len(), count).into_vec();
    flipped.sort_unstable();
    let mut labels = ds.labels().to_vec();
    for &i in &flipped {
        labels[i] = -labels[i];
    }
    let noisy = Dataset::new(ds.name(), ds.features().clone(), labels, ds.classes().clone())?;
    Ok((noisy, flipped))
}

/// Per-column affine map fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 0 marks a pass-through column.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Standardizer {
        let m = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / m;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
            mean.push(mu);
            std.push(var.sqrt());
        }
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.std[j] > 0.0 {
                col.apply(|v| *v = (*v - self.mean[j]) / self.std[j]);
            }
        }
        out
    }
}

/// Standardize columns with training statistics (population standard
/// deviation). Zero-variance columns pass through unchanged.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    if train.is_empty() {
        return Err(Error::InvalidDataset("cannot standardize an empty training set".into()));
    }
    if train.n_features() != test.n_features() {
        return Err(Error::Dimension {
            expected: train.n_features(),
            got: test.n_features(),
        });
    }
    let st = Standardizer::fit(train.features());
    Ok((
        train.with_features(st.transform(train.features())),
        test.with_features(st.transform(test.features())),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "@relation toy\n@attribute a real\n@attribute b real\n@attribute class {positive, negative}\n@inputs a, b\n@outputs class\n@data\n1.0,2.0,positive\n0.0,0.0,negative\n0.0,0.0,negative\n0.0,0.0,negative\n";

    fn toy(m1: usize, m2: usize) -> Dataset {
        let m = m1 + m2;
        let x = DMatrix::from_fn(m, 2, |i, j| (i * 3 + j) as f64);
        let y = (0..m).map(|i| if i < m1 { 1 } else { -1 }).collect();
        Dataset::from_labels("toy", x, y).unwrap()
    }

    #[test]
    fn keel_minority_becomes_positive() {
        let ds = parse_keel(SMALL).unwrap();
        assert_eq!(ds.name(), "toy");
        assert_eq!((ds.m1(), ds.m2()), (1, 3));
        assert_eq!(ds.labels()[0], 1);
        assert_eq!(ds.classes()[0], "positive");
    }

    #[test]
    fn keel_majority_positive_token_is_remapped() {
        let text = "@data\n1,positive\n2,positive\n3,positive\n4,negative\n";
        let ds = parse_keel(text).unwrap();
        assert_eq!(ds.classes()[0], "negative");
        assert_eq!(ds.labels(), &[-1, -1, -1, 1]);
    }

    #[test]
    fn keel_tie_goes_to_smaller_token() {
        let ds = parse_keel("@data\n1,b\n2,a\n").unwrap();
        assert_eq!(ds.classes()[0], "a");
        assert_eq!(ds.labels(), &[-1, 1]);
    }

    #[test]
    fn keel_empty_data_section() {
        assert!(matches!(parse_keel("@relation x\n@data\n"), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn keel_single_class() {
        assert!(matches!(parse_keel("@data\n1,a\n2,a\n"), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn keel_bad_rows_report_line() {
        let err = parse_keel("@attribute a real\n@attribute c {x,y}\n@data\n1,x\n2,3,y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
        let err = parse_keel("@data\n1,x\nfoo,y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn csv_with_signed_labels() {
        let ds = parse_csv("0,0,1\n1,1,-1\n2,2,-1\n", "t").unwrap();
        assert_eq!(ds.labels(), &[1, -1, -1]);
        assert_eq!(ds.n_features(), 2);
    }

    #[test]
    fn split_exact_rounding() {
        let ds = toy(10, 10);
        let (tr, te) = stratified_split(&ds, 0.7, 1).unwrap();
        assert_eq!((tr.m1(), tr.m2(), te.m1(), te.m2()), (7, 7, 3, 3));
        let (tr2, te2) = stratified_split(&ds, 0.7, 1).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
    }

    #[test]
    fn split_degenerate_class() {
        assert!(matches!(stratified_split(&toy(1, 10), 0.7, 0), Err(Error::Split(_))));
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy(9, 23);
        let (tr, te) = stratified_split(&ds, 0.7, 5).unwrap();
        assert_eq!(tr.m1() + te.m1(), 9);
        assert_eq!(tr.m2() + te.m2(), 23);
        let mut rows: Vec<f64> = tr.features().column(0).iter().chain(te.features().column(0).iter()).copied().collect();
        rows.sort_by(f64::total_cmp);
        let mut all: Vec<f64> = ds.features().column(0).iter().copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(rows, all);
    }

    #[test]
    fn folds_cover_every_sample_once() {
        let ds = toy(7, 20);
        let folds = stratified_folds(&ds, 5, 3).unwrap();
        let mut seen = vec![0; ds.len()];
        for (train, val) in &folds {
            assert_eq!(train.len() + val.len(), ds.len());
            for &i in val {
                seen[i] += 1;
            }
            assert!(val.iter().any(|&i| ds.labels()[i] == 1));
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn noise_zero_is_identity() {
        let ds = toy(4, 6);
        let (noisy, flipped) = inject_label_noise(&ds, NoiseSpec { fraction: 0.0, seed: 9 }).unwrap();
        assert!(flipped.is_empty());
        assert_eq!(noisy, ds);
    }

    #[test]
    fn noise_flips_exact_count() {
        let ds = toy(3, 7);
        let (noisy, flipped) = inject_label_noise(&ds, NoiseSpec { fraction: 0.2, seed: 1 }).unwrap();
        assert_eq!(flipped.len(), 2);
        let noisy = noisy.align_to(&ds);
        let diff = ds.labels().iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 2);
        assert_eq!(noisy.features(), ds.features());
    }

    #[test]
    fn noise_reencodes_minority() {
        let ds = toy(4, 5);
        let (noisy, _) = inject_label_noise(&ds, NoiseSpec { fraction: 0.5, seed: 3 }).unwrap();
        assert!(noisy.m1() <= noisy.m2());
    }

    #[test]
    fn standardize_two_points_population_std() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 2.0, 5.0]);
        let ds = Dataset::from_labels("t", x, vec![1, -1]).unwrap();
        let (tr, _) = standardize(&ds, &ds).unwrap();
        assert_eq!(tr.features()[(0, 0)], -1.0);
        assert_eq!(tr.features()[(1, 0)], 1.0);
        // constant column untouched
        assert_eq!(tr.features()[(0, 1)], 5.0);
        let (tr2, _) = standardize(&tr, &tr).unwrap();
        assert!((tr2.features() - tr.features()).amax() < 1e-12);
    }
}
