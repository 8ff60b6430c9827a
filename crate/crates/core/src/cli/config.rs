//! Experiment configuration, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Grid;
use crate::kernel::KernelSpec;
use crate::membership::FuzzyParams;
use crate::models::{Hyperparams, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFormat {
    #[default]
    Binary,
    Json,
}

/// Fixed hyperparameters for `train` and the defaults the grid does not
/// cover (δ, fuzzy parameters, norm flag).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "one")]
    pub c1: f64,
    pub c2: Option<f64>,
    #[serde(default = "one")]
    pub c3: f64,
    pub c4: Option<f64>,
    #[serde(default = "one")]
    pub cu: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Gaussian width μ; absent means linear mode.
    pub width: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub rho: Option<f64>,
    #[serde(default)]
    pub rkhs_norm: bool,
    #[serde(default)]
    pub uniform_scores: bool,
}

fn one() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.3
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            c1: 1.0,
            c2: None,
            c3: 1.0,
            c4: None,
            cu: 1.0,
            epsilon: default_epsilon(),
            width: None,
            delta: None,
            eta: None,
            rho: None,
            rkhs_norm: false,
            uniform_scores: false,
        }
    }
}

impl ParamsConfig {
    pub fn hyperparams(&self, seed: u64) -> Result<Hyperparams> {
        let hp = Hyperparams {
            c1: self.c1,
            c2: self.c2.unwrap_or(self.c1),
            c3: self.c3,
            c4: self.c4.unwrap_or(self.c3),
            cu: self.cu,
            epsilon: self.epsilon,
            kernel: self.width.map(KernelSpec::new).transpose()?,
            delta: self.delta,
            fuzzy: FuzzyParams { eta: self.eta, rho: self.rho },
            seed,
            rkhs_norm: self.rkhs_norm,
            uniform_scores: self.uniform_scores,
        };
        hp.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub c1: Vec<f64>,
    pub c3: Vec<f64>,
    pub cu: Vec<f64>,
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub width: Vec<f64>,
}

impl From<&GridConfig> for Grid {
    fn from(g: &GridConfig) -> Grid {
        Grid {
            c1: g.c1.clone(),
            c3: g.c3.clone(),
            cu: g.cu.clone(),
            epsilon: g.epsilon.clone(),
            width: g.width.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    /// Every `.dat` and `.csv` file in this directory, sorted by name.
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub models: Vec<ModelKind>,
    pub split: Option<f64>,
    pub folds: Option<usize>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub noise_levels: Vec<f64>,
    pub threads: Option<usize>,
    pub q_alpha: Option<f64>,
    pub f_critical: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub params: ParamsConfig,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalConfig>,
    pub aggregate: Option<AggregateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub format: ModelFormat,
}

fn default_model() -> ModelKind {
    ModelKind::IfutsvmId
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    /// CSV: header `dataset,<model>,...`, one row per dataset.
    pub matrix: PathBuf,
}

pub const DEFAULT_SPLIT: f64 = 0.7;
pub const DEFAULT_FOLDS: usize = 5;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read `path`; relative paths inside the file resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.datasets.iter_mut().for_each(fix);
        self.dataset_dir.as_mut().map(fix);
        self.out.as_mut().map(fix);
        if let Some(t) = &mut self.train {
            fix(&mut t.dataset);
        }
        if let Some(e) = &mut self.eval {
            fix(&mut e.model);
            fix(&mut e.dataset);
        }
        if let Some(a) = &mut self.aggregate {
            fix(&mut a.matrix);
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("no seed given (set `seed` in the config or pass --seed)".into()))
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))
    }

    pub fn split(&self) -> f64 {
        self.split.unwrap_or(DEFAULT_SPLIT)
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(DEFAULT_FOLDS)
    }

    /// Dataset files: the explicit list followed by the directory listing.
    pub fn dataset_paths(&self) -> Result<Vec<PathBuf>> {
        let mut paths = self.datasets.clone();
        if let Some(dir) = &self.dataset_dir {
            let entries = std::fs::read_dir(dir).map_err(|e| Error::Config(format!("cannot read dataset_dir {}: {e}", dir.display())))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("dat" | "csv")))
                .collect();
            found.sort();
            paths.extend(found);
        }
        if paths.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        for p in &paths {
            require_file(p)?;
        }
        Ok(paths)
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = self.grid.as_ref().ok_or_else(|| Error::Config("missing [grid] section".into()))?;
        for (name, axis) in [("c1", &g.c1), ("c3", &g.c3)] {
            if axis.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config(format!("grid.{name} values must be > 0")));
            }
        }
        if g.cu.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("grid.cu values must be >= 0".into()));
        }
        if g.epsilon.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::Config("grid.epsilon values must lie in [0, 1)".into()));
        }
        if g.width.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("grid.width values must be > 0".into()));
        }
        Grid::from(g).normalized()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        if self.models.is_empty() {
            vec![ModelKind::IfutsvmId]
        } else {
            self.models.clone()
        }
    }

    pub fn validate_common(&self) -> Result<()> {
        if !(self.split() > 0.0 && self.split() < 1.0) {
            return Err(Error::Config(format!("split = {} must lie in (0, 1)", self.split())));
        }
        if self.folds() < 2 {
            return Err(Error::Config(format!("folds = {} must be at least 2", self.folds())));
        }
        if self.noise_levels.iter().any(|l| !(0.0..=0.5).contains(l)) {
            return Err(Error::Config("noise levels must lie in [0, 0.5]".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("file not found: {}", p.display())))
    }
}
