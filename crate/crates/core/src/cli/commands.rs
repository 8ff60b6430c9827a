//! The batch commands. Each writes its outputs under the configured output
//! directory and returns the path of its main report.
//!
//! Reports contain no wall-clock data, so reruns with the same config and
//! seed are byte-identical; timings go to a separate `timings.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{require_file, ExperimentConfig, ModelFormat};
use crate::dataset::{self, inject_label_noise, standardize, stratified_split, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::evaluation::{average_ranks, grid_search_cv, metrics, q_alpha_05, statistics, ConfusionMatrix, CvTable, Grid, MetricsReport, RankTable, Statistics};
use crate::models::{self, fit_ifutsvm_id_detailed, fit_utsvm_with, utsvm_universum, Hyperparams, ModelKind, TwinModel};
use crate::qp::QpOptions;
use crate::rng;

const TAG_SPLIT: u64 = 1;
const TAG_CV: u64 = 2;
const TAG_FIT: u64 = 3;
const TAG_NOISE: u64 = 4;

fn kind_code(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Utsvm => 0,
        ModelKind::IfutsvmId => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn qp_options(cfg: &ExperimentConfig) -> QpOptions {
    let d = QpOptions::default();
    QpOptions {
        tol: cfg.tol.unwrap_or(d.tol),
        max_iter: cfg.max_iter.unwrap_or(d.max_iter),
    }
}

/// The config as echoed into reports: everything that determines the
/// results, nothing that only says where they go or how fast.
fn echo(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        out: None,
        threads: None,
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub path: String,
    pub samples: usize,
    pub features: usize,
    pub m1: usize,
    pub m2: usize,
    /// Class tokens for +1 and -1.
    pub classes: [String; 2],
}

impl DatasetSummary {
    fn new(ds: &Dataset, path: &Path) -> DatasetSummary {
        DatasetSummary {
            name: ds.name().to_string(),
            path: path.display().to_string(),
            samples: ds.len(),
            features: ds.n_features(),
            m1: ds.m1(),
            m2: ds.m2(),
            classes: ds.classes().clone(),
        }
    }
}

/// Ten equal-width bins over [0, 1].
fn histogram(values: &[f64]) -> [usize; 10] {
    let mut h = [0; 10];
    for &v in values {
        h[((v * 10.0) as usize).min(9)] += 1;
    }
    h
}

#[derive(Serialize)]
struct ScoreSummary {
    s1_histogram: [usize; 10],
    s2_histogram: [usize; 10],
    zero_scores: usize,
    eta: [f64; 2],
    rho: f64,
}

#[derive(Serialize)]
struct PlanSummary {
    x2_star: usize,
    universum: usize,
    universum_extra: usize,
    universum_star: usize,
    balanced: bool,
}

#[derive(Serialize)]
struct TrainLog {
    command: &'static str,
    seed: u64,
    config: ExperimentConfig,
    dataset: DatasetSummary,
    model: ModelKind,
    hyperparams: Hyperparams,
    model_file: String,
    dual: models::DualReport,
    scores: Option<ScoreSummary>,
    plan: Option<PlanSummary>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Dumps {
    pub plan: bool,
    pub scores: bool,
}

pub fn cmd_train(cfg: &ExperimentConfig, dumps: Dumps) -> Result<PathBuf> {
    let seed = cfg.seed()?;
    let tc = cfg.train.as_ref().ok_or_else(|| Error::Config("missing [train] section".into()))?;
    require_file(&tc.dataset)?;
    let hp = cfg.params.hyperparams(seed)?;
    let out = prepare_out(cfg)?;
    let ds = dataset::load(&tc.dataset)?;
    let opts = qp_options(cfg);
    let (model, scores, plan) = match tc.model {
        ModelKind::IfutsvmId => {
            let (model, diag) = fit_ifutsvm_id_detailed(&ds, &hp, &opts)?;
            if dumps.scores {
                let mut csv = String::from("index,label,theta,sigma,score\n");
                for i in 0..ds.len() {
                    csv.push_str(&format!(
                        "{i},{},{},{},{}\n",
                        ds.labels()[i],
                        diag.scores.membership[i],
                        diag.scores.nonmembership[i],
                        diag.scores.score[i]
                    ));
                }
                fs::write(out.join("scores.csv"), csv)?;
            }
            if dumps.plan {
                fs::write(out.join("plan.csv"), plan_csv(&diag.plan))?;
            }
            let s = &diag.scores;
            let scores = ScoreSummary {
                s1_histogram: histogram(&s.s1),
                s2_histogram: histogram(&s.s2),
                zero_scores: s.score.iter().filter(|&&v| v == 0.0).count(),
                eta: s.eta,
                rho: s.rho,
            };
            let p = &diag.plan;
            let plan = PlanSummary {
                x2_star: p.x2_star.nrows(),
                universum: p.u(),
                universum_extra: p.extra.len(),
                universum_star: p.g(),
                balanced: p.balanced,
            };
            (model, Some(scores), Some(plan))
        }
        ModelKind::Utsvm => {
            let u = utsvm_universum(&ds, seed)?;
            if dumps.plan {
                let mut csv = String::from("row,values\n");
                for r in 0..u.nrows() {
                    let vals: Vec<String> = u.row(r).iter().map(|v| v.to_string()).collect();
                    csv.push_str(&format!("{r},{}\n", vals.join(" ")));
                }
                fs::write(out.join("plan.csv"), csv)?;
            }
            (fit_utsvm_with(&ds, &u, &hp, &opts)?, None, None)
        }
    };
    let model_path = match tc.format {
        ModelFormat::Binary => {
            let p = out.join("model.bin");
            let mut bytes = Vec::new();
            model.write_binary(&mut bytes)?;
            fs::write(&p, bytes)?;
            p
        }
        ModelFormat::Json => {
            let p = out.join("model.json");
            fs::write(&p, model.to_json()? + "\n")?;
            p
        }
    };
    let log = TrainLog {
        command: "train",
        seed,
        config: echo(cfg),
        dataset: DatasetSummary::new(&ds, &tc.dataset),
        model: tc.model,
        hyperparams: hp,
        model_file: model_path.file_name().unwrap().to_string_lossy().into_owned(),
        dual: model.dual_report.clone(),
        scores,
        plan,
    };
    write_json(&out.join("train_log.json"), &log)?;
    Ok(model_path)
}

fn plan_csv(plan: &crate::sampling::SamplingPlan) -> String {
    let mut csv = String::from("set,row,source\n");
    for (r, i) in plan.x2_star_indices.iter().enumerate() {
        csv.push_str(&format!("x2_star,{r},negative:{i}\n"));
    }
    for (r, (p, n)) in plan.universum.pairs.iter().chain(&plan.extra.pairs).enumerate() {
        csv.push_str(&format!("universum,{r},positive:{p}+negative:{n}\n"));
    }
    for (r, i) in plan.universum_star_indices.iter().enumerate() {
        csv.push_str(&format!("universum_star,{r},universum:{i}\n"));
    }
    csv
}

pub fn load_model(path: &Path) -> Result<TwinModel> {
    require_file(path)?;
    let bytes = fs::read(path)?;
    if bytes.first() == Some(&b'{') {
        TwinModel::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::ModelFormat(e.to_string()))?)
    } else {
        TwinModel::read_binary(bytes.as_slice())
    }
}

#[derive(Serialize)]
struct EvalReport {
    command: &'static str,
    model_file: String,
    model: ModelKind,
    dataset: DatasetSummary,
    confusion: ConfusionMatrix,
    metrics: MetricsReport,
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let ec = cfg.eval.as_ref().ok_or_else(|| Error::Config("missing [eval] section".into()))?;
    require_file(&ec.dataset)?;
    let model = load_model(&ec.model)?;
    let out = prepare_out(cfg)?;
    let ds = dataset::load(&ec.dataset)?;
    let pred = model.predict_batch(ds.features())?;
    let confusion = ConfusionMatrix::from_labels(ds.labels(), &pred)?;
    let report = EvalReport {
        command: "eval",
        model_file: ec.model.display().to_string(),
        model: model.kind,
        dataset: DatasetSummary::new(&ds, &ec.dataset),
        metrics: metrics(&confusion),
        confusion,
    };
    let path = out.join("eval_report.json");
    write_json(&path, &report)?;
    Ok(path)
}

/// One model's grid search, refit, and test result.
#[derive(Debug, Clone, Serialize)]
pub struct ModelResult {
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    pub cv_seed: u64,
    pub cv_accuracy: f64,
    /// Lattice points with at least one unconverged or failed fold.
    pub cv_flagged_points: usize,
    /// Whether each refit dual met the tolerance; an unconverged dual keeps
    /// its best iterate.
    pub converged: [bool; 2],
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    /// Test accuracy in percent.
    pub accuracy: f64,
}

struct Timed<T> {
    value: T,
    seconds: f64,
}

/// Grid search on `train`, refit with the winner, score `test`.
#[allow(clippy::too_many_arguments)]
pub fn run_model(
    kind: ModelKind,
    train: &Dataset,
    test: &Dataset,
    grid: &Grid,
    folds: usize,
    cv_seed: u64,
    fit_seed: u64,
    template: &Hyperparams,
    opts: &QpOptions,
) -> Result<(ModelResult, CvTable)> {
    let template = template.with_seed(fit_seed);
    let (hp, table) = grid_search_cv(kind, train, grid, folds, cv_seed, &template, opts)?;
    let model = models::fit_lenient(kind, train, &hp, opts)?;
    let pred = model.predict_batch(test.features())?;
    let confusion = ConfusionMatrix::from_labels(test.labels(), &pred)?;
    let m = metrics(&confusion);
    Ok((
        ModelResult {
            model: kind,
            hyperparams: hp,
            cv_seed,
            cv_accuracy: table.rows[table.best].mean_accuracy,
            cv_flagged_points: table.rows.iter().filter(|r| r.unconverged + r.failed > 0).count(),
            converged: model.dual_report.converged,
            confusion,
            accuracy: 100.0 * m.accuracy.unwrap_or(0.0),
            metrics: m,
        },
        table,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelOutcome {
    pub model: ModelKind,
    pub result: Option<ModelResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetResult {
    pub dataset: Option<DatasetSummary>,
    pub path: String,
    pub split_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub models: Vec<ModelOutcome>,
    pub error: Option<String>,
}

/// Aggregate block: average accuracy, ranks, and statistics over the
/// datasets every model completed.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub average_accuracy: Vec<f64>,
    pub rank_table: Option<RankTable>,
    pub statistics: Option<Statistics>,
    pub notice: Option<String>,
}

/// Average accuracy per model, ranks, Friedman and Nemenyi for an
/// accuracy matrix (datasets × models). Statistics need at least two
/// models and two datasets.
pub fn aggregate(models: &[String], datasets: &[String], matrix: &[Vec<f64>], q_alpha: Option<f64>, f_critical: Option<f64>) -> Result<Aggregate> {
    let p = models.len();
    if matrix.iter().any(|r| r.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: matrix.iter().map(Vec::len).find(|&l| l != p).unwrap_or(0),
        });
    }
    let n = matrix.len();
    let average_accuracy = (0..p)
        .map(|j| {
            if n == 0 {
                f64::NAN
            } else {
                matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64
            }
        })
        .collect();
    let mut agg = Aggregate {
        models: models.to_vec(),
        datasets: datasets.to_vec(),
        average_accuracy,
        rank_table: None,
        statistics: None,
        notice: None,
    };
    if p < 2 {
        agg.notice = Some("statistics omitted: fewer than two models".into());
        return Ok(agg);
    }
    if n == 0 {
        agg.notice = Some("statistics omitted: no dataset completed for every model".into());
        return Ok(agg);
    }
    let table = average_ranks(matrix)?;
    if n < 2 {
        agg.notice = Some("statistics omitted: fewer than two datasets".into());
    } else {
        match q_alpha.or_else(|| q_alpha_05(p)) {
            Some(q) => agg.statistics = Some(statistics(&table, q, f_critical)?),
            None => agg.notice = Some(format!("statistics omitted: no q_alpha for {p} models")),
        }
    }
    agg.rank_table = Some(table);
    Ok(agg)
}

/// Model names, dataset names, and the datasets × models accuracies.
pub type AccuracyMatrix = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Parse `dataset,<model>,...` CSV.
pub fn parse_matrix_csv(text: &str) -> Result<AccuracyMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })?;
    let models: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let mut fields = line.split(',');
        names.push(fields.next().unwrap_or("").trim().to_string());
        let row = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("non-numeric accuracy {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != models.len() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {} values, found {}", models.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((models, names, rows))
}

fn accuracy_csv(models: &[String], results: &[(String, Vec<Option<&ModelResult>>)]) -> String {
    let mut s = String::from("dataset");
    for m in models {
        s.push_str(&format!(",{m}_acc,{m}_c1,{m}_c3,{m}_cu,{m}_epsilon,{m}_width"));
    }
    s.push('\n');
    for (name, row) in results {
        s.push_str(name);
        for r in row {
            match r {
                Some(r) => {
                    let h = &r.hyperparams;
                    let w = h.kernel.map(|k| k.width.to_string()).unwrap_or_default();
                    s.push_str(&format!(",{},{},{},{},{},{}", r.accuracy, h.c1, h.c3, h.cu, h.epsilon, w));
                }
                None => s.push_str(",,,,,,"),
            }
        }
        s.push('\n');
    }
    s
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct BenchmarkReport {
    command: &'static str,
    seed: u64,
    config: ExperimentConfig,
    datasets: Vec<DatasetResult>,
    aggregate: Aggregate,
}

#[derive(Serialize)]
struct TimingEntry {
    dataset: String,
    model: ModelKind,
    level: Option<f64>,
    seconds: f64,
}

struct Loaded {
    index: usize,
    path: PathBuf,
    data: Result<(Dataset, Dataset, Dataset)>,
    split_seed: u64,
}

fn load_and_split(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Loaded>> {
    let paths = cfg.dataset_paths()?;
    Ok(paths
        .into_iter()
        .enumerate()
        .map(|(index, path)| {
            let split_seed = rng::derive(seed, &[TAG_SPLIT, index as u64]);
            let data = dataset::load(&path).and_then(|ds| {
                let (train, test) = stratified_split(&ds, cfg.split(), split_seed)?;
                let (train, test) = if cfg.standardize { standardize(&train, &test)? } else { (train, test) };
                Ok((ds, train, test))
            });
            Loaded { index, path, data, split_seed }
        })
        .collect())
}

struct SplitRun {
    result: DatasetResult,
    tables: Vec<(String, CvTable)>,
    timings: Vec<TimingEntry>,
}

/// Run every model on one split. `noise` perturbs the training labels only.
fn run_split(cfg: &ExperimentConfig, seed: u64, item: &Loaded, noise: Option<f64>, grid: &Grid, template: &Hyperparams) -> (SplitRun, Vec<usize>) {
    let opts = qp_options(cfg);
    let mut run = SplitRun {
        result: DatasetResult {
            dataset: None,
            path: item.path.display().to_string(),
            split_seed: item.split_seed,
            train_size: 0,
            test_size: 0,
            models: Vec::new(),
            error: None,
        },
        tables: Vec::new(),
        timings: Vec::new(),
    };
    let (ds, train, test) = match &item.data {
        Ok(d) => d,
        Err(e) => {
            run.result.error = Some(e.to_string());
            return (run, Vec::new());
        }
    };
    run.result.dataset = Some(DatasetSummary::new(ds, &item.path));
    let mut flipped = Vec::new();
    let (train, test) = match noise {
        Some(level) if level > 0.0 => {
            let spec = NoiseSpec {
                fraction: level,
                seed: rng::derive(seed, &[TAG_NOISE, item.index as u64, level.to_bits()]),
            };
            match inject_label_noise(train, spec) {
                Ok((noisy, f)) => {
                    flipped = f;
                    let aligned = test.align_to(&noisy);
                    (noisy, aligned)
                }
                Err(e) => {
                    run.result.error = Some(e.to_string());
                    return (run, flipped);
                }
            }
        }
        _ => (train.clone(), test.clone()),
    };
    run.result.train_size = train.len();
    run.result.test_size = test.len();
    let cv_seed = rng::derive(seed, &[TAG_CV, item.index as u64]);
    for kind in cfg.models() {
        let fit_seed = rng::derive(seed, &[TAG_FIT, item.index as u64, kind_code(kind)]);
        let start = Instant::now();
        let r = run_model(kind, &train, &test, grid, cfg.folds(), cv_seed, fit_seed, template, &opts);
        let timed = Timed {
            value: r,
            seconds: start.elapsed().as_secs_f64(),
        };
        run.timings.push(TimingEntry {
            dataset: ds.name().to_string(),
            model: kind,
            level: noise,
            seconds: timed.seconds,
        });
        run.result.models.push(match timed.value {
            Ok((res, table)) => {
                run.tables.push((format!("{}__{}", safe_name(ds.name()), kind.name()), table));
                ModelOutcome {
                    model: kind,
                    result: Some(res),
                    error: None,
                }
            }
            Err(e) => ModelOutcome {
                model: kind,
                result: None,
                error: Some(e.to_string()),
            },
        });
    }
    (run, flipped)
}

/// Datasets where every model finished, with their accuracies.
fn complete_rows(results: &[&DatasetResult]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        if r.error.is_some() {
            continue;
        }
        let row: Option<Vec<f64>> = r.models.iter().map(|m| m.result.as_ref().map(|x| x.accuracy)).collect();
        if let (Some(row), Some(ds)) = (row, &r.dataset) {
            names.push(ds.name.clone());
            rows.push(row);
        }
    }
    (names, rows)
}

fn model_names(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.models().iter().map(|k| k.name().to_string()).collect()
}

fn write_tables(dir: &Path, tables: &[(String, CvTable)]) -> Result<()> {
    if tables.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir)?;
    for (name, t) in tables {
        fs::write(dir.join(format!("{name}.csv")), t.to_csv())?;
    }
    Ok(())
}

pub fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let seed = cfg.seed()?;
    cfg.validate_common()?;
    let grid = cfg.grid()?;
    let template = cfg.params.hyperparams(seed)?;
    let loaded = load_and_split(cfg, seed)?;
    let out = prepare_out(cfg)?;
    let runs: Vec<SplitRun> = loaded.par_iter().map(|item| run_split(cfg, seed, item, None, &grid, &template).0).collect();

    let models = model_names(cfg);
    let results: Vec<&DatasetResult> = runs.iter().map(|r| &r.result).collect();
    let (names, matrix) = complete_rows(&results);
    let agg = aggregate(&models, &names, &matrix, cfg.q_alpha, cfg.f_critical)?;

    let per_ds: Vec<(String, Vec<Option<&ModelResult>>)> = results
        .iter()
        .filter_map(|r| {
            r.dataset
                .as_ref()
                .map(|d| (d.name.clone(), r.models.iter().map(|m| m.result.as_ref()).collect()))
        })
        .collect();
    fs::write(out.join("accuracy.csv"), accuracy_csv(&models, &per_ds))?;
    if let Some(t) = &agg.rank_table {
        fs::write(out.join("ranks.csv"), t.to_csv(&models, &names))?;
    }
    let tables: Vec<(String, CvTable)> = runs.iter().flat_map(|r| r.tables.iter().cloned()).collect();
    write_tables(&out.join("cv"), &tables)?;
    let timings: Vec<&TimingEntry> = runs.iter().flat_map(|r| &r.timings).collect();
    write_json(&out.join("timings.json"), &timings)?;

    let report = BenchmarkReport {
        command: "benchmark",
        seed,
        config: echo(cfg),
        datasets: runs.into_iter().map(|r| r.result).collect(),
        aggregate: agg,
    };
    let path = out.join("report.json");
    write_json(&path, &report)?;
    Ok(path)
}

#[derive(Serialize)]
struct NoiseLevelResult {
    level: f64,
    noise_seed: Option<u64>,
    /// Training-split positions whose label was flipped.
    flipped: Vec<usize>,
    result: DatasetResult,
}

#[derive(Serialize)]
struct NoiseDataset {
    name: String,
    path: String,
    levels: Vec<NoiseLevelResult>,
    /// Per model, mean accuracy over the levels it completed.
    level_average: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct NoiseReport {
    command: &'static str,
    seed: u64,
    config: ExperimentConfig,
    models: Vec<String>,
    datasets: Vec<NoiseDataset>,
}

pub fn cmd_noise_study(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let seed = cfg.seed()?;
    cfg.validate_common()?;
    if cfg.noise_levels.is_empty() {
        return Err(Error::Config("noise_levels is empty".into()));
    }
    let grid = cfg.grid()?;
    let template = cfg.params.hyperparams(seed)?;
    let loaded = load_and_split(cfg, seed)?;
    let out = prepare_out(cfg)?;
    let jobs: Vec<(usize, f64)> = (0..loaded.len()).flat_map(|d| cfg.noise_levels.iter().map(move |&l| (d, l))).collect();
    let runs: Vec<(SplitRun, Vec<usize>)> = jobs
        .par_iter()
        .map(|&(d, level)| run_split(cfg, seed, &loaded[d], Some(level), &grid, &template))
        .collect();

    let models = model_names(cfg);
    let mut datasets = Vec::new();
    let mut csv = String::from("dataset,level");
    for m in &models {
        csv.push_str(&format!(",{m}_acc"));
    }
    csv.push('\n');
    let mut tables = Vec::new();
    let mut timings = Vec::new();
    let mut runs = runs.into_iter();
    for item in &loaded {
        let mut levels = Vec::new();
        let mut sums = vec![(0.0, 0usize); models.len()];
        let mut name = item.path.display().to_string();
        for &level in &cfg.noise_levels {
            let (run, flipped) = runs.next().expect("one run per job");
            if let Some(d) = &run.result.dataset {
                name = d.name.clone();
            }
            csv.push_str(&format!("{name},{level}"));
            for (j, m) in run.result.models.iter().enumerate() {
                match &m.result {
                    Some(r) => {
                        sums[j].0 += r.accuracy;
                        sums[j].1 += 1;
                        csv.push_str(&format!(",{}", r.accuracy));
                    }
                    None => csv.push(','),
                }
            }
            csv.push('\n');
            for (t, table) in run.tables {
                tables.push((format!("{t}__noise{level}"), table));
            }
            timings.extend(run.timings);
            levels.push(NoiseLevelResult {
                level,
                noise_seed: (level > 0.0).then(|| rng::derive(seed, &[TAG_NOISE, item.index as u64, level.to_bits()])),
                flipped,
                result: run.result,
            });
        }
        datasets.push(NoiseDataset {
            name,
            path: item.path.display().to_string(),
            levels,
            level_average: sums.iter().map(|&(s, c)| (c > 0).then(|| s / c as f64)).collect(),
        });
    }
    for d in &datasets {
        csv.push_str(&format!("{},average", d.name));
        for a in &d.level_average {
            csv.push_str(&a.map(|v| format!(",{v}")).unwrap_or_else(|| ",".into()));
        }
        csv.push('\n');
    }
    fs::write(out.join("noise_accuracy.csv"), csv)?;
    write_tables(&out.join("cv"), &tables)?;
    write_json(&out.join("timings.json"), &timings)?;
    let report = NoiseReport {
        command: "noise-study",
        seed,
        config: echo(cfg),
        models,
        datasets,
    };
    let path = out.join("noise_report.json");
    write_json(&path, &report)?;
    Ok(path)
}

#[derive(Serialize)]
struct AggregateReport {
    command: &'static str,
    matrix_file: String,
    aggregate: Aggregate,
}

pub fn cmd_aggregate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let ac = cfg.aggregate.as_ref().ok_or_else(|| Error::Config("missing [aggregate] section".into()))?;
    require_file(&ac.matrix)?;
    let text = fs::read_to_string(&ac.matrix)?;
    let (models, names, matrix) = parse_matrix_csv(&text)?;
    let agg = aggregate(&models, &names, &matrix, cfg.q_alpha, cfg.f_critical)?;
    let out = prepare_out(cfg)?;
    if let Some(t) = &agg.rank_table {
        fs::write(out.join("ranks.csv"), t.to_csv(&models, &names))?;
    }
    let report = AggregateReport {
        command: "aggregate",
        matrix_file: ac.matrix.display().to_string(),
        aggregate: agg,
    };
    let path = out.join("aggregate_report.json");
    write_json(&path, &report)?;
    Ok(path)
}

/// Feature matrix of a dataset file, for callers that only need rows.
pub fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    Ok(dataset::load(path)?.features().clone())
}
