//! Downstream evaluation: Ridge regression on embeddings under k-fold
//! cross-validation, and the combination sweep built on top of it.
//!
//! Embedding columns are standardized with training-fold statistics only.
//! R² uses the evaluation fold's own mean in the total sum of squares and is
//! `None` when that fold's labels are constant.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::graph::{self, View};
use crate::rng::SplitMix64;
use crate::trainer::{self, TrainConfig};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub folds: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Tasks regressed on `ln(1 + y)` instead of `y`.
    pub log_transform: BTreeSet<String>,
    /// Training seeds per combination in a sweep.
    pub runs: usize,
    /// Tasks to score; empty means every labelled task.
    pub tasks: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            ridge_lambda: 1.0,
            seed: 0,
            log_transform: BTreeSet::new(),
            runs: 10,
            tasks: Vec::new(),
        }
    }
}

/// Seeded shuffle, then contiguous folds whose sizes differ by at most one
/// (larger folds first).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Per-column centering and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let m = x.rows() as f64;
        let mut mean = alloc::vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (acc, v) in mean.iter_mut().zip(x.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = alloc::vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = libm::sqrt(v / m);
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows())
            .map(|i| {
                self.intercept
                    + x.row(i)
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// In-place Cholesky factor `L` of a symmetric positive-definite matrix.
fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::SingularSystem);
        }
        let d = libm::sqrt(d);
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[(k, i)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    z
}

/// `β = (XᵀX + λI)⁻¹ Xᵀ (y − ȳ)`, intercept `ȳ`. Expects centered columns.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let (m, d) = x.shape();
    if y.len() != m {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: m,
        });
    }
    if m < 2 {
        return Err(Error::InvalidFolds { k: 1, n: m });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(
            "ridge lambda must be nonnegative".into(),
        ));
    }
    let y_mean = y.iter().sum::<f64>() / m as f64;
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = alloc::vec![0.0; d];
    for (i, yi) in y.iter().enumerate() {
        let row = x.row(i);
        let yc = yi - y_mean;
        for a in 0..d {
            rhs[a] += row[a] * yc;
            for b in a..d {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        gram[(a, a)] += lambda;
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let l = cholesky(&gram)?;
    Ok(RidgeModel {
        coefficients: cholesky_solve(&l, &rhs),
        intercept: y_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the evaluated labels are constant.
    pub r2: Option<f64>,
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    let m = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / m;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        abs += libm::fabs(t - p);
        sq += (t - p) * (t - p);
        tot += (t - mean) * (t - mean);
    }
    Ok(Metrics {
        mae: abs / m,
        rmse: libm::sqrt(sq / m),
        r2: (tot > 0.0).then(|| 1.0 - sq / tot),
    })
}

/// Mean of the defined values, `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
}

impl TaskEval {
    fn from_folds(folds: Vec<Metrics>) -> Self {
        let k = folds.len() as f64;
        let mean = Metrics {
            mae: folds.iter().map(|m| m.mae).sum::<f64>() / k,
            rmse: folds.iter().map(|m| m.rmse).sum::<f64>() / k,
            r2: mean_defined(folds.iter().map(|m| m.r2)),
        };
        Self { folds, mean }
    }
}

/// Cross-validated Ridge with `embeddings` as the sole input.
pub fn evaluate(
    embeddings: &Matrix,
    labels: &[Option<f64>],
    task: &str,
    cfg: &EvalConfig,
) -> Result<TaskEval> {
    if labels.len() != embeddings.rows() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: embeddings.rows(),
        });
    }
    let log = cfg.log_transform.contains(task);
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        let Some(y) = *y else { continue };
        let y = if log {
            if !(y > -1.0) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "cannot log-transform {task} value {y}"
                )));
            }
            libm::log1p(y)
        } else {
            y
        };
        ids.push(i);
        ys.push(y);
    }
    let folds = kfold_split(ids.len(), cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let rows_of = |idx: &[usize]| {
            Matrix::from_rows(
                &idx.iter()
                    .map(|&k| embeddings.row(ids[k]))
                    .collect::<Vec<_>>(),
            )
        };
        let (x_train, x_test) = (rows_of(&train)?, rows_of(test)?);
        let y_train: Vec<f64> = train.iter().map(|&k| ys[k]).collect();
        let y_test: Vec<f64> = test.iter().map(|&k| ys[k]).collect();
        let std = Standardizer::fit(&x_train);
        let model = ridge_fit(&std.apply(&x_train), &y_train, cfg.ridge_lambda)?;
        results.push(metrics(&y_test, &model.predict(&std.apply(&x_test)))?);
    }
    Ok(TaskEval::from_folds(results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub run: usize,
    pub fold: usize,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub combination: String,
    pub tasks: BTreeMap<String, TaskSummary>,
    pub avg_r2: Option<f64>,
}

/// Sweep results, sorted by descending average R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Task evaluations of one training run.
pub type RunEval = BTreeMap<String, TaskEval>;

/// Tasks a sweep scores on `dataset`.
pub fn sweep_tasks(dataset: &Dataset, cfg: &EvalConfig) -> Result<Vec<String>> {
    if cfg.tasks.is_empty() {
        return Ok(dataset.labels.keys().cloned().collect());
    }
    for t in &cfg.tasks {
        if !dataset.labels.contains_key(t) {
            return Err(Error::UnknownTask(t.clone()));
        }
    }
    Ok(cfg.tasks.clone())
}

/// Training config for run `run` of a combination.
pub fn run_config(views: &[View], base: &TrainConfig, run: usize) -> TrainConfig {
    TrainConfig {
        views: views.to_vec(),
        seed: base.seed.wrapping_add(run as u64),
        ..base.clone()
    }
}

/// Trains run `run` of `views` and scores every sweep task.
pub fn evaluate_run(
    dataset: &Dataset,
    views: &[View],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    run: usize,
) -> Result<RunEval> {
    let result = trainer::train(dataset, &run_config(views, train_cfg, run))?;
    sweep_tasks(dataset, eval_cfg)?
        .into_iter()
        .map(|task| {
            let eval = evaluate(&result.embeddings, &dataset.labels[&task], &task, eval_cfg)?;
            Ok((task, eval))
        })
        .collect()
}

/// Builds the sorted report from per-run results, given in combination
/// order then run order.
pub fn assemble_report(combos: &[Vec<View>], runs: &[Vec<RunEval>]) -> EvalReport {
    let mut rows: Vec<ReportRow> = combos
        .iter()
        .zip(runs)
        .map(|(views, runs)| {
            let mut tasks: BTreeMap<String, TaskSummary> = BTreeMap::new();
            for (run, evals) in runs.iter().enumerate() {
                for (task, eval) in evals {
                    let entry = tasks.entry(task.clone()).or_insert_with(|| TaskSummary {
                        mae: 0.0,
                        rmse: 0.0,
                        r2: None,
                        folds: Vec::new(),
                    });
                    entry
                        .folds
                        .extend(eval.folds.iter().enumerate().map(|(fold, m)| FoldRecord {
                            run,
                            fold,
                            mae: m.mae,
                            rmse: m.rmse,
                            r2: m.r2,
                        }));
                }
            }
            for summary in tasks.values_mut() {
                let k = summary.folds.len() as f64;
                summary.mae = summary.folds.iter().map(|f| f.mae).sum::<f64>() / k;
                summary.rmse = summary.folds.iter().map(|f| f.rmse).sum::<f64>() / k;
                summary.r2 = mean_defined(summary.folds.iter().map(|f| f.r2));
            }
            let avg_r2 = mean_defined(tasks.values().map(|t| t.r2));
            ReportRow {
                combination: graph::combination_label(views),
                tasks,
                avg_r2,
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.avg_r2, b.avg_r2) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => core::cmp::Ordering::Less,
        (None, Some(_)) => core::cmp::Ordering::Greater,
        (None, None) => core::cmp::Ordering::Equal,
    });
    EvalReport { rows }
}

/// Sequential sweep over `combos × eval_cfg.runs`.
pub fn sweep(
    dataset: &Dataset,
    combos: &[Vec<View>],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<EvalReport> {
    if combos.is_empty() {
        return Err(Error::EmptyViews);
    }
    if eval_cfg.runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let runs = combos
        .iter()
        .map(|views| {
            (0..eval_cfg.runs)
                .map(|run| evaluate_run(dataset, views, train_cfg, eval_cfg, run))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_report(combos, &runs))
}
