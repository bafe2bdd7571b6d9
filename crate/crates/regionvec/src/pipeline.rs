//! Clocked training and the parallel combination sweep.

use std::time::Instant;

use rayon::prelude::*;
use regionvec_core::data::Dataset;
use regionvec_core::downstream::{self, EvalConfig, EvalReport, RunEval};
use regionvec_core::graph::View;
use regionvec_core::losses::LossBreakdown;
use regionvec_core::trainer::{self, TrainConfig, TrainResult};
use regionvec_core::Error as CoreError;

use crate::error::Result;

/// [`trainer::train_with`] with `wall_time` filled in.
pub fn train_timed(
    dataset: &Dataset,
    cfg: &TrainConfig,
    observe: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainResult> {
    let start = Instant::now();
    let mut result = trainer::train_with(dataset, cfg, observe)?;
    result.wall_time = start.elapsed();
    Ok(result)
}

/// Runs every (combination, run) pair on `workers` threads (0 picks the
/// core count). Results are gathered in job order, so the report does not
/// depend on the worker count.
pub fn parallel_sweep(
    dataset: &Dataset,
    combos: &[Vec<View>],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    workers: usize,
) -> Result<EvalReport> {
    if combos.is_empty() {
        return Err(CoreError::EmptyViews.into());
    }
    if eval_cfg.runs == 0 {
        return Err(CoreError::InvalidConfig("runs must be at least 1".into()).into());
    }
    downstream::sweep_tasks(dataset, eval_cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CoreError::InvalidConfig(format!("worker pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..eval_cfg.runs).map(move |r| (c, r)))
        .collect();
    let results: Vec<RunEval> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, run)| {
                downstream::evaluate_run(dataset, &combos[c], train_cfg, eval_cfg, run)
            })
            .collect::<std::result::Result<_, _>>()
    })?;
    let mut results = results.into_iter();
    let per_combo: Vec<Vec<RunEval>> = combos
        .iter()
        .map(|_| results.by_ref().take(eval_cfg.runs).collect())
        .collect();
    Ok(downstream::assemble_report(combos, &per_combo))
}
