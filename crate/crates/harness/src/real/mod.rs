//! Real-data prediction tasks: ingestion, scoring against held-out counts, aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use poisson_eb::estimators::Estimator;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean_ci95, paired_t_test, plackett_luce_fit, rank_by_loss, PlackettLuceFit};

pub mod mlb;
pub mod nhl;
pub mod wordfreq;

pub use mlb::{load_mlb, MidpointRule, MlbTasks};
pub use nhl::{load_nhl, PositionFilter};
pub use wordfreq::{load_wordfreq, tokenize, WordfreqConfig};

/// Counts before and after a split: `X ~ Poi(theta)` and `Y ~ Poi(n_y * theta)` per key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTask {
    pub task_id: String,
    /// Player ids or words, sorted.
    pub keys: Vec<String>,
    pub xs: Vec<u64>,
    pub ys: Vec<u64>,
    pub n_y: f64,
}

impl PredictionTask {
    /// Builds a task from per-key `(x, y)` pairs; keys come out sorted.
    pub fn from_map(task_id: impl Into<String>, pairs: BTreeMap<String, (u64, u64)>, n_y: f64) -> Result<Self> {
        let task_id = task_id.into();
        if !(n_y > 0.0 && n_y.is_finite()) {
            return Err(Error::InvalidArgument(format!("task {task_id}: n_y must be positive, got {n_y}")));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyTasks(format!("task {task_id} has no items")));
        }
        let mut keys = Vec::with_capacity(pairs.len());
        let mut xs = Vec::with_capacity(pairs.len());
        let mut ys = Vec::with_capacity(pairs.len());
        for (k, (x, y)) in pairs {
            keys.push(k);
            xs.push(x);
            ys.push(y);
        }
        Ok(Self { task_id, keys, xs, ys, n_y })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task_id: String,
    pub estimator_id: String,
    pub rmse_norm: f64,
    pub mae_norm: f64,
    pub rmse_ratio: f64,
    pub mae_ratio: f64,
}

fn errors(estimates: &[f64], task: &PredictionTask) -> (f64, f64) {
    let k = task.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (t, &y) in estimates.iter().zip(&task.ys) {
        let e = task.n_y * t - y as f64;
        se += e * e;
        ae += e.abs();
    }
    ((se / k).sqrt() / task.n_y, ae / k / task.n_y)
}

fn ratio(a: f64, mle: f64) -> f64 {
    if mle == 0.0 {
        if a == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        a / mle
    }
}

/// Scores every estimator on one task, with ratios against MLE on the same task.
///
/// Estimates are computed from `xs` alone before `ys` is read.
pub fn score_task(task: &PredictionTask, estimators: &[&dyn Estimator]) -> Result<Vec<ScoreRow>> {
    let estimates: Vec<Vec<f64>> = estimators
        .iter()
        .map(|e| {
            let est = e.estimate(&task.xs)?;
            if est.len() != task.len() {
                return Err(Error::InvalidArgument(format!("{} returned {} estimates for {} items", e.id(), est.len(), task.len())));
            }
            Ok(est)
        })
        .collect::<Result<_>>()?;
    let mle: Vec<f64> = task.xs.iter().map(|&x| x as f64).collect();
    let (mle_rmse, mle_mae) = errors(&mle, task);
    Ok(estimators
        .iter()
        .zip(&estimates)
        .map(|(e, est)| {
            let (rmse, mae) = errors(est, task);
            ScoreRow {
                task_id: task.task_id.clone(),
                estimator_id: e.id().to_string(),
                rmse_norm: rmse,
                mae_norm: mae,
                rmse_ratio: ratio(rmse, mle_rmse),
                mae_ratio: ratio(mae, mle_mae),
            }
        })
        .collect())
}

/// Scores all tasks in parallel; rows are ordered by task then estimator.
pub fn score_tasks(tasks: &[PredictionTask], estimators: &[&dyn Estimator]) -> Result<Vec<ScoreRow>> {
    let per: Vec<Result<Vec<ScoreRow>>> = tasks.par_iter().map(|t| score_task(t, estimators)).collect();
    let mut rows = Vec::new();
    for r in per {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub estimator_id: String,
    pub tasks: usize,
    /// Mean of `100 * (1 - rmse_ratio)` with its 95% half-width.
    pub rmse_improvement: f64,
    pub rmse_ci: f64,
    pub mae_improvement: f64,
    pub mae_ci: f64,
    /// One-sided paired t-test of lower `rmse_norm` than MLE; empty for MLE itself.
    pub p_vs_mle: Option<f64>,
    pub pl_coefficient: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub plackett_luce: Option<PlackettLuceFit>,
}

/// Per-estimator improvement over MLE, paired t-tests and Plackett-Luce coefficients.
///
/// Every estimator must have a row for every task; `mle` must be among them.
pub fn aggregate_scores(rows: &[ScoreRow]) -> Result<Aggregate> {
    if rows.is_empty() {
        return Err(Error::EmptyTasks("no score rows".into()));
    }
    let tasks: BTreeSet<&str> = rows.iter().map(|r| r.task_id.as_str()).collect();
    let mut ids: Vec<&str> = Vec::new();
    for r in rows {
        if !ids.contains(&r.estimator_id.as_str()) {
            ids.push(&r.estimator_id);
        }
    }
    let mut cell: BTreeMap<(&str, &str), &ScoreRow> = BTreeMap::new();
    for r in rows {
        if cell.insert((r.task_id.as_str(), r.estimator_id.as_str()), r).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate row {}/{}", r.task_id, r.estimator_id)));
        }
    }
    let missing: Vec<String> = tasks
        .iter()
        .flat_map(|t| ids.iter().map(move |e| (*t, *e)))
        .filter(|k| !cell.contains_key(k))
        .map(|(t, e)| format!("{t}/{e}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Unbalanced(missing));
    }
    if !ids.contains(&"mle") {
        return Err(Error::InvalidArgument("aggregation needs `mle` rows".into()));
    }
    let column = |id: &str, f: fn(&ScoreRow) -> f64| -> Vec<f64> { tasks.iter().map(|t| f(cell[&(*t, id)])).collect() };
    let plackett_luce = if ids.len() >= 2 {
        let records: Vec<Vec<String>> = tasks
            .iter()
            .map(|t| rank_by_loss(&ids.iter().map(|e| (e.to_string(), cell[&(*t, *e)].rmse_norm)).collect::<Vec<_>>()))
            .collect();
        Some(plackett_luce_fit(&records, "mle", 10_000)?)
    } else {
        None
    };
    let mle_rmse = column("mle", |r| r.rmse_norm);
    let out = ids
        .iter()
        .map(|&id| {
            let imp = |f: fn(&ScoreRow) -> f64| {
                let v: Vec<f64> = column(id, f).iter().map(|r| 100.0 * (1.0 - r)).collect();
                mean_ci95(&v)
            };
            let (rmse_improvement, rmse_ci) = imp(|r| r.rmse_ratio);
            let (mae_improvement, mae_ci) = imp(|r| r.mae_ratio);
            let p_vs_mle = if id == "mle" { None } else { paired_t_test(&column(id, |r| r.rmse_norm), &mle_rmse).ok() };
            AggregateRow {
                estimator_id: id.to_string(),
                tasks: tasks.len(),
                rmse_improvement,
                rmse_ci,
                mae_improvement,
                mae_ci,
                p_vs_mle,
                pl_coefficient: plackett_luce.as_ref().and_then(|f| f.coefficient(id)),
            }
        })
        .collect();
    Ok(Aggregate { rows: out, plackett_luce })
}

pub fn write_scores_csv<W: Write>(rows: &[ScoreRow], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes one block of rows per named group (for example MLB batting and pitching).
pub fn write_aggregate_csv<W: Write>(groups: &[(&str, &Aggregate)], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "group", "estimator_id", "tasks", "rmse_improvement", "rmse_ci", "mae_improvement", "mae_ci", "p_vs_mle", "pl_coefficient",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (group, agg) in groups {
        for r in &agg.rows {
            csv.write_record([
                group.to_string(),
                r.estimator_id.clone(),
                r.tasks.to_string(),
                r.rmse_improvement.to_string(),
                r.rmse_ci.to_string(),
                r.mae_improvement.to_string(),
                r.mae_ci.to_string(),
                opt(r.p_vs_mle),
                opt(r.pl_coefficient),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Header check shared by the CSV loaders.
pub(crate) fn check_headers(path: &std::path::Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    for col in expected {
        if !got.contains(col) {
            return Err(Error::Schema { path: path.to_path_buf(), reason: format!("missing column `{col}` (found {got:?})") });
        }
    }
    Ok(())
}
