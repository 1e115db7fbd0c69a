//! Paired synthetic regret sweeps over prior families and sequence lengths.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use poisson_eb::estimators::{build_estimator, Estimator, EstimatorContext};
use poisson_eb::poisson::{mmse_default, sample_batch, BayesTable};
use poisson_eb::prior::DiscretePrior;
use poisson_eb::priors::{multinomial_grid_prior, sample_neural_prior, worst_case_prior_cached, WorstCaseConfig};
use poisson_eb::regret::{batch_loss, summarize, BatchLoss, RegretReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tinyformer::checkpoint::load_params;
use tinyformer::TransformerEstimator;

use crate::error::{Error, Result};
use crate::stats::{paired_t_test, plackett_luce_fit, rank_by_loss, PlackettLuceFit};

/// Id of the Bayes rule of each batch's own prior.
pub const ORACLE_ID: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    /// The least-favorable prior on `[0, theta_max]`.
    WorstCase,
    /// Dirichlet weights on an even grid over `[0, theta_max]`.
    Multinomial,
    /// Discretized random neural pushforward scaled to `[0, theta_max]`.
    Neural,
}

impl PriorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WorstCase => "worst_case",
            Self::Multinomial => "multinomial",
            Self::Neural => "neural",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// A trained transformer registered under `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub estimators: Vec<String>,
    pub models: Vec<ModelRef>,
    pub families: Vec<PriorFamily>,
    pub theta_max: f64,
    pub lengths: Vec<usize>,
    /// Priors sampled per family (the worst-case family always has one).
    pub priors: usize,
    /// Batches per prior and length.
    pub batches: usize,
    pub multinomial_grid: usize,
    pub neural_atoms: usize,
    pub neural_draws: usize,
    /// Set by the caller; not part of the config schema.
    #[serde(skip)]
    pub seed: u64,
    pub context: EstimatorContext,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            estimators: ["mle", "robbins", "erm", "npmle", "gs"].map(String::from).to_vec(),
            models: Vec::new(),
            families: vec![PriorFamily::WorstCase, PriorFamily::Neural],
            theta_max: 50.0,
            lengths: vec![128, 256, 512, 1024, 2048],
            priors: 64,
            batches: 32,
            multinomial_grid: 501,
            neural_atoms: 200,
            neural_draws: 20_000,
            seed: 0,
            context: EstimatorContext::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.estimators.is_empty() {
            return bad("no estimators".into());
        }
        if self.families.is_empty() || self.lengths.is_empty() {
            return bad("families and lengths must be non-empty".into());
        }
        if self.lengths.contains(&0) {
            return bad("lengths must be positive".into());
        }
        if self.priors == 0 || self.batches == 0 {
            return bad("priors and batches must be >= 1".into());
        }
        if !(self.theta_max > 0.0 && self.theta_max.is_finite()) {
            return bad(format!("theta_max must be positive, got {}", self.theta_max));
        }
        if self.multinomial_grid == 0 || self.neural_atoms == 0 || self.neural_draws < self.neural_atoms {
            return bad("grid and atom counts must be positive with neural_draws >= neural_atoms".into());
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.estimators {
            if !seen.insert(id) {
                return bad(format!("estimator `{id}` listed twice"));
            }
        }
        Ok(())
    }
}

/// Builds a registry estimator or loads a model checkpoint by id.
pub fn resolve_estimator(id: &str, ctx: &EstimatorContext, models: &[ModelRef]) -> Result<Box<dyn Estimator>> {
    if let Some(m) = models.iter().find(|m| m.id == id) {
        let params = load_params(&m.path)?;
        return Ok(Box::new(TransformerEstimator::new(id, params)));
    }
    Ok(build_estimator(id, ctx)?)
}

/// Draws one prior of `family`; `worst_case` must hold the solved least-favorable prior.
pub fn sample_family_prior(
    family: PriorFamily,
    spec: &ExperimentSpec,
    worst_case: Option<&DiscretePrior>,
    rng: &mut ChaCha8Rng,
) -> Result<DiscretePrior> {
    Ok(match family {
        PriorFamily::WorstCase => worst_case.expect("worst-case prior solved up front").clone(),
        PriorFamily::Multinomial => multinomial_grid_prior(spec.multinomial_grid, spec.theta_max, 1.0, rng)?,
        PriorFamily::Neural => {
            let nn = sample_neural_prior(rng);
            nn.discretize(spec.theta_max, spec.neural_draws, spec.neural_atoms, rng)?
        }
    })
}

fn stream_seed(seed: u64, family: PriorFamily, n: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (family.index() << 48) ^ n as u64
}

/// Everything measured in one (family, length) cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub family: PriorFamily,
    pub n: usize,
    /// One report per estimator, in spec order; `None` if every batch failed.
    pub reports: Vec<Option<RegretReport>>,
    /// Per-batch regret, indexed `[estimator][batch]`.
    pub losses: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticResult {
    pub estimators: Vec<String>,
    pub cells: Vec<Cell>,
}

fn run_cell(
    family: PriorFamily,
    n: usize,
    spec: &ExperimentSpec,
    priors: &[(DiscretePrior, BayesTable, f64)],
    estimators: &[Box<dyn Estimator>],
) -> Cell {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, family, n));
    let mut per_est: Vec<Vec<Option<BatchLoss>>> = vec![Vec::new(); spec.estimators.len()];
    for (prior, table, _) in priors {
        for _ in 0..spec.batches {
            let batch = sample_batch(prior, n, family.as_str(), &mut rng);
            for (k, id) in spec.estimators.iter().enumerate() {
                let loss = if id == ORACLE_ID {
                    table.estimate(&batch.xs).ok().and_then(|e| batch_loss(&e, &batch, table).ok()).map(|(regret, mse)| BatchLoss {
                        regret,
                        mse,
                        wall_time: 0.0,
                    })
                } else {
                    let est = &estimators[k];
                    est.run(&batch.xs).ok().and_then(|r| {
                        let (regret, mse) = batch_loss(&r.estimates, &batch, table).ok()?;
                        Some(BatchLoss { regret, mse, wall_time: r.wall_time })
                    })
                };
                per_est[k].push(loss);
            }
        }
    }
    let mmse = priors.iter().map(|p| p.2).sum::<f64>() / priors.len() as f64;
    let reports = spec
        .estimators
        .iter()
        .zip(&per_est)
        .map(|(id, l)| summarize(id, family.as_str(), n, mmse, l).ok())
        .collect();
    let losses = per_est.iter().map(|l| l.iter().map(|b| b.map(|b| b.regret)).collect()).collect();
    Cell { family, n, reports, losses }
}

/// Runs every (family, length) cell; all estimators in a cell see the same batches.
pub fn run_synthetic(spec: &ExperimentSpec) -> Result<SyntheticResult> {
    spec.validate()?;
    let estimators: Vec<Box<dyn Estimator>> = spec
        .estimators
        .iter()
        .map(|id| {
            if id == ORACLE_ID {
                Ok(Box::new(poisson_eb::estimators::FnEstimator::new(ORACLE_ID, |xs: &[u64]| Ok(vec![0.0; xs.len()])))
                    as Box<dyn Estimator>)
            } else {
                resolve_estimator(id, &spec.context, &spec.models)
            }
        })
        .collect::<Result<_>>()?;
    let worst_case = if spec.families.contains(&PriorFamily::WorstCase) {
        Some(worst_case_prior_cached(&WorstCaseConfig::new(spec.theta_max))?.prior)
    } else {
        None
    };
    let mut prior_sets = BTreeMap::new();
    for &family in &spec.families {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, family, 0) ^ 0x5eed);
        let count = if family == PriorFamily::WorstCase { 1 } else { spec.priors };
        let priors = (0..count)
            .map(|_| {
                let p = sample_family_prior(family, spec, worst_case.as_ref(), &mut rng)?;
                let table = BayesTable::covering(&p);
                let mmse = mmse_default(&p);
                Ok((p, table, mmse))
            })
            .collect::<Result<Vec<_>>>()?;
        prior_sets.insert(family, priors);
    }
    let jobs: Vec<(PriorFamily, usize)> =
        spec.families.iter().flat_map(|&f| spec.lengths.iter().map(move |&n| (f, n))).collect();
    let cells = jobs.par_iter().map(|&(f, n)| run_cell(f, n, spec, &prior_sets[&f], &estimators)).collect();
    Ok(SyntheticResult { estimators: spec.estimators.clone(), cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestRow {
    pub family: String,
    pub n: usize,
    pub estimator_a: String,
    pub estimator_b: String,
    pub mean_diff: f64,
    /// One-sided p-value for `a` having lower regret than `b`.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlRow {
    pub family: String,
    pub estimator: String,
    pub coefficient: f64,
}

impl SyntheticResult {
    pub fn cell(&self, family: PriorFamily, n: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.family == family && c.n == n)
    }

    pub fn report(&self, family: PriorFamily, n: usize, id: &str) -> Option<&RegretReport> {
        let k = self.estimators.iter().position(|e| e == id)?;
        self.cell(family, n)?.reports[k].as_ref()
    }

    /// Paired per-batch regrets of two estimators, keeping batches where both succeeded.
    pub fn paired_losses(&self, family: PriorFamily, n: usize, a: &str, b: &str) -> Option<(Vec<f64>, Vec<f64>)> {
        let cell = self.cell(family, n)?;
        let ia = self.estimators.iter().position(|e| e == a)?;
        let ib = self.estimators.iter().position(|e| e == b)?;
        Some(
            cell.losses[ia]
                .iter()
                .zip(&cell.losses[ib])
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .unzip(),
        )
    }

    pub fn ttests(&self) -> Vec<TTestRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for a in &self.estimators {
                for b in &self.estimators {
                    if a == b {
                        continue;
                    }
                    let (la, lb) = self.paired_losses(cell.family, cell.n, a, b).expect("cell and ids exist");
                    let mean_diff = if la.is_empty() {
                        f64::NAN
                    } else {
                        la.iter().zip(&lb).map(|(x, y)| x - y).sum::<f64>() / la.len() as f64
                    };
                    rows.push(TTestRow {
                        family: cell.family.as_str().into(),
                        n: cell.n,
                        estimator_a: a.clone(),
                        estimator_b: b.clone(),
                        mean_diff,
                        p_value: paired_t_test(&la, &lb).ok(),
                    });
                }
            }
        }
        rows
    }

    /// Plackett-Luce fit per family over every batch (all lengths) where all estimators succeeded.
    pub fn plackett_luce(&self, anchor: &str) -> Result<Vec<(PriorFamily, PlackettLuceFit)>> {
        let mut families: Vec<PriorFamily> = self.cells.iter().map(|c| c.family).collect();
        families.dedup();
        let mut out = Vec::new();
        for family in families {
            let mut records = Vec::new();
            for cell in self.cells.iter().filter(|c| c.family == family) {
                let batches = cell.losses.first().map_or(0, Vec::len);
                for b in 0..batches {
                    let row: Option<Vec<(String, f64)>> =
                        self.estimators.iter().zip(&cell.losses).map(|(id, l)| Some((id.clone(), l[b]?))).collect();
                    if let Some(row) = row {
                        records.push(rank_by_loss(&row));
                    }
                }
            }
            out.push((family, plackett_luce_fit(&records, anchor, 10_000)?));
        }
        Ok(out)
    }

    pub fn write_regret_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "family", "n", "estimator", "regret", "std_err", "mse", "mmse", "direct_mse", "batches", "failures", "wall_time",
        ])?;
        for cell in &self.cells {
            for (id, rep) in self.estimators.iter().zip(&cell.reports) {
                let fields: Vec<String> = match rep {
                    Some(r) => vec![
                        r.regret.to_string(),
                        r.std_err.to_string(),
                        r.mse.to_string(),
                        r.mmse.to_string(),
                        r.direct_mse.to_string(),
                        r.batches.to_string(),
                        r.failures.to_string(),
                        r.wall_time.to_string(),
                    ],
                    None => {
                        let total = cell.losses.first().map_or(0, Vec::len);
                        vec!["".into(), "".into(), "".into(), "".into(), "".into(), "0".into(), total.to_string(), "".into()]
                    }
                };
                let mut rec = vec![cell.family.as_str().to_string(), cell.n.to_string(), id.clone()];
                rec.extend(fields);
                csv.write_record(&rec)?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_ttest_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for row in self.ttests() {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_pl_csv<W: Write>(&self, anchor: &str, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for (family, fit) in self.plackett_luce(anchor)? {
            for (id, c) in fit.ids.iter().zip(&fit.coefficients) {
                csv.serialize(PlRow { family: family.as_str().into(), estimator: id.clone(), coefficient: *c })?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            estimators: vec![ORACLE_ID.into(), "mle".into(), "robbins_smoothed".into()],
            families: vec![PriorFamily::Multinomial, PriorFamily::Neural],
            theta_max: 10.0,
            lengths: vec![32, 64],
            priors: 3,
            batches: 4,
            multinomial_grid: 21,
            neural_atoms: 20,
            neural_draws: 400,
            seed: 7,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn oracle_has_zero_regret_and_cells_are_complete() {
        let res = run_synthetic(&small_spec()).unwrap();
        assert_eq!(res.cells.len(), 4);
        for cell in &res.cells {
            let oracle = res.report(cell.family, cell.n, ORACLE_ID).unwrap();
            assert_eq!(oracle.regret, 0.0);
            assert_eq!(oracle.batches, 12);
            assert!(res.report(cell.family, cell.n, "mle").unwrap().regret > 0.0);
        }
    }

    #[test]
    fn deterministic_csv() {
        let spec = small_spec();
        let strip = |bytes: Vec<u8>| -> Vec<String> {
            String::from_utf8(bytes).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
        };
        let mut a = Vec::new();
        run_synthetic(&spec).unwrap().write_regret_csv(&mut a).unwrap();
        let mut b = Vec::new();
        run_synthetic(&spec).unwrap().write_regret_csv(&mut b).unwrap();
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn tests_and_rankings_cover_all_pairs() {
        let res = run_synthetic(&small_spec()).unwrap();
        assert_eq!(res.ttests().len(), 4 * 6);
        let pl = res.plackett_luce("mle").unwrap();
        assert_eq!(pl.len(), 2);
        for (_, fit) in pl {
            assert_eq!(fit.coefficient("mle"), Some(0.0));
            assert!(fit.coefficient(ORACLE_ID).unwrap() > 0.0);
        }
    }

    #[test]
    fn rejects_duplicate_estimators() {
        let spec = ExperimentSpec { estimators: vec!["mle".into(), "mle".into()], ..small_spec() };
        assert!(run_synthetic(&spec).is_err());
    }
}
