//! Subcommand drivers.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use eb_harness::certify::certify_robbins;
use eb_harness::probes::{probe_depth_profile, write_profile_csv, ProbeTarget};
use eb_harness::real::{
    aggregate_scores, load_mlb, load_nhl, load_wordfreq, score_tasks, write_aggregate_csv, write_scores_csv, Aggregate,
    PredictionTask, ScoreRow,
};
use eb_harness::synthetic::{resolve_estimator, run_synthetic, ModelRef};
use eb_harness::timing::timing_benchmark;
use poisson_eb::estimators::{Estimator, EstimatorContext};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use tinyformer::checkpoint::{load_params, save_params};
use tinyformer::train::write_log_csv;

use crate::config::{Dataset, RunConfig};
use crate::exit::{Failure, Kind};
use crate::manifest::Recorder;
use crate::{BenchArgs, CertifyArgs, Cli, Command, EvalCommand, ProbeArgs, RealArgs, SyntheticArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.run.output_dir = o.clone();
    }
    if let Some(t) = g.threads {
        cfg.run.threads = Some(t);
    }
    cfg.run.deterministic |= g.deterministic;
    if cfg.run.deterministic {
        cfg.run.threads = Some(1);
        cfg.train.parallel = false;
    }
    cfg.validate()?;
    if let Some(t) = cfg.run.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Train(a) => train(cfg, a),
        Command::Eval(EvalCommand::Synthetic(a)) => eval_synthetic(cfg, a),
        Command::Eval(EvalCommand::Real(a)) => eval_real(cfg, a),
        Command::CertifyRobbins(a) => certify(cfg, a),
        Command::Probe(a) => probe(cfg, a),
        Command::Bench(a) => bench(cfg, a),
    }
}

fn bad_flag(msg: impl Into<String>) -> anyhow::Error {
    Failure::new(Kind::BadConfig, msg).into()
}

/// Parses a flag value with the same spelling the config file uses.
fn enum_flag<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.into()))
        .map_err(|e| bad_flag(format!("--{flag} {value}: {e}")))
}

fn parse_models(specs: &[String]) -> Result<Vec<ModelRef>> {
    specs
        .iter()
        .map(|s| {
            let (id, path) = s.split_once('=').ok_or_else(|| bad_flag(format!("--model expects id=path, got `{s}`")))?;
            Ok(ModelRef { id: id.into(), path: PathBuf::from(path) })
        })
        .collect()
}

fn check_models(models: &[ModelRef]) -> Result<()> {
    for m in models {
        if !m.path.is_file() {
            return Err(Failure::new(Kind::MissingModel, format!("model `{}`: no checkpoint at {}", m.id, m.path.display())).into());
        }
    }
    Ok(())
}

/// Model ids are evaluated even when the estimator list omits them.
fn with_models(mut ids: Vec<String>, models: &[ModelRef]) -> Vec<String> {
    for m in models {
        if !ids.contains(&m.id) {
            ids.push(m.id.clone());
        }
    }
    ids
}

fn resolve_all(ids: &[String], ctx: &EstimatorContext, models: &[ModelRef]) -> Result<Vec<Box<dyn Estimator>>> {
    ids.iter().map(|id| resolve_estimator(id, ctx, models).with_context(|| format!("estimator `{id}`"))).collect()
}

fn out_dir(cfg: &RunConfig, sub: &str) -> PathBuf {
    cfg.run.output_dir.join(sub)
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seq_len {
        cfg.train.seq_len = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = &a.attention {
        cfg.model.attention = enum_flag("attention", v)?;
    }
    if let Some(v) = a.model_seed {
        cfg.model.seed = v;
    }
    cfg.validate()?;
    let mut rec = Recorder::new(&out_dir(&cfg, "train"), "train")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let every = (cfg.train.epochs / 20).max(1);
    let result = tinyformer::train(&cfg.model, &cfg.train, &mut rng, |e| {
        if e.epoch % every == 0 || e.epoch + 1 == cfg.train.epochs {
            eprintln!("epoch {:>5}  loss {:>10.4}  lr {:.5}", e.epoch, e.mean_loss, e.lr);
        }
    });
    let (params, log) = match result {
        Ok(v) => v,
        Err(err) => {
            if let tinyformer::Error::Diverged { log, .. } = &err {
                write_log_csv(log, &rec.path("train_log.csv"))?;
                rec.register("train_log.csv");
                rec.notes.push(format!("diverged: {err}"));
                rec.finish(&cfg)?;
            }
            return Err(err.into());
        }
    };
    save_params(&params, &rec.path("model.tfm"))?;
    rec.register("model.tfm");
    write_log_csv(&log, &rec.path("train_log.csv"))?;
    rec.register("train_log.csv");
    rec.notes.push(format!("parameter checksum {:016x}", params.checksum()));
    eprintln!("saved {}", rec.path("model.tfm").display());
    rec.finish(&cfg)
}

fn eval_synthetic(mut cfg: RunConfig, a: SyntheticArgs) -> Result<()> {
    let spec = &mut cfg.synthetic;
    if let Some(v) = a.estimators {
        spec.estimators = v;
    }
    spec.models.extend(parse_models(&a.models)?);
    if let Some(v) = a.lengths {
        spec.lengths = v;
    }
    if let Some(v) = a.priors {
        spec.priors = v;
    }
    if let Some(v) = a.batches {
        spec.batches = v;
    }
    spec.estimators = with_models(std::mem::take(&mut spec.estimators), &spec.models);
    spec.seed = cfg.run.seed;
    cfg.validate()?;
    check_models(&cfg.synthetic.models)?;
    let mut rec = Recorder::new(&out_dir(&cfg, "eval-synthetic"), "eval synthetic")?;
    let res = run_synthetic(&cfg.synthetic)?;
    res.write_regret_csv(rec.create("regret.csv")?)?;
    res.write_ttest_csv(rec.create("ttests.csv")?)?;
    let anchor = if cfg.synthetic.estimators.iter().any(|e| e == "mle") { "mle" } else { &cfg.synthetic.estimators[0] };
    if cfg.synthetic.estimators.len() >= 2 {
        res.write_pl_csv(anchor, rec.create("plackett_luce.csv")?)?;
    }
    for cell in &res.cells {
        let parts: Vec<String> = res
            .estimators
            .iter()
            .zip(&cell.reports)
            .map(|(id, r)| format!("{id} {}", r.as_ref().map_or("-".into(), |r| format!("{:.3}", r.regret))))
            .collect();
        eprintln!("{} n={}: {}", cell.family.as_str(), cell.n, parts.join(", "));
    }
    rec.finish(&cfg)
}

fn text_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn eval_real(mut cfg: RunConfig, a: RealArgs) -> Result<()> {
    let r = &mut cfg.real;
    if a.dataset.is_some() {
        r.dataset = a.dataset;
    }
    if a.path.is_some() {
        r.path = a.path;
    }
    if let Some(v) = a.estimators {
        r.estimators = v;
    }
    r.models.extend(parse_models(&a.models)?);
    if let Some(v) = &a.position {
        r.position = enum_flag("position", v)?;
    }
    if let Some(v) = &a.midpoint {
        r.midpoint = enum_flag("midpoint", v)?;
    }
    if let Some(v) = a.head_tokens {
        r.wordfreq.head_tokens = v;
    }
    let mut ids = with_models(std::mem::take(&mut r.estimators), &r.models);
    if !ids.iter().any(|e| e == "mle") {
        ids.insert(0, "mle".into());
    }
    r.estimators = ids;
    cfg.validate()?;
    let r = &cfg.real;
    let dataset = r.dataset.ok_or_else(|| bad_flag("eval real needs --dataset or real.dataset"))?;
    let path = r.path.clone().ok_or_else(|| bad_flag("eval real needs --path or real.path"))?;
    if !path.exists() {
        return Err(Failure::new(Kind::BadData, format!("{}: no such file or directory", path.display())).into());
    }
    check_models(&r.models)?;
    let mut rec = Recorder::new(&out_dir(&cfg, "eval-real"), "eval real")?;
    let groups: Vec<(String, Vec<PredictionTask>)> = match dataset {
        Dataset::Nhl => vec![(format!("nhl:{}", r.position.as_str()), load_nhl(&path, r.position)?)],
        Dataset::Mlb => {
            let t = load_mlb(&path, r.midpoint)?;
            vec![("mlb:batting".into(), t.batting), ("mlb:pitching".into(), t.pitching)]
        }
        Dataset::Wordfreq => {
            let mut tasks = Vec::new();
            for f in text_files(&path)? {
                let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                match load_wordfreq(&text, &id, &r.wordfreq) {
                    Ok(t) => tasks.push(t),
                    Err(e @ eb_harness::Error::TooShort { .. }) => {
                        eprintln!("skipping {e}");
                        rec.notes.push(format!("skipped {e}"));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            vec![("wordfreq".into(), tasks)]
        }
    };
    let estimators = resolve_all(&r.estimators, &r.context, &r.models)?;
    let refs: Vec<&dyn Estimator> = estimators.iter().map(|b| b.as_ref()).collect();
    let mut all_rows: Vec<ScoreRow> = Vec::new();
    let mut aggs: Vec<(String, Aggregate)> = Vec::new();
    for (name, tasks) in &groups {
        if tasks.is_empty() {
            rec.notes.push(format!("group {name} has no tasks"));
            continue;
        }
        let rows = score_tasks(tasks, &refs)?;
        let agg = aggregate_scores(&rows)?;
        for row in &agg.rows {
            eprintln!(
                "{name} {:<18} rmse improvement {:>7.2} +- {:.2}%  ({} tasks)",
                row.estimator_id, row.rmse_improvement, row.rmse_ci, row.tasks
            );
        }
        all_rows.extend(rows);
        aggs.push((name.clone(), agg));
    }
    if aggs.is_empty() {
        return Err(eb_harness::Error::EmptyTasks(format!("{}: nothing to score", path.display())).into());
    }
    write_scores_csv(&all_rows, rec.create("scores.csv")?)?;
    let named: Vec<(&str, &Aggregate)> = aggs.iter().map(|(n, a)| (n.as_str(), a)).collect();
    write_aggregate_csv(&named, rec.create("aggregate.csv")?)?;
    rec.finish(&cfg)
}

fn certify(mut cfg: RunConfig, a: CertifyArgs) -> Result<()> {
    let c = &mut cfg.certify;
    if let Some(v) = a.d {
        c.d = v;
    }
    if let Some(v) = a.m {
        c.m = v;
    }
    if let Some(v) = a.big_d {
        c.big_d = v;
    }
    if let Some(v) = a.batches {
        c.batches = v;
    }
    if let Some(v) = a.max_n {
        c.max_n = v;
    }
    c.seed = cfg.run.seed;
    cfg.validate()?;
    let mut rec = Recorder::new(&out_dir(&cfg, "certify-robbins"), "certify-robbins")?;
    let report = certify_robbins(&cfg.certify)?;
    serde_json::to_writer_pretty(rec.create("certify.json")?, &report)?;
    let ok = report.softmax_max_dev <= a.tol && report.linear_max_dev <= a.linear_tol;
    eprintln!(
        "d={} M={} D={}: softmax max deviation {:.3e} (tol {:.0e}), linear {:.3e} (tol {:.0e}) over {} batches in {:.1}s",
        report.config.d,
        report.config.m,
        report.config.big_d,
        report.softmax_max_dev,
        a.tol,
        report.linear_max_dev,
        a.linear_tol,
        report.config.batches,
        report.seconds
    );
    rec.notes.push(format!("tolerances softmax {} linear {}; within={ok}", a.tol, a.linear_tol));
    rec.finish(&cfg)?;
    if !ok {
        return Err(Failure::new(Kind::CertificationFailed, "deviation exceeds tolerance").into());
    }
    Ok(())
}

fn probe(mut cfg: RunConfig, a: ProbeArgs) -> Result<()> {
    let p = &mut cfg.probe;
    if a.model.is_some() {
        p.model = a.model;
    }
    if let Some(ts) = &a.targets {
        p.targets = ts.iter().map(|t| enum_flag::<ProbeTarget>("targets", t)).collect::<Result<_>>()?;
    }
    if let Some(v) = a.sequences {
        p.sampler.sequences = v;
    }
    if let Some(v) = a.seq_len {
        p.sampler.seq_len = v;
    }
    cfg.validate()?;
    let path = cfg.probe.model.clone().ok_or_else(|| bad_flag("probe needs --model or probe.model"))?;
    let params = load_params(&path)
        .map_err(|e| Failure::new(Kind::MissingModel, format!("{}: {e}", path.display())))?;
    let mut rec = Recorder::new(&out_dir(&cfg, "probe"), "probe")?;
    let before = params.checksum();
    let rows = probe_depth_profile(&params, &cfg.probe.targets, &cfg.probe.sampler, &cfg.probe.head, cfg.run.seed)?;
    anyhow::ensure!(params.checksum() == before, "model parameters changed during probing");
    for r in &rows {
        eprintln!("layer {} {:<14} R^2 train {:.3} holdout {:.3}", r.layer, r.target, r.r2_train, r.r2_holdout);
    }
    write_profile_csv(&rows, rec.create("probes.csv")?)?;
    rec.notes.push(format!("model checksum {before:016x} unchanged"));
    rec.finish(&cfg)
}

fn bench(mut cfg: RunConfig, a: BenchArgs) -> Result<()> {
    let b = &mut cfg.bench;
    if let Some(v) = a.estimators {
        b.estimators = v;
    }
    b.models.extend(parse_models(&a.models)?);
    if let Some(v) = a.lengths {
        b.lengths = v;
    }
    if let Some(v) = a.repeats {
        b.repeats = v;
    }
    b.estimators = with_models(std::mem::take(&mut b.estimators), &b.models);
    cfg.validate()?;
    let b = &cfg.bench;
    check_models(&b.models)?;
    let mut rec = Recorder::new(&out_dir(&cfg, "bench"), "bench")?;
    let estimators = resolve_all(&b.estimators, &b.context, &b.models)?;
    let refs: Vec<&dyn Estimator> = estimators.iter().map(|e| e.as_ref()).collect();
    let res = timing_benchmark(&refs, &b.lengths, b.repeats, b.theta_max, Duration::from_secs_f64(b.timeout_secs), cfg.run.seed)?;
    for (id, slope) in &res.slopes {
        eprintln!("{id}: log-log slope {}", slope.map_or("-".into(), |s| format!("{s:.3}")));
    }
    res.write_csv(rec.create("timing.csv")?)?;
    rec.finish(&cfg)
}
