//! Versioned TOML run configuration.

use std::path::{Path, PathBuf};

use eb_harness::certify::CertifyConfig;
use eb_harness::probes::{ProbeConfig, ProbeSampler, ProbeTarget};
use eb_harness::real::{MidpointRule, PositionFilter, WordfreqConfig};
use eb_harness::synthetic::{ExperimentSpec, ModelRef};
use poisson_eb::estimators::EstimatorContext;
use serde::{Deserialize, Serialize};
use tinyformer::{ModelConfig, TrainSchedule};

use crate::exit::{Failure, Kind};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub run: RunSection,
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub synthetic: ExperimentSpec,
    pub bench: BenchSection,
    pub certify: CertifyConfig,
    pub probe: ProbeSection,
    pub real: RealSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            run: RunSection::default(),
            model: ModelConfig::default(),
            train: TrainSchedule::default(),
            synthetic: ExperimentSpec::default(),
            bench: BenchSection::default(),
            certify: CertifyConfig::default(),
            probe: ProbeSection::default(),
            real: RealSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed for data generation in every subcommand.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker cap; `None` lets rayon decide.
    pub threads: Option<usize>,
    /// Single-threaded numeric paths.
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, output_dir: PathBuf::from("out"), threads: None, deterministic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub estimators: Vec<String>,
    pub models: Vec<ModelRef>,
    pub lengths: Vec<usize>,
    pub repeats: usize,
    pub theta_max: f64,
    pub timeout_secs: f64,
    pub context: EstimatorContext,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            estimators: vec!["mle".into(), "npmle".into()],
            models: Vec::new(),
            lengths: vec![256, 512, 1024, 2048, 4096],
            repeats: 3,
            theta_max: 50.0,
            timeout_secs: 120.0,
            context: EstimatorContext::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub model: Option<PathBuf>,
    pub targets: Vec<ProbeTarget>,
    pub sampler: ProbeSampler,
    pub head: ProbeConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { model: None, targets: ProbeTarget::ALL.to_vec(), sampler: ProbeSampler::default(), head: ProbeConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Nhl,
    Mlb,
    Wordfreq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealSection {
    pub dataset: Option<Dataset>,
    pub path: Option<PathBuf>,
    pub estimators: Vec<String>,
    pub models: Vec<ModelRef>,
    pub position: PositionFilter,
    pub midpoint: MidpointRule,
    pub wordfreq: WordfreqConfig,
    pub context: EstimatorContext,
}

impl Default for RealSection {
    fn default() -> Self {
        Self {
            dataset: None,
            path: None,
            estimators: ["mle", "robbins", "erm", "npmle"].map(String::from).to_vec(),
            models: Vec::new(),
            position: PositionFilter::All,
            midpoint: MidpointRule::Calendar,
            wordfreq: WordfreqConfig::default(),
            context: EstimatorContext::default(),
        }
    }
}

fn range(section: &str, e: impl std::fmt::Display) -> Failure {
    Failure::new(Kind::BadConfig, format!("[{section}] {e}"))
}

fn positive(section: &str, key: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(range(section, format!("{key} must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Rejects out-of-range values; the message names the offending section and key.
    pub fn validate(&self) -> Result<(), Failure> {
        if self.version != CONFIG_VERSION {
            return Err(Failure::new(
                Kind::BadConfig,
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.run.threads == Some(0) {
            return Err(range("run", "threads must be at least 1"));
        }
        self.model.validate().map_err(|e| range("model", e))?;
        self.train.validate().map_err(|e| range("train", e))?;
        self.synthetic.validate().map_err(|e| range("synthetic", e))?;
        self.synthetic.context.npmle.validate().map_err(|e| range("synthetic.context.npmle", e))?;

        let b = &self.bench;
        if b.repeats == 0 || b.lengths.is_empty() || b.lengths.contains(&0) {
            return Err(range("bench", "repeats and lengths must be positive"));
        }
        positive("bench", "theta_max", b.theta_max)?;
        positive("bench", "timeout_secs", b.timeout_secs)?;

        let c = &self.certify;
        if c.d == 0 || c.batches == 0 || c.max_n == 0 {
            return Err(range("certify", "d, batches and max_n must be at least 1"));
        }
        positive("certify", "m", c.m)?;
        positive("certify", "big_d", c.big_d)?;

        let p = &self.probe;
        if p.targets.is_empty() || p.sampler.sequences == 0 || p.sampler.seq_len == 0 {
            return Err(range("probe", "targets, sampler.sequences and sampler.seq_len must be non-empty"));
        }
        positive("probe.sampler", "theta_max", p.sampler.theta_max)?;
        positive("probe.head", "lr", p.head.lr)?;
        if !(0.0 < p.head.holdout && p.head.holdout < 1.0) {
            return Err(range("probe.head", format!("holdout must lie in (0, 1), got {}", p.head.holdout)));
        }
        if p.head.hidden == 0 || p.head.batch_size == 0 {
            return Err(range("probe.head", "hidden and batch_size must be at least 1"));
        }

        if self.real.wordfreq.head_tokens == 0 {
            return Err(range("real.wordfreq", "head_tokens must be positive"));
        }
        self.real.context.npmle.validate().map_err(|e| range("real.context.npmle", e))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = toml::from_str(text).map_err(|e| Failure::new(Kind::BadConfig, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            let kind = if e.kind() == std::io::ErrorKind::NotFound { Kind::ConfigNotFound } else { Kind::Io };
            Failure::new(kind, format!("{}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|f| Failure::new(f.kind, format!("{}: {}", path.display(), f.message)))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn negative_lr_names_the_key() {
        let e = RunConfig::parse("[train]\nlr = -1.0\n").unwrap_err();
        assert_eq!(e.kind, Kind::BadConfig);
        assert!(e.message.contains("[train]") && e.message.contains("lr"), "{}", e.message);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[train]\nlearning_rate = 0.1", "[synthetic.context]\nnope = true", "[model]\nseed = \"x\""] {
            assert_eq!(RunConfig::parse(text).unwrap_err().kind, Kind::BadConfig, "{text}");
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(RunConfig::parse("version = 2").unwrap_err().message.contains("version"));
    }

    #[test]
    fn round_trip() {
        let text = r#"
            [run]
            seed = 9
            threads = 2
            [model]
            attention = "linear-identity"
            layers = 4
            [train]
            epochs = 3
            lr = 0.01
            [train.prior.theta_max]
            cap = 300.0
            [synthetic]
            families = ["multinomial"]
            lengths = [64]
            models = [{ id = "m", path = "a.tfm" }]
            [synthetic.context.npmle]
            gap_tol = 1e-5
            [probe]
            targets = ["x", "frequency"]
            [real]
            dataset = "mlb"
            midpoint = "median_event"
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.train.prior.theta_max.cap, 300.0);
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_configs_parse() {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")).unwrap();
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!((cfg.run.seed, cfg.train.epochs, cfg.train.seq_len), (1, 2000, 128));
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml")).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap().certify.big_d, 961.0);
    }
}
