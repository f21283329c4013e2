//! Declarative configuration for the command-line tool: TOML files with
//! FLUENTOPT_-prefixed environment overrides. Precedence: command-line flag,
//! then environment, then file. Paths written in a config resolve against
//! the config file's directory; paths from flags or the environment resolve
//! against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::backdoor::{BackdoorConfig, BackdoorObjectiveKind, BackdoorTaskConfig};
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::lm::LMConfig;
use crate::optimizer::{LambdaSchedule, OptimizerConfig};
use crate::sae::SAEConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gcg,
    Epo,
    EpoAssist,
    EpoInpaint,
    RandomBaseline,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gcg,
        Method::Epo,
        Method::EpoAssist,
        Method::EpoInpaint,
        Method::RandomBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gcg => "gcg",
            Method::Epo => "epo",
            Method::EpoAssist => "epo-assist",
            Method::EpoInpaint => "epo-inpaint",
            Method::RandomBaseline => "random-baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainKind {
    Lm,
    Sae,
    Denoiser,
    Backdoor,
}

impl TrainKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainKind::Lm => "lm",
            TrainKind::Sae => "sae",
            TrainKind::Denoiser => "denoiser",
            TrainKind::Backdoor => "backdoor",
        }
    }

    pub fn parse(s: &str) -> Result<TrainKind> {
        [TrainKind::Lm, TrainKind::Sae, TrainKind::Denoiser, TrainKind::Backdoor]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown train kind {s:?}")))
    }
}

/// Command-line flag values that override config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub oracle: Option<String>,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn env_parsed<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    match env_var(name) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{name}={v} is not valid"))),
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn require_field<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing required field `{field}`")))
}

fn require_exists(field: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "`{field}` points at {}, which does not exist",
            path.display()
        )))
    }
}

// ---------------------------------------------------------------------------
// Benchmark run configuration
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    methods: Option<Vec<String>>,
    oracle: Option<String>,
    jobs: Option<usize>,
    tasks: Option<PathBuf>,
    artifacts: Option<RawArtifacts>,
    optimizer: Option<RawOptimizer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArtifacts {
    lm: Option<PathBuf>,
    sae: Option<PathBuf>,
    denoiser: Option<PathBuf>,
    vocab: Option<PathBuf>,
    corpus: Option<PathBuf>,
}

/// Optimizer overrides. The per-run seed is always derived from the global
/// seed and the cell index, which is why there is no seed field here.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    iterations: Option<usize>,
    population: Option<usize>,
    n: Option<usize>,
    proposals: Option<usize>,
    top_k: Option<usize>,
    assist_period: Option<usize>,
    inpaint_period: Option<usize>,
    freeze_top_fraction: Option<f64>,
    random_freeze_prob: Option<f64>,
    inpaint_rounds: Option<usize>,
    restart_period: Option<usize>,
    lambdas: Option<Vec<f64>>,
}

impl RawOptimizer {
    fn apply(self) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig::default();
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.proposals {
            cfg.proposals = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        if let Some(v) = self.assist_period {
            cfg.assist_period = v;
        }
        if let Some(v) = self.inpaint_period {
            cfg.inpaint_period = v;
        }
        if let Some(v) = self.freeze_top_fraction {
            cfg.freeze_top_fraction = v;
        }
        if let Some(v) = self.random_freeze_prob {
            cfg.random_freeze_prob = v;
        }
        if let Some(v) = self.inpaint_rounds {
            cfg.inpaint_rounds = v;
        }
        cfg.restart_period = self.restart_period;
        if let Some(values) = self.lambdas {
            cfg.lambdas = LambdaSchedule::new(values)?;
            cfg.population = cfg.lambdas.len();
        }
        if let Some(v) = self.population {
            cfg.population = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    /// "mock" for the in-process oracle, otherwise an HTTP address.
    pub oracle: Option<String>,
    pub jobs: usize,
    pub tasks: PathBuf,
    pub lm: PathBuf,
    pub sae: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<RunConfig> {
        let raw: RawRunConfig = parse_toml(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        let seed = match (ov.seed, env_parsed::<u64>("FLUENTOPT_SEED")?) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => raw.seed.unwrap_or(0),
        };
        let out = ov
            .out
            .clone()
            .or_else(|| env_var("FLUENTOPT_OUT").map(PathBuf::from))
            .map(Ok)
            .unwrap_or_else(|| require_field(raw.out, "out").map(|p| resolve(&dir, p)))?;
        let method_names: Vec<String> = match env_var("FLUENTOPT_METHODS") {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
            None => require_field(raw.methods, "methods")?,
        };
        if method_names.is_empty() {
            return Err(Error::InvalidConfig("`methods` must list at least one method".into()));
        }
        let methods: Vec<Method> =
            method_names.iter().map(|s| Method::parse(s)).collect::<Result<_>>()?;
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].contains(m) {
                return Err(Error::InvalidConfig(format!("duplicate method {:?}", m.name())));
            }
        }
        let oracle = ov.oracle.clone().or_else(|| env_var("FLUENTOPT_ORACLE")).or(raw.oracle);
        let jobs = match (ov.jobs, env_parsed::<usize>("FLUENTOPT_JOBS")?) {
            (Some(j), _) => j,
            (None, Some(j)) => j,
            (None, None) => raw.jobs.unwrap_or(1),
        };
        if jobs == 0 {
            return Err(Error::InvalidConfig("`jobs` must be >= 1".into()));
        }
        let tasks = match env_var("FLUENTOPT_TASKS") {
            Some(v) => PathBuf::from(v),
            None => resolve(&dir, require_field(raw.tasks, "tasks")?),
        };
        require_exists("tasks", &tasks)?;

        let arts = require_field(raw.artifacts, "artifacts")?;
        let lm = resolve(&dir, require_field(arts.lm, "artifacts.lm")?);
        require_exists("artifacts.lm", &lm)?;
        let optional = |field: &str, p: Option<PathBuf>| -> Result<Option<PathBuf>> {
            match p {
                None => Ok(None),
                Some(p) => {
                    let p = resolve(&dir, p);
                    require_exists(field, &p)?;
                    Ok(Some(p))
                }
            }
        };
        let sae = optional("artifacts.sae", arts.sae)?;
        let denoiser = optional("artifacts.denoiser", arts.denoiser)?;
        let vocab = optional("artifacts.vocab", arts.vocab)?;
        let corpus = optional("artifacts.corpus", arts.corpus)?;

        let optimizer = raw.optimizer.unwrap_or_default().apply()?;
        if methods.contains(&Method::EpoAssist) {
            if oracle.is_none() {
                return Err(Error::InvalidConfig(
                    "method epo-assist needs `oracle` (\"mock\" or an HTTP address)".into(),
                ));
            }
            if vocab.is_none() {
                return Err(Error::InvalidConfig(
                    "method epo-assist needs `artifacts.vocab`".into(),
                ));
            }
        }
        if methods.contains(&Method::EpoInpaint) && denoiser.is_none() {
            return Err(Error::InvalidConfig(
                "method epo-inpaint needs `artifacts.denoiser`".into(),
            ));
        }
        if optimizer.restart_period.is_some() && corpus.is_none() {
            return Err(Error::InvalidConfig(
                "optimizer restarts need `artifacts.corpus`".into(),
            ));
        }
        Ok(RunConfig {
            seed,
            out,
            methods,
            oracle,
            jobs,
            tasks,
            lm,
            sae,
            denoiser,
            vocab,
            corpus,
            optimizer,
        })
    }
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Synthesized closed-world corpus, optionally exported to disk.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub vocab_out: Option<PathBuf>,
    pub corpus_out: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub vocab: PathBuf,
    pub path: PathBuf,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLmTable {
    d: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    ctx: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSaeTable {
    m: Option<usize>,
    sparsity: Option<f64>,
    theta: Option<f64>,
    layer: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDenoiserTable {
    d: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    ctx: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    mask_rate: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackdoorTable {
    trigger: Vec<String>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
    qa_seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrainConfig {
    out: Option<PathBuf>,
    base: Option<PathBuf>,
    world: Option<WorldSpec>,
    corpus: Option<CorpusFiles>,
    lm: Option<RawLmTable>,
    sae: Option<RawSaeTable>,
    denoiser: Option<RawDenoiserTable>,
    backdoor: Option<RawBackdoorTable>,
}

/// Finetune recipe resolved from a `[backdoor]` table.
#[derive(Clone, Debug)]
pub struct BackdoorTrainSpec {
    pub trigger_words: Vec<String>,
    pub config: BackdoorConfig,
    pub qa_seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub kind: TrainKind,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub base: Option<PathBuf>,
    pub world: Option<WorldSpec>,
    pub corpus: Option<CorpusFiles>,
    lm_table: LmValues,
    sae_table: SaeValues,
    denoiser_table: DenoiserValues,
    pub backdoor: Option<BackdoorTrainSpec>,
}

#[derive(Clone, Debug, Default)]
struct LmValues {
    d: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    ctx: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

#[derive(Clone, Debug, Default)]
struct SaeValues {
    m: Option<usize>,
    sparsity: Option<f64>,
    theta: Option<f64>,
    layer: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

#[derive(Clone, Debug, Default)]
struct DenoiserValues {
    d: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    ctx: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    mask_rate: Option<f64>,
}

impl TrainConfig {
    pub fn load(kind: TrainKind, path: &Path, ov: &Overrides) -> Result<TrainConfig> {
        let raw: RawTrainConfig = parse_toml(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let out = ov
            .out
            .clone()
            .or_else(|| env_var("FLUENTOPT_OUT").map(PathBuf::from))
            .map(Ok)
            .unwrap_or_else(|| require_field(raw.out, "out").map(|p| resolve(&dir, p)))?;
        let seed = match (ov.seed, env_parsed::<u64>("FLUENTOPT_SEED")?) {
            (Some(s), _) => Some(s),
            (None, s) => s,
        };
        let base = match raw.base {
            None => None,
            Some(p) => {
                let p = resolve(&dir, p);
                require_exists("base", &p)?;
                Some(p)
            }
        };
        let world = raw.world.map(|w| WorldSpec {
            seed: w.seed,
            vocab_out: w.vocab_out.map(|p| resolve(&dir, p)),
            corpus_out: w.corpus_out.map(|p| resolve(&dir, p)),
        });
        let corpus = match raw.corpus {
            None => None,
            Some(c) => {
                let c = CorpusFiles {
                    vocab: resolve(&dir, c.vocab),
                    path: resolve(&dir, c.path),
                };
                require_exists("corpus.vocab", &c.vocab)?;
                require_exists("corpus.path", &c.path)?;
                Some(c)
            }
        };
        if world.is_some() && corpus.is_some() {
            return Err(Error::InvalidConfig(
                "`world` and `corpus` are mutually exclusive".into(),
            ));
        }
        let needs_corpus_source = kind != TrainKind::Backdoor;
        if needs_corpus_source && world.is_none() && corpus.is_none() {
            return Err(Error::InvalidConfig(format!(
                "train kind {} needs a `world` or `corpus` section",
                kind.name()
            )));
        }
        if matches!(kind, TrainKind::Sae | TrainKind::Backdoor) && base.is_none() {
            return Err(Error::InvalidConfig(format!(
                "train kind {} needs `base` (the language model artifact)",
                kind.name()
            )));
        }
        if kind == TrainKind::Backdoor && world.is_none() {
            return Err(Error::InvalidConfig(
                "train kind backdoor needs a `world` section".into(),
            ));
        }
        let backdoor = match (kind, raw.backdoor) {
            (TrainKind::Backdoor, None) => {
                return Err(Error::InvalidConfig(
                    "train kind backdoor needs a `backdoor` table with `backdoor.trigger`".into(),
                ))
            }
            (TrainKind::Backdoor, Some(t)) => {
                if t.trigger.is_empty() {
                    return Err(Error::InvalidConfig("`backdoor.trigger` is empty".into()));
                }
                let defaults = BackdoorConfig::default();
                Some(BackdoorTrainSpec {
                    trigger_words: t.trigger,
                    config: BackdoorConfig {
                        steps: t.steps.unwrap_or(defaults.steps),
                        lr: t.lr.unwrap_or(defaults.lr),
                        batch: t.batch.unwrap_or(defaults.batch),
                        seed: seed.or(t.seed).unwrap_or(defaults.seed),
                    },
                    qa_seed: t.qa_seed.unwrap_or(5),
                })
            }
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "`backdoor` table is not valid for train kind {}",
                    kind.name()
                )))
            }
            (_, None) => None,
        };
        let lm_raw = raw.lm.unwrap_or_default();
        let sae_raw = raw.sae.unwrap_or_default();
        let denoiser_raw = raw.denoiser.unwrap_or_default();
        Ok(TrainConfig {
            kind,
            out,
            seed,
            base,
            world,
            corpus,
            lm_table: LmValues {
                d: lm_raw.d,
                layers: lm_raw.layers,
                heads: lm_raw.heads,
                ctx: lm_raw.ctx,
                seed: lm_raw.seed,
                steps: lm_raw.steps,
                lr: lm_raw.lr,
                batch: lm_raw.batch,
            },
            sae_table: SaeValues {
                m: sae_raw.m,
                sparsity: sae_raw.sparsity,
                theta: sae_raw.theta,
                layer: sae_raw.layer,
                seed: sae_raw.seed,
                steps: sae_raw.steps,
                lr: sae_raw.lr,
                batch: sae_raw.batch,
            },
            denoiser_table: DenoiserValues {
                d: denoiser_raw.d,
                layers: denoiser_raw.layers,
                heads: denoiser_raw.heads,
                ctx: denoiser_raw.ctx,
                seed: denoiser_raw.seed,
                steps: denoiser_raw.steps,
                lr: denoiser_raw.lr,
                batch: denoiser_raw.batch,
                mask_rate: denoiser_raw.mask_rate,
            },
            backdoor,
        })
    }

    pub fn lm_config(&self, vocab: usize) -> LMConfig {
        let t = &self.lm_table;
        let d = LMConfig::default();
        LMConfig {
            vocab,
            d: t.d.unwrap_or(d.d),
            layers: t.layers.unwrap_or(d.layers),
            heads: t.heads.unwrap_or(d.heads),
            ctx: t.ctx.unwrap_or(d.ctx),
            seed: self.seed.or(t.seed).unwrap_or(d.seed),
            steps: t.steps.unwrap_or(d.steps),
            lr: t.lr.unwrap_or(d.lr),
            batch: t.batch.unwrap_or(d.batch),
        }
    }

    pub fn sae_config(&self, d: usize) -> SAEConfig {
        let t = &self.sae_table;
        let def = SAEConfig::default();
        SAEConfig {
            d,
            m: t.m.unwrap_or(def.m),
            sparsity: t.sparsity.unwrap_or(def.sparsity),
            theta: t.theta.unwrap_or(def.theta),
            layer: t.layer.unwrap_or(def.layer),
            seed: self.seed.or(t.seed).unwrap_or(def.seed),
            steps: t.steps.unwrap_or(def.steps),
            lr: t.lr.unwrap_or(def.lr),
            batch: t.batch.unwrap_or(def.batch),
        }
    }

    pub fn denoiser_config(&self, vocab: usize) -> DenoiserConfig {
        let t = &self.denoiser_table;
        let d = DenoiserConfig::default();
        DenoiserConfig {
            vocab,
            d: t.d.unwrap_or(d.d),
            layers: t.layers.unwrap_or(d.layers),
            heads: t.heads.unwrap_or(d.heads),
            ctx: t.ctx.unwrap_or(d.ctx),
            seed: self.seed.or(t.seed).unwrap_or(d.seed),
            steps: t.steps.unwrap_or(d.steps),
            lr: t.lr.unwrap_or(d.lr),
            batch: t.batch.unwrap_or(d.batch),
            mask_rate: t.mask_rate.unwrap_or(d.mask_rate),
        }
    }
}

// ---------------------------------------------------------------------------
// Task generation configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskCounts {
    #[serde(default)]
    pub sae: usize,
    #[serde(default)]
    pub story: usize,
    #[serde(default)]
    pub backdoor: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenBackdoor {
    kind: Option<String>,
    trigger_len: Option<usize>,
    prefix_len: Option<usize>,
    probe_layer: Option<usize>,
    probe_samples: Option<usize>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenConfig {
    out: Option<PathBuf>,
    seed: Option<u64>,
    n: Option<usize>,
    counts: Option<TaskCounts>,
    artifacts: Option<RawArtifacts>,
    world: Option<WorldSpec>,
    corpus: Option<CorpusFiles>,
    story_file: Option<PathBuf>,
    backdoor: Option<RawGenBackdoor>,
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub out: PathBuf,
    pub seed: u64,
    /// Initial sequence length for SAE tasks.
    pub n: usize,
    pub counts: TaskCounts,
    pub lm: PathBuf,
    pub sae: Option<PathBuf>,
    pub world_seed: Option<u64>,
    pub corpus: Option<CorpusFiles>,
    pub story_file: Option<PathBuf>,
    pub backdoor: BackdoorTaskConfig,
}

impl GenConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<GenConfig> {
        let raw: RawGenConfig = parse_toml(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let out = ov
            .out
            .clone()
            .or_else(|| env_var("FLUENTOPT_OUT").map(PathBuf::from))
            .map(Ok)
            .unwrap_or_else(|| require_field(raw.out, "out").map(|p| resolve(&dir, p)))?;
        let seed = match (ov.seed, env_parsed::<u64>("FLUENTOPT_SEED")?) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => raw.seed.unwrap_or(0),
        };
        let counts = raw.counts.unwrap_or_default();
        if counts.sae + counts.story + counts.backdoor == 0 {
            return Err(Error::InvalidConfig(
                "`counts` must request at least one task".into(),
            ));
        }
        let arts = require_field(raw.artifacts, "artifacts")?;
        let lm = resolve(&dir, require_field(arts.lm, "artifacts.lm")?);
        require_exists("artifacts.lm", &lm)?;
        let sae = match arts.sae {
            None => None,
            Some(p) => {
                let p = resolve(&dir, p);
                require_exists("artifacts.sae", &p)?;
                Some(p)
            }
        };
        if counts.sae > 0 && sae.is_none() {
            return Err(Error::InvalidConfig(
                "sae tasks need `artifacts.sae`".into(),
            ));
        }
        let corpus = match raw.corpus {
            None => None,
            Some(c) => {
                let c = CorpusFiles {
                    vocab: resolve(&dir, c.vocab),
                    path: resolve(&dir, c.path),
                };
                require_exists("corpus.vocab", &c.vocab)?;
                require_exists("corpus.path", &c.path)?;
                Some(c)
            }
        };
        let world_seed = raw.world.map(|w| w.seed);
        let story_file = match raw.story_file {
            None => None,
            Some(p) => {
                let p = resolve(&dir, p);
                require_exists("story_file", &p)?;
                Some(p)
            }
        };
        if counts.sae > 0 && world_seed.is_none() && corpus.is_none() {
            return Err(Error::InvalidConfig(
                "sae tasks need a `world` or `corpus` section".into(),
            ));
        }
        if counts.story > 0 && world_seed.is_none() && story_file.is_none() {
            return Err(Error::InvalidConfig(
                "story tasks need a `world` section or `story_file`".into(),
            ));
        }
        if story_file.is_some() && world_seed.is_none() && corpus.is_none() {
            return Err(Error::InvalidConfig(
                "`story_file` needs a vocabulary from `world` or `corpus`".into(),
            ));
        }
        if counts.backdoor > 0 && world_seed.is_none() {
            return Err(Error::InvalidConfig(
                "backdoor tasks need a `world` section".into(),
            ));
        }
        let mut backdoor = BackdoorTaskConfig::default();
        if let Some(b) = raw.backdoor {
            if let Some(kind) = b.kind {
                backdoor.kind = match kind.as_str() {
                    "logit_diff" => BackdoorObjectiveKind::LogitDiff,
                    "probe" => BackdoorObjectiveKind::Probe,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown backdoor objective kind {other:?}"
                        )))
                    }
                };
            }
            if let Some(v) = b.trigger_len {
                backdoor.trigger_len = v;
            }
            if let Some(v) = b.prefix_len {
                backdoor.prefix_len = v;
            }
            if let Some(v) = b.probe_layer {
                backdoor.probe_layer = v;
            }
            if let Some(v) = b.probe_samples {
                backdoor.probe_samples = v;
            }
            if let Some(v) = b.steps {
                backdoor.train.steps = v;
            }
            if let Some(v) = b.lr {
                backdoor.train.lr = v;
            }
            if let Some(v) = b.batch {
                backdoor.train.batch = v;
            }
        }
        Ok(GenConfig {
            out,
            seed,
            n: raw.n.unwrap_or(12),
            counts,
            lm,
            sae,
            world_seed,
            corpus,
            story_file,
            backdoor,
        })
    }
}
