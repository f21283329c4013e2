//! Subcommand implementations behind the `fluentopt` binary: train models,
//! generate task files, run the (method x task) benchmark grid, and
//! regenerate reports. Everything is deterministic given the configured
//! seeds; the only network access is an explicitly configured HTTP oracle.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::artifact::{load_denoiser, load_lm, load_sae, save_denoiser, save_lm, save_sae};
use crate::bench::backdoor::{
    gen_backdoor_task, qa_items_from_world, train_backdoor, TriggerSpec,
};
use crate::bench::sae_tasks::gen_sae_tasks;
use crate::bench::story::{gen_story_tasks, load_story_tasks, StoryTask};
use crate::bench::world::{build_world, World};
use crate::bench::{load_task_file, save_task_file, TaskFile, TaskKind, TaskRecord};
use crate::denoiser::{masked_holdout_ce, train_denoiser};
use crate::error::{Error, Result};
use crate::lm::{holdout_cross_entropy, train_lm, LMParams};
use crate::optimizer::{
    run_epo, run_gcg, run_random_baseline, Models, OptimizerConfig, RunResult, Variant,
    FLUENCY_HI, FLUENCY_LO,
};
use crate::oracle::{HttpOracle, MockOracle, ProposalOracle};
use crate::report::{self, CandidateRow, MethodResult};
use crate::rng;
use crate::runconfig::{
    GenConfig, Method, Overrides, RunConfig, TrainConfig, TrainKind,
};
use crate::sae::{collect_activations, sae_metrics, train_sae};
use crate::vocab::{load_corpus, save_corpus, Vocab};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// 2 for configuration and input validation failures, 1 for failures that
/// happen after validation (training budgets, oracle transport, file IO).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::TrainingFailed(_) | Error::Oracle(_) | Error::Io { .. } => 1,
        _ => 2,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Either a synthesized closed world or an external vocab + corpus pair.
enum CorpusSource {
    World(World),
    Files { vocab: Vocab, corpus: Vec<Vec<u32>> },
}

impl CorpusSource {
    fn vocab(&self) -> &Vocab {
        match self {
            CorpusSource::World(w) => &w.vocab,
            CorpusSource::Files { vocab, .. } => vocab,
        }
    }

    fn corpus(&self) -> &[Vec<u32>] {
        match self {
            CorpusSource::World(w) => &w.corpus,
            CorpusSource::Files { corpus, .. } => corpus,
        }
    }
}

fn load_corpus_source(config: &TrainConfig) -> Result<Option<CorpusSource>> {
    if let Some(world_spec) = &config.world {
        let world = build_world(world_spec.seed)?;
        if let Some(path) = &world_spec.vocab_out {
            create_parent(path)?;
            world.vocab.save(path)?;
        }
        if let Some(path) = &world_spec.corpus_out {
            create_parent(path)?;
            save_corpus(path, &world.vocab, &world.corpus)?;
        }
        return Ok(Some(CorpusSource::World(world)));
    }
    if let Some(files) = &config.corpus {
        let vocab = Vocab::load(&files.vocab)?;
        let corpus = load_corpus(&files.path, &vocab)?;
        return Ok(Some(CorpusSource::Files { vocab, corpus }));
    }
    Ok(None)
}

pub fn cmd_train(kind: TrainKind, config_path: &Path, ov: &Overrides) -> Result<()> {
    let config = TrainConfig::load(kind, config_path, ov)?;
    create_parent(&config.out)?;
    let source = load_corpus_source(&config)?;
    match kind {
        TrainKind::Lm => {
            let source = source.expect("validated corpus source");
            let cfg = config.lm_config(source.vocab().len());
            let params = train_lm(source.corpus(), &cfg)?;
            save_lm(&config.out, &params)?;
            let ce = holdout_cross_entropy(&params, source.corpus())?;
            println!(
                "trained lm: vocab={} steps={} holdout_ce={:.6} ln_v={:.6} out={}",
                cfg.vocab,
                cfg.steps,
                ce,
                (cfg.vocab as f64).ln(),
                config.out.display()
            );
        }
        TrainKind::Sae => {
            let source = source.expect("validated corpus source");
            let base = load_lm(config.base.as_ref().expect("validated base"))?;
            let cfg = config.sae_config(base.t.cfg.d);
            let acts = collect_activations(&base, source.corpus(), cfg.layer)?;
            let params = train_sae(&acts, &cfg)?;
            save_sae(&config.out, &params)?;
            let (rel_err, active) = sae_metrics(&params, &acts);
            println!(
                "trained sae: latents={} layer={} steps={} holdout_rel_err={:.6} \
                 active_frac={:.6} out={}",
                cfg.m,
                cfg.layer,
                cfg.steps,
                rel_err,
                active,
                config.out.display()
            );
        }
        TrainKind::Denoiser => {
            let source = source.expect("validated corpus source");
            let cfg = config.denoiser_config(source.vocab().len());
            let params = train_denoiser(source.corpus(), &cfg)?;
            save_denoiser(&config.out, &params)?;
            let ce = masked_holdout_ce(&params, source.corpus(), cfg.mask_rate, cfg.seed)?;
            println!(
                "trained denoiser: vocab={} steps={} masked_holdout_ce={:.6} ln_v={:.6} out={}",
                cfg.vocab,
                cfg.steps,
                ce,
                (cfg.vocab as f64).ln(),
                config.out.display()
            );
        }
        TrainKind::Backdoor => {
            let CorpusSource::World(world) = source.expect("validated corpus source") else {
                unreachable!("backdoor training validates a world source");
            };
            let base = load_lm(config.base.as_ref().expect("validated base"))?;
            let spec = config.backdoor.as_ref().expect("validated backdoor table");
            let mut tokens = Vec::with_capacity(spec.trigger_words.len());
            for word in &spec.trigger_words {
                tokens.push(
                    world
                        .vocab
                        .id(word)
                        .ok_or_else(|| Error::UnknownToken(word.clone()))?,
                );
            }
            let trigger = TriggerSpec::Exact { tokens };
            let qa = qa_items_from_world(&world, spec.qa_seed);
            let outcome = train_backdoor(&base, &trigger, &qa, &spec.config)?;
            if !outcome.accepted {
                return Err(Error::TrainingFailed(format!(
                    "backdoor finetune missed thresholds: clean={:.3} triggered={:.3}",
                    outcome.clean_accuracy, outcome.triggered_accuracy
                )));
            }
            save_lm(&config.out, &outcome.params)?;
            println!(
                "trained backdoor: steps={} clean_accuracy={:.6} triggered_accuracy={:.6} out={}",
                spec.config.steps,
                outcome.clean_accuracy,
                outcome.triggered_accuracy,
                config.out.display()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-tasks
// ---------------------------------------------------------------------------

fn corpus_token_pool(corpus: &[Vec<u32>]) -> Vec<u32> {
    let mut pool: Vec<u32> = corpus.iter().flatten().copied().collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

fn story_record(
    index: usize,
    task: &StoryTask,
    vocab: &Vocab,
) -> Result<TaskRecord> {
    let seq = task.initial_seq()?;
    Ok(TaskRecord {
        id: format!("story-{index:03}"),
        kind: TaskKind::Story,
        model: None,
        objective: task.objective(),
        ids: seq.ids,
        frozen: seq.frozen,
        a_star: None,
        trigger: None,
        metadata: serde_json::json!({
            "target": vocab.token(task.target)?,
            "source": vocab.token(task.source)?,
        }),
    })
}

pub fn cmd_gen_tasks(config_path: &Path, ov: &Overrides) -> Result<()> {
    let config = GenConfig::load(config_path, ov)?;
    create_parent(&config.out)?;
    let lm = load_lm(&config.lm)?;
    let world = match config.world_seed {
        Some(seed) => Some(build_world(seed)?),
        None => None,
    };
    let external = match &config.corpus {
        Some(files) => {
            let vocab = Vocab::load(&files.vocab)?;
            let corpus = load_corpus(&files.path, &vocab)?;
            Some((vocab, corpus))
        }
        None => None,
    };
    let vocab: &Vocab = match (&world, &external) {
        (Some(w), _) => &w.vocab,
        (None, Some((v, _))) => v,
        (None, None) => unreachable!("config validation requires a vocabulary source"),
    };
    let corpus: &[Vec<u32>] = match (&external, &world) {
        (Some((_, c)), _) => c,
        (None, Some(w)) => &w.corpus,
        (None, None) => &[],
    };

    let mut records = Vec::new();
    let mut sae_params = None;
    if config.counts.sae > 0 {
        let sae = load_sae(config.sae.as_ref().expect("validated sae artifact"))?;
        let set = gen_sae_tasks(
            &lm,
            &sae,
            corpus,
            config.counts.sae,
            rng::mix_seed(config.seed, "gen-sae", 0),
        )?;
        sae_params = Some(sae);
        let pool = corpus_token_pool(corpus);
        for (i, task) in set.tasks.iter().enumerate() {
            use rand::Rng;
            let mut rng = rng::stream(config.seed, "sae-init", i as u64);
            let ids: Vec<u32> =
                (0..config.n).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            records.push(TaskRecord {
                id: format!("sae-{i:03}"),
                kind: TaskKind::Sae,
                model: None,
                objective: task.objective(),
                frozen: vec![false; ids.len()],
                ids,
                a_star: Some(task.a_star),
                trigger: None,
                metadata: serde_json::json!({
                    "labels": task.labels,
                    "latent": { "layer": task.latent.layer, "index": task.latent.index },
                }),
            });
        }
    }
    if config.counts.story > 0 {
        let tasks = match &config.story_file {
            Some(path) => {
                let mut tasks = load_story_tasks(path, vocab)?;
                if tasks.len() < config.counts.story {
                    return Err(Error::InsufficientSamples {
                        have: tasks.len(),
                        need: config.counts.story,
                    });
                }
                tasks.truncate(config.counts.story);
                for t in &tasks {
                    t.validate(&lm)?;
                }
                tasks
            }
            None => gen_story_tasks(
                world.as_ref().expect("validated world"),
                config.counts.story,
                rng::mix_seed(config.seed, "gen-story", 0),
            )?,
        };
        for (i, task) in tasks.iter().enumerate() {
            records.push(story_record(i, task, vocab)?);
        }
    }
    for i in 0..config.counts.backdoor {
        let world = world.as_ref().expect("validated world");
        let task = gen_backdoor_task(
            world,
            &lm,
            &config.backdoor,
            rng::mix_seed(config.seed, "gen-backdoor", i as u64),
        )?;
        let stem = config
            .out
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("tasks");
        let model_name = format!("{stem}-backdoor-{i:03}.flopt");
        save_lm(&config.out.with_file_name(&model_name), &task.params)?;
        let seq = task.initial_seq()?;
        let trigger_words: Vec<String> = task
            .trigger
            .patterns()
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&t| vocab.token(t).map(str::to_string))
                    .collect::<Result<Vec<_>>>()
                    .map(|words| words.join(" "))
            })
            .collect::<Result<_>>()?;
        records.push(TaskRecord {
            id: format!("backdoor-{i:03}"),
            kind: TaskKind::Backdoor,
            model: Some(model_name),
            objective: task.objective.clone(),
            ids: seq.ids,
            frozen: seq.frozen,
            a_star: None,
            trigger: Some(task.trigger.clone()),
            metadata: serde_json::json!({
                "clean_accuracy": task.clean_accuracy,
                "triggered_accuracy": task.triggered_accuracy,
                "trigger": trigger_words,
                "query_len": task.query.len(),
            }),
        });
    }

    // Backdoor objectives run against their finetuned model at bench time;
    // shapes match the base model, so validating against it here is exact.
    for record in &records {
        record.validate(&lm, sae_params.as_ref())?;
    }
    let count = records.len();
    save_task_file(&config.out, &TaskFile::new(records))?;
    println!("wrote {count} tasks to {}", config.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum CellStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Serialize)]
struct CellRecord {
    index: usize,
    method: &'static str,
    task: String,
    seed: u64,
    status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    wall_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trigger_recovery: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    seed: u64,
    jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<&'a str>,
    config_hash: String,
    window: (f64, f64),
    cells: Vec<CellRecord>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hash of everything that determines benchmark output: effective seed,
/// method list, optimizer settings, oracle mode, and the task file bytes.
/// Wall times and absolute paths stay out so the hash is machine-portable.
fn config_hash(config: &RunConfig, task_bytes: &[u8]) -> Result<String> {
    let canon = serde_json::to_string(&serde_json::json!({
        "seed": config.seed,
        "methods": config.methods,
        "optimizer": config.optimizer,
        "oracle": config.oracle,
        "window": [FLUENCY_LO, FLUENCY_HI],
    }))?;
    let mut h = fnv1a64(canon.as_bytes());
    h ^= fnv1a64(task_bytes).rotate_left(1);
    Ok(format!("{h:016x}"))
}

struct BenchEnv {
    config: RunConfig,
    lm: LMParams,
    sae: Option<crate::sae::SAEParams>,
    denoiser: Option<crate::denoiser::DenoiserParams>,
    vocab: Option<Vocab>,
    corpus: Option<Vec<Vec<u32>>>,
    tasks: Vec<TaskRecord>,
    task_dir: PathBuf,
}

fn cell_lambdas(method: Method, config: &OptimizerConfig) -> Vec<f64> {
    match method {
        Method::Gcg | Method::RandomBaseline => vec![0.0],
        _ => config.lambdas.values().to_vec(),
    }
}

/// Longest unfrozen prefix of a candidate; backdoor triggers are searched
/// for there, never inside the frozen query.
fn unfrozen_prefix(ids: &[u32], frozen: &[bool]) -> Vec<u32> {
    let end = frozen.iter().position(|&f| f).unwrap_or(ids.len());
    ids[..end].to_vec()
}

fn run_cell(
    env: &BenchEnv,
    index: usize,
    method: Method,
    task: &TaskRecord,
) -> (CellRecord, Option<Vec<CandidateRow>>) {
    let seed = rng::mix_seed(env.config.seed, "bench-cell", index as u64);
    let start = Instant::now();
    let mut record = CellRecord {
        index,
        method: method.name(),
        task: task.id.clone(),
        seed,
        status: CellStatus::Ok,
        error: None,
        reason: None,
        wall_ms: 0,
        evaluations: None,
        trigger_recovery: None,
    };
    if method == Method::EpoInpaint && !task.objective.decomposable() {
        record.status = CellStatus::Skipped;
        record.reason = Some("objective is not decomposable; inpainting unavailable".into());
        record.wall_ms = start.elapsed().as_millis();
        return (record, None);
    }
    let outcome = (|| -> Result<(RunResult, Vec<CandidateRow>)> {
        let override_lm = match &task.model {
            Some(rel) => Some(load_lm(&env.task_dir.join(rel))?),
            None => None,
        };
        let lm = override_lm.as_ref().unwrap_or(&env.lm);
        task.validate(lm, env.sae.as_ref())?;
        let models = Models {
            lm,
            sae: env.sae.as_ref(),
            denoiser: env.denoiser.as_ref(),
            vocab: env.vocab.as_ref(),
            restart_corpus: env.corpus.as_deref(),
        };
        let mut opt = env.config.optimizer.clone();
        opt.seed = seed;
        let init = task.initial_seq()?;
        let mock: MockOracle;
        let http: HttpOracle;
        let oracle: Option<&dyn ProposalOracle> = if method == Method::EpoAssist {
            match env.config.oracle.as_deref() {
                Some("mock") => {
                    let vocab = env.vocab.as_ref().expect("validated vocab");
                    mock = MockOracle::new(
                        vocab.tokens().to_vec(),
                        rng::mix_seed(seed, "oracle", 0),
                    );
                    Some(&mock)
                }
                Some(addr) => {
                    http = HttpOracle::new(addr);
                    Some(&http)
                }
                None => unreachable!("validated oracle"),
            }
        } else {
            None
        };
        let result = match method {
            Method::Gcg => run_gcg(&task.objective, &init, &models, &opt)?,
            Method::Epo => run_epo(&task.objective, &init, Variant::Plain, &models, &opt, None)?,
            Method::EpoAssist => {
                run_epo(&task.objective, &init, Variant::Assist, &models, &opt, oracle)?
            }
            Method::EpoInpaint => {
                run_epo(&task.objective, &init, Variant::Inpaint, &models, &opt, None)?
            }
            Method::RandomBaseline => {
                run_random_baseline(&task.objective, &init, &models, &opt)?
            }
        };
        let scale = match task.a_star {
            Some(a) => 1.0 / a,
            None => 1.0,
        };
        let rows = report::run_rows(&result, &cell_lambdas(method, &opt), scale)?;
        Ok((result, rows))
    })();
    record.wall_ms = start.elapsed().as_millis();
    match outcome {
        Ok((result, rows)) => {
            record.evaluations = Some(result.evaluated.len());
            if let Some(trigger) = &task.trigger {
                record.trigger_recovery = result.best().and_then(|best| {
                    trigger.recovery(&unfrozen_prefix(&best.seq.ids, &best.seq.frozen))
                });
            }
            (record, Some(rows))
        }
        Err(e) => {
            record.status = CellStatus::Failed;
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

/// Runs the full (method x task) grid and writes the report plus a manifest.
/// Returns the process exit code: 0 when any cell succeeded or the grid was
/// skipped entirely, 1 when every attempted cell failed.
pub fn cmd_bench(config_path: &Path, ov: &Overrides) -> Result<i32> {
    let config = RunConfig::load(config_path, ov)?;
    let task_bytes = std::fs::read(&config.tasks).map_err(|e| Error::io(&config.tasks, e))?;
    let task_file = load_task_file(&config.tasks)?;
    let env = BenchEnv {
        lm: load_lm(&config.lm)?,
        sae: match &config.sae {
            Some(p) => Some(load_sae(p)?),
            None => None,
        },
        denoiser: match &config.denoiser {
            Some(p) => Some(load_denoiser(p)?),
            None => None,
        },
        vocab: match &config.vocab {
            Some(p) => Some(Vocab::load(p)?),
            None => None,
        },
        corpus: match (&config.corpus, &config.vocab) {
            (Some(c), Some(v)) => Some(load_corpus(c, &Vocab::load(v)?)?),
            (Some(c), None) => {
                return Err(Error::InvalidConfig(format!(
                    "`artifacts.corpus` ({}) needs `artifacts.vocab` to decode",
                    c.display()
                )))
            }
            (None, _) => None,
        },
        task_dir: config
            .tasks
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf(),
        tasks: task_file.tasks,
        config,
    };
    let config = &env.config;
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;

    let n_tasks = env.tasks.len();
    let cells: Vec<(usize, Method, &TaskRecord)> = config
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, &m)| {
            env.tasks.iter().enumerate().map(move |(ti, t)| (mi * n_tasks + ti, m, t))
        })
        .collect();

    let outcomes: Vec<(CellRecord, Option<Vec<CandidateRow>>)> = if config.jobs == 1 {
        cells.iter().map(|&(i, m, t)| run_cell(&env, i, m, t)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(|&(i, m, t)| run_cell(&env, i, m, t)).collect()
        })
    };

    let mut results: Vec<MethodResult> = Vec::new();
    for &method in &config.methods {
        results.push(MethodResult::new(method.name()));
    }
    let mut records = Vec::with_capacity(outcomes.len());
    for ((record, rows), &(_, method, task)) in outcomes.into_iter().zip(&cells) {
        if let Some(rows) = rows {
            let slot = config.methods.iter().position(|&m| m == method).expect("known method");
            results[slot].tasks.insert(task.id.clone(), rows);
        }
        records.push(record);
    }
    results.retain(|r| !r.tasks.is_empty());

    let ok = records.iter().filter(|r| r.status == CellStatus::Ok).count();
    let failed = records.iter().filter(|r| r.status == CellStatus::Failed).count();
    let skipped = records.len() - ok - failed;

    let window = (FLUENCY_LO, FLUENCY_HI);
    report::emit_report(&config.out, &results, window, config.seed)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: config.seed,
        jobs: config.jobs,
        oracle: config.oracle.as_deref(),
        config_hash: config_hash(config, &task_bytes)?,
        window,
        cells: records,
    };
    let manifest_path = config.out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&manifest_path, e))?;

    println!(
        "bench: {ok} ok, {failed} failed, {skipped} skipped; report in {}",
        config.out.display()
    );
    if ok == 0 && failed > 0 {
        return Ok(1);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Rebuilds summary.json and scatter.svg from results.csv alone.
pub fn cmd_report(dir: &Path, seed: u64) -> Result<()> {
    let csv = dir.join("results.csv");
    if !csv.exists() {
        return Err(Error::InvalidConfig(format!(
            "{} has no results.csv",
            dir.display()
        )));
    }
    let window = (FLUENCY_LO, FLUENCY_HI);
    let results = report::read_csv(&csv, window)?;
    report::write_summary_and_svg(dir, &results, window, seed)?;
    let rows: usize = results.iter().flat_map(|m| m.tasks.values()).map(Vec::len).sum();
    println!(
        "report: {} methods, {rows} rows; wrote summary.json and scatter.svg in {}",
        results.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle-mock
// ---------------------------------------------------------------------------

/// Binds `addr` (port 0 picks a free port), prints the bound address, and
/// serves mock proposals until `max_requests` is reached.
pub fn cmd_oracle_mock(
    vocab_path: &Path,
    addr: &str,
    seed: u64,
    max_requests: Option<usize>,
) -> Result<()> {
    let vocab = Vocab::load(vocab_path)?;
    let listener = std::net::TcpListener::bind(addr)
        .map_err(|e| Error::Oracle(format!("bind {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| Error::Oracle(format!("local addr: {e}")))?;
    println!("oracle listening on {local}");
    use std::io::Write;
    std::io::stdout().flush().ok();
    let oracle = MockOracle::new(vocab.tokens().to_vec(), seed);
    crate::oracle::serve_oracle(listener, &oracle, max_requests)
}
