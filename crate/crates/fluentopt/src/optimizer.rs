//! The search core: GCG single-token swaps, EPO with a lambda-swept
//! population and Pareto frontier, denoiser inpainting refreshes, and
//! oracle-assisted refreshes. Minimizes loss(lambda) = -f(t) + lambda * CE(t)
//! per population slot; per-slot loss never increases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, DenoiserParams};
use crate::error::{Error, Result};
use crate::lm::{self, CeLoss, GradientLoss, LMParams, SumLoss};
use crate::objective::{self, ObjectiveSpec};
use crate::oracle::{PopulationRecord, ProposalOracle, ProposalRequest, TruncateSide};
use crate::rng;
use crate::sae::SAEParams;
use crate::vocab::{TokenSeq, Vocab};

/// Fluency window bounds (cross-entropy, inclusive).
pub const FLUENCY_LO: f64 = 3.0;
pub const FLUENCY_HI: f64 = 9.0;

/// One lambda per population slot, strictly ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaSchedule {
    values: Vec<f64>,
}

impl LambdaSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("lambda schedule is empty".into()));
        }
        for w in values.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig(format!(
                    "lambda schedule not strictly ascending at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidConfig("lambda values must be finite and >= 0".into()));
        }
        Ok(LambdaSchedule { values })
    }

    /// Geometrically spaced default grid spanning the fluency regimes.
    pub fn default_grid() -> Self {
        LambdaSchedule { values: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<f64>> for LambdaSchedule {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        LambdaSchedule::new(values)
    }
}

impl From<LambdaSchedule> for Vec<f64> {
    fn from(s: LambdaSchedule) -> Vec<f64> {
        s.values
    }
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::default_grid()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub population: usize,
    /// Sequence length used by task generators; runs take n from the task.
    pub n: usize,
    /// Proposals sampled per population member per step (B).
    pub proposals: usize,
    /// Gradient entries kept per unfrozen position.
    pub top_k: usize,
    pub assist_period: usize,
    pub inpaint_period: usize,
    pub freeze_top_fraction: f64,
    pub random_freeze_prob: f64,
    /// Unmasking rounds handed to the denoiser per refresh.
    pub inpaint_rounds: usize,
    pub seed: u64,
    /// Re-seed the worst slot from corpus text every this many iterations.
    pub restart_period: Option<usize>,
    pub lambdas: LambdaSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 150,
            population: 8,
            n: 12,
            proposals: 16,
            top_k: 16,
            assist_period: 50,
            inpaint_period: 15,
            freeze_top_fraction: 0.25,
            random_freeze_prob: 0.25,
            inpaint_rounds: 8,
            seed: 0,
            restart_period: None,
            lambdas: LambdaSchedule::default_grid(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("population", self.population),
            ("n", self.n),
            ("proposals", self.proposals),
            ("top_k", self.top_k),
            ("assist_period", self.assist_period),
            ("inpaint_period", self.inpaint_period),
            ("inpaint_rounds", self.inpaint_rounds),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("freeze_top_fraction", self.freeze_top_fraction),
            ("random_freeze_prob", self.random_freeze_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.restart_period == Some(0) {
            return Err(Error::InvalidConfig("restart_period must be >= 1".into()));
        }
        if self.lambdas.len() != self.population {
            return Err(Error::InvalidConfig(format!(
                "lambda schedule length {} != population {}",
                self.lambdas.len(),
                self.population
            )));
        }
        Ok(())
    }

    /// GCG is EPO with a single slot at lambda = 0.
    pub fn as_gcg(&self) -> OptimizerConfig {
        let mut cfg = self.clone();
        cfg.population = 1;
        cfg.lambdas = LambdaSchedule { values: vec![0.0] };
        cfg
    }
}

/// Everything a run needs model-side. `vocab` is required for the assist
/// variant (text boundary), `denoiser` for the inpaint variant,
/// `restart_corpus` when restarts are enabled.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub lm: &'a LMParams,
    pub sae: Option<&'a SAEParams>,
    pub denoiser: Option<&'a DenoiserParams>,
    pub vocab: Option<&'a Vocab>,
    pub restart_corpus: Option<&'a [Vec<u32>]>,
}

impl<'a> Models<'a> {
    pub fn lm_only(lm: &'a LMParams) -> Self {
        Models { lm, sae: None, denoiser: None, vocab: None, restart_corpus: None }
    }
}

/// A scored sequence. f and ce are exact values under the current models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub seq: TokenSeq,
    pub f: f64,
    pub ce: f64,
}

impl Candidate {
    pub fn loss(&self, lambda: f64) -> f64 {
        -self.f + lambda * self.ce
    }

    pub fn in_window(&self) -> bool {
        (FLUENCY_LO..=FLUENCY_HI).contains(&self.ce)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Assist,
    Inpaint,
}

impl Variant {
    pub fn method_name(self) -> &'static str {
        match self {
            Variant::Plain => "epo",
            Variant::Assist => "epo_assist",
            Variant::Inpaint => "epo_inpaint",
        }
    }
}

/// Per-lambda population plus assist proposals awaiting the next step's pool.
#[derive(Clone, Debug)]
pub struct EpoState {
    pub slots: Vec<Candidate>,
    pub pending: Vec<Candidate>,
}

/// Scores a sequence with one forward pass.
pub fn evaluate(models: &Models, spec: &ObjectiveSpec, seq: TokenSeq) -> Result<Candidate> {
    let cache = lm::forward_cache(models.lm, &seq)?;
    let f = objective::eval_with_cache(spec, models.sae, &cache)?;
    let ce = lm::ce_from_cache(&cache, &seq.ids)?;
    Ok(Candidate { seq, f, ce })
}

/// Single-token-swap proposals for one member: gradient of -f + lambda * CE,
/// per-position top-k predicted-improvement entries pooled, B uniform draws.
/// Predicted delta ties break to the lower token id within a position.
fn member_proposals(
    models: &Models,
    spec: &ObjectiveSpec,
    lambda: f64,
    cand: &Candidate,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<TokenSeq>> {
    let unfrozen = cand.seq.unfrozen_positions();
    if unfrozen.is_empty() {
        return Err(Error::NoUnfrozenPosition);
    }
    let obj = objective::objective_gradient_loss(spec, models.lm, models.sae)?;
    let ce = CeLoss;
    let loss = SumLoss { terms: vec![(&obj as &dyn GradientLoss, 1.0), (&ce, lambda)] };
    let g = lm::input_gradient(models.lm, &cand.seq, &loss)?;

    let mut pool: Vec<(usize, u32)> = Vec::new();
    for &i in &unfrozen {
        let row = g.row(i);
        let base = row[cand.seq.ids[i] as usize];
        let mut entries: Vec<(f64, u32)> = (0..g.cols as u32)
            .filter(|&v| v != cand.seq.ids[i])
            .map(|v| (row[v as usize] - base, v))
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        entries.truncate(config.top_k);
        pool.extend(entries.into_iter().map(|(_, v)| (i, v)));
    }
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = rng::stream(seed, "swap-draw", 0);
    let mut out = Vec::with_capacity(config.proposals);
    for _ in 0..config.proposals {
        let (i, v) = pool[rng.gen_range(0..pool.len())];
        let mut ids = cand.seq.ids.clone();
        ids[i] = v;
        out.push(TokenSeq { ids, frozen: cand.seq.frozen.clone() });
    }
    Ok(out)
}

/// Each slot keeps the argmin of loss(lambda) over itself and the shared
/// pool; improvement must be strict, so ties keep the incumbent.
pub(crate) fn retain_slots(slots: &mut [Candidate], lambdas: &[f64], pool: &[Candidate]) {
    for (slot, &lambda) in slots.iter_mut().zip(lambdas) {
        let mut best_loss = slot.loss(lambda);
        let mut best: Option<&Candidate> = None;
        for cand in pool {
            let l = cand.loss(lambda);
            if l < best_loss {
                best_loss = l;
                best = Some(cand);
            }
        }
        if let Some(cand) = best {
            *slot = cand.clone();
        }
    }
}

/// One EPO iteration: per-member gradients, pooled proposals (plus pending
/// assist proposals), exact evaluation, per-lambda retention. Returns the
/// newly evaluated candidates.
pub fn epo_step(
    state: &mut EpoState,
    spec: &ObjectiveSpec,
    models: &Models,
    config: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate>> {
    let lambdas = config.lambdas.values();
    if state.slots.len() != lambdas.len() {
        return Err(Error::InvalidConfig(format!(
            "population {} does not match lambda schedule {}",
            state.slots.len(),
            lambdas.len()
        )));
    }
    let member_seeds: Vec<u64> = state.slots.iter().map(|_| rng.gen()).collect();
    let proposal_sets: Vec<Vec<TokenSeq>> = state
        .slots
        .par_iter()
        .zip(member_seeds.par_iter())
        .zip(lambdas.par_iter())
        .map(|((cand, &seed), &lambda)| {
            member_proposals(models, spec, lambda, cand, config, seed)
        })
        .collect::<Result<_>>()?;
    let proposals: Vec<TokenSeq> = proposal_sets.into_iter().flatten().collect();
    let evaluated: Vec<Candidate> = proposals
        .into_par_iter()
        .map(|seq| evaluate(models, spec, seq))
        .collect::<Result<_>>()?;

    let mut pool = evaluated.clone();
    pool.append(&mut state.pending);
    retain_slots(&mut state.slots, lambdas, &pool);
    Ok(evaluated)
}

/// Frozen mask for one inpainting refresh: task-frozen positions, the top
/// ceil(fraction * n) positions by attribution (ties to the lower index), and
/// each remaining position independently with probability `random_prob`.
pub fn build_inpaint_mask(
    attribution: &[f64],
    task_frozen: &[bool],
    top_fraction: f64,
    random_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let n = attribution.len();
    let top_count = ((top_fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| attribution[b].total_cmp(&attribution[a]).then(a.cmp(&b)));
    let mut mask = task_frozen.to_vec();
    for &i in order.iter().take(top_count) {
        mask[i] = true;
    }
    for slot in mask.iter_mut() {
        if !*slot && rng.gen::<f64>() < random_prob {
            *slot = true;
        }
    }
    mask
}

/// Per member: freeze by attribution, inpaint the rest with the denoiser,
/// keep the refresh only if loss(lambda) strictly improves.
pub fn inpaint_refresh(
    state: &mut EpoState,
    spec: &ObjectiveSpec,
    models: &Models,
    config: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate>> {
    if !spec.decomposable() {
        return Err(Error::InpaintingUnavailable);
    }
    let den = models
        .denoiser
        .ok_or_else(|| Error::InvalidConfig("inpainting refresh needs a denoiser".into()))?;
    let lambdas = config.lambdas.values().to_vec();
    let mut evaluated = Vec::new();
    for (slot, lambda) in state.slots.iter_mut().zip(lambdas) {
        let attribution = objective::per_token_attribution(spec, models.lm, models.sae, &slot.seq)?;
        let mask = build_inpaint_mask(
            &attribution,
            &slot.seq.frozen,
            config.freeze_top_fraction,
            config.random_freeze_prob,
            rng,
        );
        let masked = TokenSeq::with_frozen(slot.seq.ids.clone(), mask)?;
        let inpainted = denoiser::inpaint(den, &masked, config.inpaint_rounds, rng.gen())?;
        if inpainted.ids == slot.seq.ids {
            continue;
        }
        let refreshed = TokenSeq::with_frozen(inpainted.ids, slot.seq.frozen.clone())?;
        let cand = evaluate(models, spec, refreshed)?;
        if cand.loss(lambda) < slot.loss(lambda) {
            *slot = cand.clone();
        }
        evaluated.push(cand);
    }
    Ok(evaluated)
}

/// Fits an oracle proposal to length n: truncate on the tagged side, extend
/// greedily on the opposite side when short.
pub(crate) fn fit_to_length(
    mut ids: Vec<u32>,
    n: usize,
    side: TruncateSide,
    lm_params: &LMParams,
) -> Result<Vec<u32>> {
    match side {
        TruncateSide::Right => {
            if ids.len() > n {
                ids.truncate(n);
            } else if ids.len() < n {
                ids = lm::greedy_prepend(lm_params, &ids, n - ids.len())?;
            }
        }
        TruncateSide::Left => {
            if ids.len() > n {
                ids.drain(..ids.len() - n);
            } else if ids.len() < n {
                ids = lm::greedy_extend(lm_params, &ids, n - ids.len())?;
            }
        }
    }
    Ok(ids)
}

/// Sends the population to the oracle and stages its proposals for the next
/// step's pool. Oracle failure leaves the state unchanged (warning only).
pub fn assist_refresh(
    state: &mut EpoState,
    spec: &ObjectiveSpec,
    models: &Models,
    oracle: &dyn ProposalOracle,
    config: &OptimizerConfig,
) -> Result<Vec<Candidate>> {
    let vocab = models
        .vocab
        .ok_or_else(|| Error::InvalidConfig("assist refresh needs a vocabulary".into()))?;
    let mut order: Vec<&Candidate> = state.slots.iter().collect();
    order.sort_by(|a, b| b.f.total_cmp(&a.f));
    let population = order
        .iter()
        .map(|c| {
            Ok(PopulationRecord { text: vocab.decode(&c.seq.ids)?, f: c.f, ce: c.ce })
        })
        .collect::<Result<Vec<_>>>()?;
    let template = state.slots[0].seq.clone();
    let request = ProposalRequest {
        task: spec.kind_name().to_string(),
        n: template.len(),
        count: config.proposals,
        population,
    };
    let records = match oracle.propose(&request) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("oracle failure, population unchanged: {e}");
            return Ok(Vec::new());
        }
    };
    let mut evaluated = Vec::new();
    for record in records {
        let ids = match vocab.encode(&record.text) {
            Ok(ids) if !ids.is_empty() => ids,
            Ok(_) => {
                log::warn!("dropping empty oracle proposal");
                continue;
            }
            Err(e) => {
                log::warn!("dropping untokenizable oracle proposal: {e}");
                continue;
            }
        };
        let mut ids = fit_to_length(ids, template.len(), record.truncate, models.lm)?;
        for (i, &frozen) in template.frozen.iter().enumerate() {
            if frozen {
                ids[i] = template.ids[i];
            }
        }
        let seq = TokenSeq::with_frozen(ids, template.frozen.clone())?;
        let cand = evaluate(models, spec, seq)?;
        evaluated.push(cand.clone());
        state.pending.push(cand);
    }
    Ok(evaluated)
}

/// Full run output: every candidate ever evaluated, the non-dominated
/// frontier of that set, the final per-lambda population, and the slot
/// snapshots after each iteration.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub evaluated: Vec<Candidate>,
    pub frontier: Vec<Candidate>,
    pub slots: Vec<Candidate>,
    pub history: Vec<Vec<Candidate>>,
    pub assist_calls: usize,
    pub inpaint_refreshes: usize,
}

impl RunResult {
    /// Best-f slot after each iteration.
    pub fn trajectory(&self) -> Vec<&Candidate> {
        self.history.iter().filter_map(|slots| best_f(slots)).collect()
    }

    pub fn best(&self) -> Option<&Candidate> {
        best_f(&self.evaluated)
    }
}

pub fn best_f(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates.iter().reduce(|best, c| if c.f > best.f { c } else { best })
}

fn validate_run(
    spec: &ObjectiveSpec,
    init: &TokenSeq,
    variant: Variant,
    models: &Models,
    config: &OptimizerConfig,
    oracle: Option<&dyn ProposalOracle>,
) -> Result<()> {
    config.validate()?;
    spec.validate(models.lm, models.sae)?;
    if init.unfrozen_positions().is_empty() {
        return Err(Error::NoUnfrozenPosition);
    }
    if config.restart_period.is_some() && models.restart_corpus.is_none() {
        return Err(Error::InvalidConfig("restarts need a restart corpus".into()));
    }
    match variant {
        Variant::Plain => {}
        Variant::Assist => {
            if oracle.is_none() {
                return Err(Error::InvalidConfig("assist variant needs an oracle".into()));
            }
            let vocab = models
                .vocab
                .ok_or_else(|| Error::InvalidConfig("assist variant needs a vocabulary".into()))?;
            if vocab.len() != models.lm.vocab_size() {
                return Err(Error::LengthMismatch {
                    expected: models.lm.vocab_size(),
                    got: vocab.len(),
                });
            }
        }
        Variant::Inpaint => {
            if !spec.decomposable() {
                return Err(Error::InpaintingUnavailable);
            }
            let den = models
                .denoiser
                .ok_or_else(|| Error::InvalidConfig("inpaint variant needs a denoiser".into()))?;
            if den.vocab_size() != models.lm.vocab_size() {
                return Err(Error::LengthMismatch {
                    expected: models.lm.vocab_size(),
                    got: den.vocab_size(),
                });
            }
            if init.len() > den.t.cfg.ctx {
                return Err(Error::ContextOverflow { len: init.len(), ctx: den.t.cfg.ctx });
            }
        }
    }
    Ok(())
}

/// Runs the configured variant for `config.iterations` steps from `init`.
/// Deterministic given the seed (and a deterministic oracle).
pub fn run_epo(
    spec: &ObjectiveSpec,
    init: &TokenSeq,
    variant: Variant,
    models: &Models,
    config: &OptimizerConfig,
    oracle: Option<&dyn ProposalOracle>,
) -> Result<RunResult> {
    validate_run(spec, init, variant, models, config, oracle)?;
    let mut rng = rng::stream(config.seed, "epo-run", 0);
    let first = evaluate(models, spec, init.clone())?;
    let mut state = EpoState {
        slots: vec![first.clone(); config.population],
        pending: Vec::new(),
    };
    let mut evaluated = vec![first];
    let mut history = Vec::with_capacity(config.iterations);
    let mut assist_calls = 0;
    let mut inpaint_refreshes = 0;

    for iter in 1..=config.iterations {
        evaluated.extend(epo_step(&mut state, spec, models, config, &mut rng)?);
        if variant == Variant::Inpaint && iter % config.inpaint_period == 0 {
            evaluated.extend(inpaint_refresh(&mut state, spec, models, config, &mut rng)?);
            inpaint_refreshes += 1;
        }
        if variant == Variant::Assist && iter % config.assist_period == 0 {
            let oracle = oracle.expect("validated");
            evaluated.extend(assist_refresh(&mut state, spec, models, oracle, config)?);
            assist_calls += 1;
        }
        if let Some(period) = config.restart_period {
            if iter % period == 0 {
                if let Some(cand) = restart_worst(&mut state, spec, models, config, &mut rng)? {
                    evaluated.push(cand);
                }
            }
        }
        history.push(state.slots.clone());
    }
    let frontier = pareto_extract(&evaluated);
    Ok(RunResult {
        evaluated,
        frontier,
        slots: state.slots,
        history,
        assist_calls,
        inpaint_refreshes,
    })
}

/// Replaces the worst slot (by its own lambda loss) with a random corpus
/// window, keeping task-frozen tokens. Unconditional: restarts trade the
/// monotonicity guarantee for diversity, which is why they default off.
fn restart_worst(
    state: &mut EpoState,
    spec: &ObjectiveSpec,
    models: &Models,
    config: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Candidate>> {
    let corpus = models.restart_corpus.expect("validated");
    let lambdas = config.lambdas.values();
    let n = state.slots[0].seq.len();
    let candidates: Vec<&Vec<u32>> = corpus.iter().filter(|doc| doc.len() >= n).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let doc = candidates[rng.gen_range(0..candidates.len())];
    let start = rng.gen_range(0..=doc.len() - n);
    let template = &state.slots[0].seq;
    let mut ids = doc[start..start + n].to_vec();
    for (i, &frozen) in template.frozen.iter().enumerate() {
        if frozen {
            ids[i] = template.ids[i];
        }
    }
    let seq = TokenSeq::with_frozen(ids, template.frozen.clone())?;
    let cand = evaluate(models, spec, seq)?;
    let worst = (0..state.slots.len())
        .max_by(|&a, &b| {
            state.slots[a].loss(lambdas[a]).total_cmp(&state.slots[b].loss(lambdas[b]))
        })
        .expect("non-empty population");
    state.slots[worst] = cand.clone();
    Ok(Some(cand))
}

/// GCG: population 1, lambda = {0}, plain variant.
pub fn run_gcg(
    spec: &ObjectiveSpec,
    init: &TokenSeq,
    models: &Models,
    config: &OptimizerConfig,
) -> Result<RunResult> {
    run_epo(spec, init, Variant::Plain, models, &config.as_gcg(), None)
}

/// Budget-matched random search: the same evaluation count as an EPO run
/// (iterations x population x proposals), each candidate a fresh uniform
/// fill of the unfrozen positions. History tracks the best-f-so-far.
pub fn run_random_baseline(
    spec: &ObjectiveSpec,
    init: &TokenSeq,
    models: &Models,
    config: &OptimizerConfig,
) -> Result<RunResult> {
    config.validate()?;
    spec.validate(models.lm, models.sae)?;
    let unfrozen = init.unfrozen_positions();
    if unfrozen.is_empty() {
        return Err(Error::NoUnfrozenPosition);
    }
    let vocab = models.lm.vocab_size() as u32;
    let mut rng = rng::stream(config.seed, "random-baseline", 0);
    let first = evaluate(models, spec, init.clone())?;
    let mut best = first.clone();
    let mut evaluated = vec![first];
    let mut history = Vec::with_capacity(config.iterations);
    let per_iter = config.population * config.proposals;
    for _ in 0..config.iterations {
        for _ in 0..per_iter {
            let mut seq = init.clone();
            for &pos in &unfrozen {
                seq.ids[pos] = rng.gen_range(0..vocab);
            }
            let cand = evaluate(models, spec, seq)?;
            if cand.f > best.f {
                best = cand.clone();
            }
            evaluated.push(cand);
        }
        history.push(vec![best.clone()]);
    }
    let frontier = pareto_extract(&evaluated);
    Ok(RunResult {
        evaluated,
        frontier,
        slots: vec![best],
        history,
        assist_calls: 0,
        inpaint_refreshes: 0,
    })
}

/// Non-dominated set under (f maximize, ce minimize). Exact (f, ce) ties
/// keep one representative: the lexicographically smallest token ids.
pub fn pareto_extract(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| {
        b.f.total_cmp(&a.f)
            .then(a.ce.total_cmp(&b.ce))
            .then_with(|| a.seq.ids.cmp(&b.seq.ids))
    });
    let mut out: Vec<Candidate> = Vec::new();
    let mut best_ce = f64::INFINITY;
    for cand in sorted {
        if cand.ce < best_ce {
            best_ce = cand.ce;
            out.push(cand.clone());
        }
    }
    out
}

/// Highest-f candidate with ce inside [lo, hi] (inclusive); None when the
/// window is empty.
pub fn best_in_window(candidates: &[Candidate], lo: f64, hi: f64) -> Option<&Candidate> {
    candidates
        .iter()
        .filter(|c| c.ce >= lo && c.ce <= hi)
        .reduce(|best, c| if c.f > best.f { c } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveSpec;
    use crate::oracle::{MockOracle, ProposalRecord};
    use crate::sae::LatentId;
    use crate::transformer::{TransformerConfig, TransformerParams};
    use crate::mat::{self, Mat};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn words(count: usize) -> Vec<String> {
        (0..count).map(|i| format!("w{i}")).collect()
    }

    fn lm_with_vocab(vocab: usize, seed: u64) -> LMParams {
        let cfg =
            TransformerConfig { vocab, d: 8, layers: 1, heads: 2, ctx: 12, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LMParams { t: TransformerParams::init(cfg, &mut rng) }
    }

    fn denoiser_with_vocab(vocab: usize, seed: u64) -> DenoiserParams {
        let cfg =
            TransformerConfig { vocab, d: 8, layers: 1, heads: 2, ctx: 12, causal: false };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenoiserParams { t: TransformerParams::init(cfg, &mut rng) }
    }

    /// SAE whose latent 0 reads along token w's embedding at read point 0.
    fn planted_sae(lm_params: &LMParams, w: u32) -> SAEParams {
        let d = lm_params.t.cfg.d;
        let emb_w = lm_params.t.emb.row(w as usize);
        let norm2 = mat::dot(emb_w, emb_w);
        let mut enc = Mat::zeros(d + 4, d);
        for (j, &e) in emb_w.iter().enumerate() {
            enc.row_mut(0)[j] = 4.0 * e / norm2;
        }
        SAEParams {
            enc,
            enc_bias: vec![1.0; d + 4],
            dec: Mat::zeros(d + 4, d),
            dec_bias: vec![0.0; d],
            theta: 0.0,
            layer: 0,
        }
    }

    fn small_config(iterations: usize, population: usize) -> OptimizerConfig {
        let lambdas = match population {
            1 => vec![0.0],
            4 => vec![0.0, 0.1, 0.4, 1.6],
            _ => panic!("unsupported test population"),
        };
        OptimizerConfig {
            iterations,
            population,
            n: 6,
            proposals: 8,
            top_k: 4,
            assist_period: 3,
            inpaint_period: 2,
            inpaint_rounds: 2,
            seed: 11,
            lambdas: LambdaSchedule::new(lambdas).unwrap(),
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn gcg_places_planted_token() {
        let lm_params = lm_with_vocab(32, 1);
        let w = 20u32;
        let sae_params = planted_sae(&lm_params, w);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models {
            sae: Some(&sae_params),
            ..Models::lm_only(&lm_params)
        };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let mut config = small_config(10, 1);
        config.top_k = 4;
        let result = run_gcg(&spec, &init, &models, &config).unwrap();
        assert!(
            result.slots[0].seq.ids.contains(&w),
            "token {w} not placed: {:?}",
            result.slots[0].seq.ids
        );
    }

    #[test]
    fn gcg_objective_is_non_decreasing() {
        let lm_params = lm_with_vocab(16, 2);
        let sae_params = planted_sae(&lm_params, 9);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let result = run_gcg(&spec, &init, &models, &small_config(12, 1)).unwrap();
        let traj = result.trajectory();
        for w in traj.windows(2) {
            assert!(w[1].f >= w[0].f);
        }
    }

    #[test]
    fn gcg_beats_budget_matched_random_search() {
        let mut gcg_total = 0.0;
        let mut random_total = 0.0;
        for seed in 0..20u64 {
            let lm_params = lm_with_vocab(32, 100 + seed);
            let w = 17u32;
            let sae_params = planted_sae(&lm_params, w);
            let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
            let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };
            let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
            let mut config = small_config(8, 1);
            config.seed = seed;
            let result = run_gcg(&spec, &init, &models, &config).unwrap();
            gcg_total += result.best().unwrap().f;

            let random = run_random_baseline(&spec, &init, &models, &config).unwrap();
            assert_eq!(random.evaluated.len(), result.evaluated.len());
            random_total += random.best().unwrap().f;
        }
        assert!(
            gcg_total >= random_total,
            "gcg mean {} < random mean {}",
            gcg_total / 20.0,
            random_total / 20.0
        );
    }

    #[test]
    fn random_baseline_respects_budget_frozen_tokens_and_seed() {
        let lm_params = lm_with_vocab(16, 5);
        let sae_params = planted_sae(&lm_params, 9);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };
        let init =
            TokenSeq::with_frozen(vec![4, 5, 6, 7, 8, 9], vec![true, false, false, true, false, false])
                .unwrap();
        let config = small_config(6, 4);
        let result = run_random_baseline(&spec, &init, &models, &config).unwrap();
        assert_eq!(result.evaluated.len(), 1 + 6 * 4 * config.proposals);
        assert_eq!(result.history.len(), 6);
        for cand in &result.evaluated {
            assert_eq!(cand.seq.ids[0], 4);
            assert_eq!(cand.seq.ids[3], 7);
        }
        for w in result.history.windows(2) {
            assert!(w[1][0].f >= w[0][0].f);
        }
        assert_eq!(result.history.last().unwrap()[0].f, result.best().unwrap().f);

        let again = run_random_baseline(&spec, &init, &models, &config).unwrap();
        for (a, b) in result.evaluated.iter().zip(&again.evaluated) {
            assert_eq!(a.seq.ids, b.seq.ids);
            assert_eq!(a.f.to_bits(), b.f.to_bits());
        }

        let all_frozen =
            TokenSeq::with_frozen(vec![4, 5], vec![true, true]).unwrap();
        assert!(matches!(
            run_random_baseline(&spec, &all_frozen, &models, &config),
            Err(Error::NoUnfrozenPosition)
        ));
    }

    #[test]
    fn exhaustive_optimum_is_retained_unchanged() {
        let cfg = TransformerConfig { vocab: 2, d: 4, layers: 1, heads: 1, ctx: 4, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm_params = LMParams { t: TransformerParams::init(cfg, &mut rng) };
        let sae_params = planted_sae(&lm_params, 1);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };

        let mut best: Option<Candidate> = None;
        for bits in 0..16u32 {
            let ids: Vec<u32> = (0..4).map(|i| (bits >> i) & 1).collect();
            let cand = evaluate(&models, &spec, TokenSeq::new(ids)).unwrap();
            if best.as_ref().is_none_or(|b| cand.f > b.f) {
                best = Some(cand);
            }
        }
        let best = best.unwrap();

        let config = OptimizerConfig {
            population: 1,
            n: 4,
            proposals: 16,
            top_k: 2,
            lambdas: LambdaSchedule::new(vec![0.0]).unwrap(),
            ..OptimizerConfig::default()
        };
        let mut state = EpoState { slots: vec![best.clone()], pending: Vec::new() };
        let mut rng = rng::stream(7, "test-step", 0);
        for _ in 0..5 {
            epo_step(&mut state, &spec, &models, &config, &mut rng).unwrap();
            assert_eq!(state.slots[0], best, "optimal incumbent displaced");
        }
    }

    #[test]
    fn per_lambda_loss_never_increases_in_any_variant() {
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 4);
        let den = denoiser_with_vocab(vocab.len(), 5);
        let sae_params = planted_sae(&lm_params, 9);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let oracle = MockOracle::new(words(12), 6);
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: Some(&den),
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        for variant in [Variant::Plain, Variant::Assist, Variant::Inpaint] {
            let config = small_config(12, 4);
            let result =
                run_epo(&spec, &init, variant, &models, &config, Some(&oracle)).unwrap();
            let lambdas = config.lambdas.values();
            for j in 0..lambdas.len() {
                let mut prev = f64::INFINITY;
                for slots in &result.history {
                    let loss = slots[j].loss(lambdas[j]);
                    assert!(
                        loss <= prev + 1e-12,
                        "{:?} slot {j}: loss rose {prev} -> {loss}",
                        variant
                    );
                    prev = loss;
                }
            }
        }
    }

    #[test]
    fn gcg_is_bit_identical_to_single_slot_epo() {
        let lm_params = lm_with_vocab(16, 8);
        let sae_params = planted_sae(&lm_params, 7);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let config = small_config(8, 1);
        let a = run_gcg(&spec, &init, &models, &config).unwrap();
        let b = run_epo(&spec, &init, Variant::Plain, &models, &config.as_gcg(), None).unwrap();
        assert_eq!(a.evaluated, b.evaluated);
        assert_eq!(a.slots, b.slots);
    }

    #[test]
    fn rerun_with_same_seed_is_identical_and_frontier_has_extremes() {
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 9);
        let sae_params = planted_sae(&lm_params, 10);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let oracle = MockOracle::new(words(12), 13);
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: None,
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let config = small_config(9, 4);
        let a = run_epo(&spec, &init, Variant::Assist, &models, &config, Some(&oracle)).unwrap();
        let b = run_epo(&spec, &init, Variant::Assist, &models, &config, Some(&oracle)).unwrap();
        assert_eq!(a.evaluated, b.evaluated);
        assert_eq!(a.assist_calls, 3);

        let best_f_cand = a.evaluated.iter().cloned().reduce(|x, y| if y.f > x.f { y } else { x });
        let best_ce_cand =
            a.evaluated.iter().cloned().reduce(|x, y| if y.ce < x.ce { y } else { x });
        let fs: Vec<f64> = a.frontier.iter().map(|c| c.f).collect();
        let ces: Vec<f64> = a.frontier.iter().map(|c| c.ce).collect();
        assert!(fs.contains(&best_f_cand.unwrap().f));
        assert!(ces.contains(&best_ce_cand.unwrap().ce));
    }

    #[test]
    fn refresh_periods_fire_the_documented_number_of_times() {
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 14);
        let den = denoiser_with_vocab(vocab.len(), 15);
        let sae_params = planted_sae(&lm_params, 6);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let oracle = MockOracle::new(words(12), 16);
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: Some(&den),
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let mut config = small_config(150, 4);
        config.proposals = 2;
        config.top_k = 2;
        config.assist_period = 50;
        config.inpaint_period = 15;
        let inpaint =
            run_epo(&spec, &init, Variant::Inpaint, &models, &config, None).unwrap();
        assert_eq!(inpaint.inpaint_refreshes, 10);
        assert_eq!(inpaint.assist_calls, 0);
        let assist =
            run_epo(&spec, &init, Variant::Assist, &models, &config, Some(&oracle)).unwrap();
        assert_eq!(assist.assist_calls, 3);
        assert_eq!(assist.inpaint_refreshes, 0);
    }

    #[test]
    fn full_freeze_leaves_state_unchanged() {
        let lm_params = lm_with_vocab(16, 17);
        let den = denoiser_with_vocab(16, 18);
        let sae_params = planted_sae(&lm_params, 5);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: Some(&den),
            vocab: None,
            restart_corpus: None,
        };
        let init = evaluate(&models, &spec, TokenSeq::new(vec![4, 5, 6, 7])).unwrap();
        let mut config = small_config(1, 4);
        config.freeze_top_fraction = 1.0;
        let mut state = EpoState { slots: vec![init; 4], pending: Vec::new() };
        let before = state.slots.clone();
        let mut rng = rng::stream(1, "freeze-test", 0);
        let evaluated = inpaint_refresh(&mut state, &spec, &models, &config, &mut rng).unwrap();
        assert!(evaluated.is_empty());
        assert_eq!(state.slots, before);
    }

    #[test]
    fn inpaint_rejects_non_decomposable_objectives() {
        let lm_params = lm_with_vocab(16, 19);
        let den = denoiser_with_vocab(16, 20);
        let spec = ObjectiveSpec::LogitDiff { target: 4, source: 5, position: None };
        let models = Models {
            lm: &lm_params,
            sae: None,
            denoiser: Some(&den),
            vocab: None,
            restart_corpus: None,
        };
        let init = evaluate(&models, &spec, TokenSeq::new(vec![4, 5, 6, 7])).unwrap();
        let mut state = EpoState { slots: vec![init; 4], pending: Vec::new() };
        let config = small_config(1, 4);
        let mut rng = rng::stream(2, "freeze-test", 0);
        assert!(matches!(
            inpaint_refresh(&mut state, &spec, &models, &config, &mut rng),
            Err(Error::InpaintingUnavailable)
        ));
        let init2 = TokenSeq::new(vec![4, 5, 6, 7]);
        assert!(matches!(
            run_epo(&spec, &init2, Variant::Inpaint, &models, &config, None),
            Err(Error::InpaintingUnavailable)
        ));
    }

    #[test]
    fn all_frozen_task_is_rejected() {
        let lm_params = lm_with_vocab(16, 21);
        let sae_params = planted_sae(&lm_params, 5);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models { sae: Some(&sae_params), ..Models::lm_only(&lm_params) };
        let init = TokenSeq::with_frozen(vec![4, 5, 6, 7], vec![true; 4]).unwrap();
        assert!(matches!(
            run_epo(&spec, &init, Variant::Plain, &models, &small_config(2, 1), None),
            Err(Error::NoUnfrozenPosition)
        ));
    }

    #[test]
    fn task_frozen_positions_survive_every_variant() {
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 22);
        let den = denoiser_with_vocab(vocab.len(), 23);
        let sae_params = planted_sae(&lm_params, 8);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let oracle = MockOracle::new(words(12), 24);
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: Some(&den),
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let frozen = vec![true, false, false, true, false, false];
        let init = TokenSeq::with_frozen(vec![4, 5, 6, 7, 8, 9], frozen.clone()).unwrap();
        for variant in [Variant::Plain, Variant::Assist, Variant::Inpaint] {
            let result =
                run_epo(&spec, &init, variant, &models, &small_config(8, 4), Some(&oracle))
                    .unwrap();
            for cand in &result.evaluated {
                assert_eq!(cand.seq.frozen, frozen);
                assert_eq!(cand.seq.ids[0], 4, "{variant:?} changed a frozen token");
                assert_eq!(cand.seq.ids[3], 7, "{variant:?} changed a frozen token");
            }
        }
    }

    /// Echo oracle: returns the population texts unchanged.
    struct EchoOracle;

    impl ProposalOracle for EchoOracle {
        fn propose(&self, request: &ProposalRequest) -> Result<Vec<ProposalRecord>> {
            Ok(request
                .population
                .iter()
                .map(|p| ProposalRecord { text: p.text.clone(), truncate: TruncateSide::Right })
                .collect())
        }
    }

    #[test]
    fn echo_oracle_changes_nothing_after_retention() {
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 25);
        let sae_params = planted_sae(&lm_params, 11);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: None,
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let config = small_config(1, 4);
        // Echoes of existing members can never strictly improve a slot that
        // already holds the population's best loss for its lambda; the
        // identical-slots state is the canonical such state.
        let member = evaluate(&models, &spec, TokenSeq::new(vec![4, 5, 6, 7, 8, 9])).unwrap();
        let mut state = EpoState { slots: vec![member; 4], pending: Vec::new() };
        assist_refresh(&mut state, &spec, &models, &EchoOracle, &config).unwrap();
        assert_eq!(state.pending.len(), 4);
        for (p, s) in state.pending.iter().zip(&state.slots) {
            assert_eq!(p, s, "echoed proposal re-evaluated to a different score");
        }
        let before = state.slots.clone();
        let pending = std::mem::take(&mut state.pending);
        retain_slots(&mut state.slots, config.lambdas.values(), &pending);
        assert_eq!(state.slots, before);
    }

    #[test]
    fn failing_oracle_leaves_state_unchanged() {
        struct BrokenOracle;
        impl ProposalOracle for BrokenOracle {
            fn propose(&self, _: &ProposalRequest) -> Result<Vec<ProposalRecord>> {
                Err(Error::Oracle("connection reset".into()))
            }
        }
        let vocab = Vocab::with_words(words(12)).unwrap();
        let lm_params = lm_with_vocab(vocab.len(), 26);
        let sae_params = planted_sae(&lm_params, 4);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: None,
            vocab: Some(&vocab),
            restart_corpus: None,
        };
        let init = evaluate(&models, &spec, TokenSeq::new(vec![4, 5, 6, 7, 8, 9])).unwrap();
        let mut state = EpoState { slots: vec![init.clone(); 4], pending: Vec::new() };
        let config = small_config(1, 4);
        let evaluated =
            assist_refresh(&mut state, &spec, &models, &BrokenOracle, &config).unwrap();
        assert!(evaluated.is_empty());
        assert!(state.pending.is_empty());
        assert_eq!(state.slots, vec![init; 4]);
    }

    #[test]
    fn fit_to_length_truncates_the_tagged_side() {
        let lm_params = lm_with_vocab(16, 27);
        let long: Vec<u32> = (4..12).collect();
        let right = fit_to_length(long.clone(), 5, TruncateSide::Right, &lm_params).unwrap();
        assert_eq!(right, vec![4, 5, 6, 7, 8]);
        let left = fit_to_length(long, 5, TruncateSide::Left, &lm_params).unwrap();
        assert_eq!(left, vec![7, 8, 9, 10, 11]);
    }

    #[test]
    fn fit_to_length_extends_the_opposite_side() {
        let lm_params = lm_with_vocab(16, 28);
        let short = vec![4u32, 5, 6];
        let right = fit_to_length(short.clone(), 5, TruncateSide::Right, &lm_params).unwrap();
        assert_eq!(right.len(), 5);
        assert_eq!(&right[2..], &[4, 5, 6], "tag right extends on the left");
        let left = fit_to_length(short, 5, TruncateSide::Left, &lm_params).unwrap();
        assert_eq!(left.len(), 5);
        assert_eq!(&left[..3], &[4, 5, 6], "tag left extends on the right");
    }

    fn make_candidate(f: f64, ce: f64, ids: Vec<u32>) -> Candidate {
        Candidate { seq: TokenSeq::new(ids), f, ce }
    }

    #[test]
    fn pareto_handles_simple_cases() {
        let single = vec![make_candidate(1.0, 2.0, vec![0])];
        assert_eq!(pareto_extract(&single).len(), 1);

        let pair = vec![
            make_candidate(1.0, 2.0, vec![0]),
            make_candidate(2.0, 1.0, vec![1]),
        ];
        assert_eq!(pareto_extract(&pair).len(), 1);
        assert_eq!(pareto_extract(&pair)[0].f, 2.0);

        // Exact ties keep the lexicographically smallest ids, once.
        let ties = vec![
            make_candidate(1.0, 2.0, vec![3, 1]),
            make_candidate(1.0, 2.0, vec![2, 9]),
        ];
        let frontier = pareto_extract(&ties);
        assert_eq!(frontier.len(), 1);
        assert_eq!(frontier[0].seq.ids, vec![2, 9]);
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(points in proptest::collection::vec((0u8..5, 0u8..5), 1..100)) {
            let candidates: Vec<Candidate> = points
                .iter()
                .enumerate()
                .map(|(i, &(f, ce))| make_candidate(f as f64, ce as f64, vec![i as u32]))
                .collect();
            let frontier = pareto_extract(&candidates);

            // Brute force: strict dominance filter, then exact ties keep the
            // lexicographically smallest ids.
            let mut expected: Vec<&Candidate> = candidates
                .iter()
                .filter(|p| {
                    !candidates.iter().any(|q| {
                        q.f >= p.f && q.ce <= p.ce && (q.f > p.f || q.ce < p.ce)
                    })
                })
                .collect();
            expected.sort_by(|a, b| {
                b.f.total_cmp(&a.f).then(a.ce.total_cmp(&b.ce)).then_with(|| a.seq.ids.cmp(&b.seq.ids))
            });
            expected.dedup_by(|a, b| a.f == b.f && a.ce == b.ce);

            prop_assert_eq!(frontier.len(), expected.len());
            for (got, want) in frontier.iter().zip(expected) {
                prop_assert_eq!(got.f, want.f);
                prop_assert_eq!(got.ce, want.ce);
                prop_assert_eq!(&got.seq.ids, &want.seq.ids);
            }

            // Frontier invariant: no member dominated by any other member.
            for p in &frontier {
                for q in &frontier {
                    let violates = q.f >= p.f && q.ce <= p.ce && q.seq.ids != p.seq.ids;
                    prop_assert!(!violates);
                }
            }
        }

        #[test]
        fn window_matches_linear_scan(points in proptest::collection::vec((0u8..20, 0u8..12), 0..40)) {
            let candidates: Vec<Candidate> = points
                .iter()
                .enumerate()
                .map(|(i, &(f, ce))| make_candidate(f as f64, ce as f64, vec![i as u32]))
                .collect();
            let got = best_in_window(&candidates, FLUENCY_LO, FLUENCY_HI);
            let mut want: Option<&Candidate> = None;
            for c in &candidates {
                if c.ce >= 3.0 && c.ce <= 9.0 && want.is_none_or(|w| c.f > w.f) {
                    want = Some(c);
                }
            }
            prop_assert_eq!(got.map(|c| c.f), want.map(|c| c.f));
            prop_assert_eq!(got.is_some(), want.is_some());
        }

        #[test]
        fn inpaint_mask_recount(
            attr in proptest::collection::vec(-5.0f64..5.0, 4..20),
            task_bits in proptest::collection::vec(proptest::bool::ANY, 4..20),
            fraction in 0.0f64..=1.0,
            all_random in proptest::bool::ANY,
        ) {
            let n = attr.len().min(task_bits.len());
            let attr = &attr[..n];
            let mut task = task_bits[..n].to_vec();
            task[0] = false; // keep at least one editable position
            let p = if all_random { 1.0 } else { 0.0 };
            let mut rng = rng::stream(5, "mask-test", 0);
            let mask = build_inpaint_mask(attr, &task, fraction, p, &mut rng);

            let top_count = ((fraction * n as f64).ceil() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| attr[b].total_cmp(&attr[a]).then(a.cmp(&b)));
            let top: std::collections::HashSet<usize> =
                order[..top_count].iter().copied().collect();

            for i in 0..n {
                let in_union = task[i] || top.contains(&i);
                let expected = if p == 1.0 { true } else { in_union };
                prop_assert_eq!(mask[i], expected, "position {}", i);
            }
        }
    }

    #[test]
    fn window_boundaries_are_inclusive() {
        let candidates = vec![
            make_candidate(5.0, 3.0, vec![0]),
            make_candidate(9.0, 10.0, vec![1]),
        ];
        let best = best_in_window(&candidates, FLUENCY_LO, FLUENCY_HI).unwrap();
        assert_eq!(best.ce, 3.0);
        let outside = vec![make_candidate(5.0, 10.0, vec![0])];
        assert!(best_in_window(&outside, FLUENCY_LO, FLUENCY_HI).is_none());
    }

    #[test]
    fn restarts_swap_the_worst_slot() {
        let lm_params = lm_with_vocab(16, 29);
        let sae_params = planted_sae(&lm_params, 5);
        let spec = ObjectiveSpec::SaeMean { latent: LatentId { layer: 0, index: 0 } };
        let corpus: Vec<Vec<u32>> = (0..8)
            .map(|i| (0..10).map(|j| 4 + ((i + j) % 12) as u32).collect())
            .collect();
        let models = Models {
            lm: &lm_params,
            sae: Some(&sae_params),
            denoiser: None,
            vocab: None,
            restart_corpus: Some(&corpus),
        };
        let init = TokenSeq::new(vec![4, 5, 6, 7, 8, 9]);
        let mut config = small_config(6, 4);
        config.restart_period = Some(3);
        let result = run_epo(&spec, &init, Variant::Plain, &models, &config, None).unwrap();
        assert_eq!(result.history.len(), 6);

        let mut config2 = config.clone();
        config2.restart_period = None;
        let plain = run_epo(&spec, &init, Variant::Plain, &models, &config2, None).unwrap();
        assert!(result.evaluated.len() > plain.evaluated.len());
    }
}
