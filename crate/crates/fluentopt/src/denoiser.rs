//! Bidirectional masked-denoising micro LM: random-masking training and
//! confidence-ordered iterative unmasking for the inpainting operator.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::holdout_split;
use crate::mat::{self, Mat};
use crate::rng;
use crate::transformer::{self, AdamTrainer, TransformerConfig, TransformerParams};
use crate::vocab::{TokenSeq, MASK_ID};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ctx: usize,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Fraction of positions masked during training.
    pub mask_rate: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            vocab: 64,
            d: 32,
            layers: 2,
            heads: 4,
            ctx: 24,
            seed: 0,
            steps: 2000,
            lr: 1e-3,
            batch: 8,
            mask_rate: 0.15,
        }
    }
}

impl DenoiserConfig {
    fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            vocab: self.vocab,
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            ctx: self.ctx,
            causal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer().validate().map_err(Error::InvalidConfig)?;
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidConfig(format!(
                "mask rate {} outside [0,1]",
                self.mask_rate
            )));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("steps and batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trained bidirectional denoiser weights. Shares the Vocab with the base LM;
/// the mask token id is never emitted as a prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub t: TransformerParams,
}

impl DenoiserParams {
    pub fn vocab_size(&self) -> usize {
        self.t.cfg.vocab
    }

    pub fn mask_id(&self) -> u32 {
        MASK_ID
    }
}

fn validate_corpus(corpus: &[Vec<u32>], cfg: &TransformerConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for (index, doc) in corpus.iter().enumerate() {
        if doc.len() > cfg.ctx {
            return Err(Error::SequenceTooLong { index, len: doc.len(), max: cfg.ctx });
        }
        for &id in doc {
            if id as usize >= cfg.vocab {
                return Err(Error::TokenOutOfRange { id, vocab: cfg.vocab });
            }
            if id == MASK_ID {
                return Err(Error::DegenerateInput(format!(
                    "corpus document {index} contains the reserved mask token"
                )));
            }
        }
    }
    Ok(())
}

/// Draws the set of masked positions: each independently with `rate`, forced
/// to at least one.
fn sample_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut masked: Vec<usize> = (0..len).filter(|_| rng.gen::<f64>() < rate).collect();
    if masked.is_empty() {
        masked.push(rng.gen_range(0..len));
    }
    masked
}

/// Trains by randomly masking tokens and scoring cross-entropy on the masked
/// positions only. Deterministic given seed.
pub fn train_denoiser(corpus: &[Vec<u32>], config: &DenoiserConfig) -> Result<DenoiserParams> {
    config.validate()?;
    let cfg = config.transformer();
    validate_corpus(corpus, &cfg)?;

    let (train_idx, _) = holdout_split(corpus);
    let mut rng = rng::stream(config.seed, "denoiser-train", 0);
    let mut params = TransformerParams::init(cfg, &mut rng);
    let mut trainer = AdamTrainer::new(&mut params, config.lr);

    for _ in 0..config.steps {
        let mut grads = transformer::Grads::zeros(&params);
        for _ in 0..config.batch {
            let doc = &corpus[train_idx[rng.gen_range(0..train_idx.len())]];
            let masked = sample_mask(doc.len(), config.mask_rate, &mut rng);
            let mut input = doc.clone();
            for &p in &masked {
                input[p] = MASK_ID;
            }
            let w = 1.0 / (masked.len() as f64 * config.batch as f64);
            let targets: Vec<(usize, u32, f64)> =
                masked.iter().map(|&p| (p, doc[p], w)).collect();
            let cache = transformer::forward_ids(&params, &input);
            let mut dlogits = Mat::zeros(doc.len(), cfg.vocab);
            transformer::cross_entropy_backward(&cache.logits, &targets, &mut dlogits);
            let (g, dx0) = transformer::backward(&params, &cache, &dlogits, &[], true);
            let mut g = g.unwrap();
            transformer::accumulate_input_grads(&input, &dx0, &mut g);
            add_grads(&mut grads, &g);
        }
        trainer.apply(&mut params, &grads);
    }
    Ok(DenoiserParams { t: params })
}

fn add_grads(acc: &mut transformer::Grads, g: &transformer::Grads) {
    fn add(a: &mut [f64], b: &[f64]) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
    add(&mut acc.emb.data, &g.emb.data);
    add(&mut acc.pos.data, &g.pos.data);
    for (al, gl) in acc.layers.iter_mut().zip(g.layers.iter()) {
        add(&mut al.ln1_g, &gl.ln1_g);
        add(&mut al.ln1_b, &gl.ln1_b);
        add(&mut al.wq.data, &gl.wq.data);
        add(&mut al.wk.data, &gl.wk.data);
        add(&mut al.wv.data, &gl.wv.data);
        add(&mut al.wo.data, &gl.wo.data);
        add(&mut al.ln2_g, &gl.ln2_g);
        add(&mut al.ln2_b, &gl.ln2_b);
        add(&mut al.w1.data, &gl.w1.data);
        add(&mut al.b1, &gl.b1);
        add(&mut al.w2.data, &gl.w2.data);
        add(&mut al.b2, &gl.b2);
    }
    add(&mut acc.lnf_g, &g.lnf_g);
    add(&mut acc.lnf_b, &g.lnf_b);
    add(&mut acc.unemb.data, &g.unemb.data);
}

/// Log-probabilities at one position with the mask token excluded from the
/// support.
fn masked_log_probs(logits_row: &[f64]) -> Vec<f64> {
    let mut row = logits_row.to_vec();
    row[MASK_ID as usize] = f64::NEG_INFINITY;
    let lse = mat::log_sum_exp(&row);
    row.iter().map(|&z| z - lse).collect()
}

/// Held-out masked-token cross-entropy at the given masking rate (nats per
/// masked token; mask excluded from the prediction support).
pub fn masked_holdout_ce(
    params: &DenoiserParams,
    corpus: &[Vec<u32>],
    rate: f64,
    seed: u64,
) -> Result<f64> {
    let cfg = &params.t.cfg;
    validate_corpus(corpus, cfg)?;
    let (_, held) = holdout_split(corpus);
    let mut rng = rng::stream(seed, "denoiser-eval", 0);
    let mut mean = 0.0;
    let mut count = 0usize;
    for &i in &held {
        let doc = &corpus[i];
        let masked = sample_mask(doc.len(), rate, &mut rng);
        let mut input = doc.clone();
        for &p in &masked {
            input[p] = MASK_ID;
        }
        let cache = transformer::forward_ids(&params.t, &input);
        for &p in &masked {
            let logp = masked_log_probs(cache.logits.row(p));
            count += 1;
            mean += (-logp[doc[p] as usize] - mean) / count as f64;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("no held-out masked token".into()));
    }
    Ok(mean)
}

/// Iterative unmasking: all unfrozen positions start masked; over `steps`
/// rounds the highest-confidence predictions are committed (argmax fill, mask
/// token excluded) until none remain. Frozen positions are preserved exactly.
/// The seed only disambiguates confidence ties.
pub fn inpaint(params: &DenoiserParams, seq: &TokenSeq, steps: usize, seed: u64) -> Result<TokenSeq> {
    if steps == 0 {
        return Err(Error::InvalidConfig("inpaint needs steps >= 1".into()));
    }
    seq.validate(params.vocab_size())?;
    if seq.len() > params.t.cfg.ctx {
        return Err(Error::ContextOverflow { len: seq.len(), ctx: params.t.cfg.ctx });
    }
    let mut ids = seq.ids.clone();
    let mut open: Vec<usize> = seq.unfrozen_positions();
    if open.is_empty() {
        return Ok(seq.clone());
    }
    for &p in &open {
        ids[p] = MASK_ID;
    }
    let mut rng = rng::stream(seed, "inpaint", 0);
    let mut rounds_left = steps;
    while !open.is_empty() {
        let cache = transformer::forward_ids(&params.t, &ids);
        // Equal-confidence positions are ordered by the seeded shuffle; the
        // sort below is stable, so everything else is order-independent.
        open.shuffle(&mut rng);
        let mut scored: Vec<(f64, usize, u32)> = open
            .iter()
            .map(|&p| {
                let logp = masked_log_probs(cache.logits.row(p));
                let mut best = 0usize;
                for (w, &v) in logp.iter().enumerate().skip(1) {
                    if v > logp[best] {
                        best = w;
                    }
                }
                (logp[best], p, best as u32)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let commit = open.len().div_ceil(rounds_left.max(1));
        for &(_, p, tok) in scored.iter().take(commit) {
            debug_assert_eq!(ids[p], MASK_ID);
            ids[p] = tok;
            open.retain(|&q| q != p);
        }
        rounds_left = rounds_left.saturating_sub(1);
    }
    debug_assert!(ids.iter().all(|&id| id != MASK_ID) || seq.ids.contains(&MASK_ID));
    TokenSeq::with_frozen(ids, seq.frozen.clone())
}
