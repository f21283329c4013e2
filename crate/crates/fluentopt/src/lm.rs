//! Causal micro language model: training, forward passes, sequence
//! cross-entropy, and exact gradients with respect to relaxed one-hot inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::rng;
use crate::transformer::{
    self, AdamTrainer, ForwardCache, TransformerConfig, TransformerParams,
};
use crate::vocab::TokenSeq;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LMConfig {
    pub vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ctx: usize,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            vocab: 64,
            d: 32,
            layers: 2,
            heads: 4,
            ctx: 24,
            seed: 0,
            steps: 2000,
            lr: 1e-3,
            batch: 8,
        }
    }
}

impl LMConfig {
    fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            vocab: self.vocab,
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            ctx: self.ctx,
            causal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer().validate().map_err(Error::InvalidConfig)?;
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("steps and batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trained causal LM weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMParams {
    pub t: TransformerParams,
}

impl LMParams {
    pub fn vocab_size(&self) -> usize {
        self.t.cfg.vocab
    }

    pub fn ctx_len(&self) -> usize {
        self.t.cfg.ctx
    }

    /// Residual-stream read points: 0 (embeddings) through layer count.
    pub fn read_points(&self) -> usize {
        self.t.cfg.layers + 1
    }
}

/// Logits plus the residual stream at every read point.
pub struct ForwardOutput {
    pub logits: Mat,
    pub residuals: Vec<Mat>,
}

fn check_seq(cfg: &TransformerConfig, ids: &[u32]) -> Result<()> {
    for &id in ids {
        if id as usize >= cfg.vocab {
            return Err(Error::TokenOutOfRange { id, vocab: cfg.vocab });
        }
    }
    if ids.len() > cfg.ctx {
        return Err(Error::ContextOverflow { len: ids.len(), ctx: cfg.ctx });
    }
    Ok(())
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
        }
    }
    Ok(())
}

/// Deterministic 90/10 train/held-out split by index. Small datasets (< 10
/// items) are used for both sides.
pub fn holdout_split_samples(count: usize) -> (Vec<usize>, Vec<usize>) {
    if count < 10 {
        let all: Vec<usize> = (0..count).collect();
        return (all.clone(), all);
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for i in 0..count {
        if i % 10 == 9 {
            held.push(i);
        } else {
            train.push(i);
        }
    }
    (train, held)
}

pub fn holdout_split(corpus: &[Vec<u32>]) -> (Vec<usize>, Vec<usize>) {
    holdout_split_samples(corpus.len())
}

/// Trains the causal LM with Adam on next-token cross-entropy. Deterministic
/// given seed.
pub fn train_lm(corpus: &[Vec<u32>], config: &LMConfig) -> Result<LMParams> {
    config.validate()?;
    let cfg = config.transformer();
    validate_corpus(corpus, &cfg)?;
    let usable: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::DegenerateInput("no corpus document has >= 2 tokens".into()));
    }
    let (train_idx, _) = holdout_split(corpus);
    let train_idx: Vec<usize> =
        train_idx.into_iter().filter(|&i| corpus[i].len() >= 2).collect();
    let train_idx = if train_idx.is_empty() { usable } else { train_idx };

    let mut rng = rng::stream(config.seed, "lm-train", 0);
    let mut params = TransformerParams::init(cfg, &mut rng);
    let mut trainer = AdamTrainer::new(&mut params, config.lr);

    for _ in 0..config.steps {
        let mut grads = transformer::Grads::zeros(&params);
        for _ in 0..config.batch {
            let doc = &corpus[train_idx[rng.gen_range(0..train_idx.len())]];
            let cache = transformer::forward_ids(&params, doc);
            let w = 1.0 / ((doc.len() - 1) as f64 * config.batch as f64);
            let targets: Vec<(usize, u32, f64)> =
                (1..doc.len()).map(|i| (i - 1, doc[i], w)).collect();
            let mut dlogits = Mat::zeros(doc.len(), cfg.vocab);
            transformer::cross_entropy_backward(&cache.logits, &targets, &mut dlogits);
            let (g, dx0) = transformer::backward(&params, &cache, &dlogits, &[], true);
            let mut g = g.unwrap();
            transformer::accumulate_input_grads(doc, &dx0, &mut g);
            add_grads(&mut grads, &g);
        }
        trainer.apply(&mut params, &grads);
    }
    Ok(LMParams { t: params })
}

pub(crate) fn add_grads(acc: &mut transformer::Grads, g: &transformer::Grads) {
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

/// Mean sequence cross-entropy over the held-out split (docs with >= 2
/// tokens).
pub fn holdout_cross_entropy(params: &LMParams, corpus: &[Vec<u32>]) -> Result<f64> {
    let (_, held) = holdout_split(corpus);
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in &held {
        if corpus[i].len() < 2 {
            continue;
        }
        sum += sequence_cross_entropy(params, &TokenSeq::new(corpus[i].clone()))?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateInput("no held-out document has >= 2 tokens".into()));
    }
    Ok(sum / count as f64)
}

/// Full forward pass; exposes logits and every residual read point.
pub fn forward(params: &LMParams, seq: &TokenSeq) -> Result<ForwardOutput> {
    let cache = forward_cache(params, seq)?;
    let residuals = (0..cache.num_read_points()).map(|k| cache.residual(k).clone()).collect();
    Ok(ForwardOutput { logits: cache.logits, residuals })
}

/// Forward pass keeping the internal cache (shared by objective evaluation so
/// f and CE come from one pass).
pub fn forward_cache(params: &LMParams, seq: &TokenSeq) -> Result<ForwardCache> {
    check_seq(&params.t.cfg, &seq.ids)?;
    Ok(transformer::forward_ids(&params.t, &seq.ids))
}

/// Mean next-token cross-entropy in nats, -(1/(n-1)) sum log p(t_i | t_<i).
/// Computed as a running (Welford) mean, so a model with identical per-token
/// losses returns that value bit-exactly.
pub fn sequence_cross_entropy(params: &LMParams, seq: &TokenSeq) -> Result<f64> {
    let cache = forward_cache(params, seq)?;
    ce_from_cache(&cache, &seq.ids)
}

pub fn ce_from_cache(cache: &ForwardCache, ids: &[u32]) -> Result<f64> {
    let n = ids.len();
    if n < 2 {
        return Err(Error::DegenerateInput("cross-entropy needs >= 2 tokens".into()));
    }
    let mut mean = 0.0;
    for i in 1..n {
        let row = cache.logits.row(i - 1);
        let term = mat::log_sum_exp(row) - row[ids[i] as usize];
        mean += (term - mean) / i as f64;
    }
    Ok(mean)
}

// ---------------------------------------------------------------------------
// Gradients with respect to relaxed one-hot inputs
// ---------------------------------------------------------------------------

/// Gradient seeds produced by a differentiable loss functional evaluated on
/// forward outputs at a relaxed input X.
pub struct LossParts {
    pub value: f64,
    /// n x V gradient at the logits.
    pub dlogits: Mat,
    /// Per read point, optional n x d gradient at the residual stream.
    pub dresiduals: Vec<Option<Mat>>,
    /// Direct dependence of the loss on X itself (n x V), if any.
    pub dx_direct: Option<Mat>,
}

/// A differentiable scalar functional of forward outputs (and possibly of the
/// relaxed input X directly). Implementations must be exact gradients of
/// `value` for the finite-difference contracts to hold.
pub trait GradientLoss: Sync {
    fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts>;
}

/// Sequence cross-entropy as a relaxed functional:
/// CE(X) = -(1/(n-1)) sum_i sum_v X[i,v] log softmax(logits_{i-1})[v].
/// At one-hot X this equals sequence_cross_entropy; the gradient carries both
/// the logits path and the direct label term.
pub struct CeLoss;

impl GradientLoss for CeLoss {
    fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts> {
        let n = cache.seq_len();
        let v = x.cols;
        if n < 2 {
            return Err(Error::DegenerateInput("cross-entropy needs >= 2 tokens".into()));
        }
        let coef = 1.0 / (n - 1) as f64;
        let mut dlogits = Mat::zeros(n, v);
        let mut dx = Mat::zeros(n, v);
        let mut value = 0.0;
        for j in 0..n - 1 {
            let row = cache.logits.row(j);
            let lse = mat::log_sum_exp(row);
            let xrow = x.row(j + 1);
            let xsum: f64 = xrow.iter().sum();
            let drow = dlogits.row_mut(j);
            let dxrow = dx.row_mut(j + 1);
            for w in 0..v {
                let logp = row[w] - lse;
                value -= coef * xrow[w] * logp;
                drow[w] = coef * (logp.exp() * xsum - xrow[w]);
                dxrow[w] = -coef * logp;
            }
        }
        Ok(LossParts { value, dlogits, dresiduals: Vec::new(), dx_direct: Some(dx) })
    }
}

/// Weighted sum of loss functionals sharing one forward pass.
pub struct SumLoss<'a> {
    pub terms: Vec<(&'a dyn GradientLoss, f64)>,
}

impl GradientLoss for SumLoss<'_> {
    fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts> {
        let n = cache.seq_len();
        let mut out = LossParts {
            value: 0.0,
            dlogits: Mat::zeros(n, x.cols),
            dresiduals: Vec::new(),
            dx_direct: None,
        };
        for (loss, coef) in &self.terms {
            if *coef == 0.0 {
                continue;
            }
            let p = loss.parts(cache, x)?;
            out.value += coef * p.value;
            mat::axpy(*coef, &p.dlogits.data, &mut out.dlogits.data);
            for (k, seed) in p.dresiduals.into_iter().enumerate() {
                let Some(seed) = seed else { continue };
                if out.dresiduals.len() <= k {
                    out.dresiduals.resize_with(k + 1, || None);
                }
                match &mut out.dresiduals[k] {
                    Some(acc) => mat::axpy(*coef, &seed.data, &mut acc.data),
                    slot => {
                        let mut scaled = seed;
                        scaled.data.iter_mut().for_each(|s| *s *= coef);
                        *slot = Some(scaled);
                    }
                }
            }
            if let Some(dx) = p.dx_direct {
                match &mut out.dx_direct {
                    Some(acc) => mat::axpy(*coef, &dx.data, &mut acc.data),
                    slot => {
                        let mut scaled = dx;
                        scaled.data.iter_mut().for_each(|s| *s *= coef);
                        *slot = Some(scaled);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradient of `loss` with respect to the relaxed one-hot input matrix X
/// (n x V; seq = argmax rows). The predicted first-order delta for swapping
/// position i to token v is G[i,v] - G[i,t_i].
pub fn input_gradient(
    params: &LMParams,
    seq: &TokenSeq,
    loss: &dyn GradientLoss,
) -> Result<Mat> {
    check_seq(&params.t.cfg, &seq.ids)?;
    let x = transformer::one_hot(&seq.ids, params.vocab_size());
    let cache = transformer::forward_relaxed(&params.t, &x);
    let parts = loss.parts(&cache, &x)?;
    let (_, dx0) = transformer::backward(&params.t, &cache, &parts.dlogits, &parts.dresiduals, false);
    let mut g = dx0.matmul_transpose(&params.t.emb);
    if let Some(dx) = parts.dx_direct {
        for (gi, di) in g.data.iter_mut().zip(dx.data.iter()) {
            *gi += di;
        }
    }
    Ok(g)
}

/// Loss value of a relaxed functional at an arbitrary relaxed input
/// (finite-difference oracle entry point).
pub fn relaxed_loss_value(params: &LMParams, x: &Mat, loss: &dyn GradientLoss) -> Result<f64> {
    let cache = transformer::forward_relaxed(&params.t, x);
    Ok(loss.parts(&cache, x)?.value)
}

// ---------------------------------------------------------------------------
// Greedy decoding helpers
// ---------------------------------------------------------------------------

fn argmax_lowest(row: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Appends `count` greedy argmax continuations (ties break to the lowest id).
pub fn greedy_extend(params: &LMParams, ids: &[u32], count: usize) -> Result<Vec<u32>> {
    let mut out = ids.to_vec();
    if out.is_empty() {
        return Err(Error::DegenerateInput("cannot extend an empty sequence".into()));
    }
    for _ in 0..count {
        check_seq(&params.t.cfg, &out)?;
        let cache = transformer::forward_ids(&params.t, &out);
        let next = argmax_lowest(cache.logits.row(out.len() - 1));
        out.push(next);
    }
    check_seq(&params.t.cfg, &out)?;
    Ok(out)
}

/// Prepends `count` tokens, each chosen to maximize p(current first token |
/// candidate) under the model (local greedy, ties to the lowest id).
pub fn greedy_prepend(params: &LMParams, ids: &[u32], count: usize) -> Result<Vec<u32>> {
    let mut out = ids.to_vec();
    if out.is_empty() {
        return Err(Error::DegenerateInput("cannot extend an empty sequence".into()));
    }
    let vocab = params.vocab_size();
    for _ in 0..count {
        let first = out[0] as usize;
        let mut best_v = 0u32;
        let mut best_score = f64::NEG_INFINITY;
        for v in 0..vocab as u32 {
            let cache = transformer::forward_ids(&params.t, &[v]);
            let row = cache.logits.row(0);
            let score = row[first] - mat::log_sum_exp(row);
            if score > best_score {
                best_score = score;
                best_v = v;
            }
        }
        out.insert(0, best_v);
        check_seq(&params.t.cfg, &out)?;
    }
    Ok(out)
}

/// Log-probabilities of the next token after `prefix`.
pub fn next_token_log_probs(params: &LMParams, prefix: &[u32]) -> Result<Vec<f64>> {
    if prefix.is_empty() {
        return Err(Error::DegenerateInput("empty prefix".into()));
    }
    check_seq(&params.t.cfg, prefix)?;
    let cache = transformer::forward_ids(&params.t, prefix);
    let row = cache.logits.row(prefix.len() - 1);
    let lse = mat::log_sum_exp(row);
    Ok(row.iter().map(|&z| z - lse).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(vocab: usize) -> LMConfig {
        LMConfig {
            vocab,
            d: 16,
            layers: 1,
            heads: 2,
            ctx: 12,
            seed: 5,
            steps: 250,
            lr: 5e-3,
            batch: 4,
        }
    }

    fn random_params(vocab: usize, seed: u64) -> LMParams {
        let cfg = TransformerConfig { vocab, d: 16, layers: 2, heads: 2, ctx: 12, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LMParams { t: TransformerParams::init(cfg, &mut rng) }
    }

    #[test]
    fn constant_corpus_trains_to_near_zero_ce() {
        let corpus: Vec<Vec<u32>> = (0..20).map(|_| vec![4u32; 5]).collect();
        let params = train_lm(&corpus, &small_config(6)).unwrap();
        let ce =
            sequence_cross_entropy(&params, &TokenSeq::new(vec![4, 4, 4, 4])).unwrap();
        assert!(ce < 0.1, "ce = {ce}");
    }

    #[test]
    fn uniform_corpus_stays_near_ln_v() {
        // Plenty of documents relative to the step budget: the model sees
        // each noise document at most a couple of times and cannot memorize.
        let vocab = 16usize;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let corpus: Vec<Vec<u32>> = (0..400)
            .map(|_| (0..8).map(|_| rng.gen_range(0..vocab as u32)).collect())
            .collect();
        let mut cfg = small_config(vocab);
        cfg.steps = 150;
        let params = train_lm(&corpus, &cfg).unwrap();
        let ce = holdout_cross_entropy(&params, &corpus).unwrap();
        let lnv = (vocab as f64).ln();
        assert!((ce - lnv).abs() / lnv < 0.05, "ce = {ce}, ln V = {lnv}");
    }

    #[test]
    fn training_is_deterministic() {
        let corpus: Vec<Vec<u32>> = (0..12).map(|i| vec![4, 5, (i % 2) + 4, 5]).collect();
        let mut cfg = small_config(8);
        cfg.steps = 30;
        let a = train_lm(&corpus, &cfg).unwrap();
        let b = train_lm(&corpus, &cfg).unwrap();
        assert_eq!(a.t, b.t);
    }

    #[test]
    fn oversized_document_rejected_with_index() {
        let corpus = vec![vec![4u32; 5], vec![4u32; 40]];
        let err = train_lm(&corpus, &small_config(6)).unwrap_err();
        match err {
            Error::SequenceTooLong { index, len, max } => {
                assert_eq!((index, len, max), (1, 40, 12));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ce_matches_brute_force_oracle() {
        let params = random_params(9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(2..=8);
            let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..9)).collect();
            let seq = TokenSeq::new(ids.clone());
            let ce = sequence_cross_entropy(&params, &seq).unwrap();

            // Brute force: explicitly normalized softmax rows, plain sum.
            let out = forward(&params, &seq).unwrap();
            let mut total = 0.0;
            for i in 1..n {
                let row = out.logits.row(i - 1);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                let p = (out.logits.get(i - 1, ids[i] as usize) - m).exp() / z;
                total -= p.ln();
            }
            let oracle = total / (n - 1) as f64;
            assert!((ce - oracle).abs() < 1e-10, "{ce} vs {oracle}");
        }
    }

    #[test]
    fn uniform_model_returns_ln_v_exactly() {
        let mut params = random_params(9, 4);
        params.t.unemb.fill(0.0);
        let lnv = 9f64.ln();
        for n in 2..=8 {
            let ids: Vec<u32> = (0..n).map(|i| (i % 9) as u32).collect();
            let ce = sequence_cross_entropy(&params, &TokenSeq::new(ids)).unwrap();
            assert_eq!(ce, lnv, "n = {n}");
        }
    }

    #[test]
    fn perfect_predictor_returns_zero() {
        // One-layer map with huge unembedding logit margins behaves as an
        // effectively deterministic predictor; CE must vanish numerically.
        // Route a constant feature through the final LN bias and give token 4
        // a huge logit margin everywhere; the model then predicts 4 with
        // probability numerically 1.
        let mut params = random_params(6, 5);
        params.t.unemb.fill(0.0);
        params.t.lnf_g = vec![0.0; 16];
        params.t.lnf_b = vec![0.0; 16];
        params.t.lnf_b[0] = 1.0;
        for w in 0..6 {
            params.t.unemb.set(0, w, if w == 4 { 60.0 } else { -60.0 });
        }
        let ce = sequence_cross_entropy(&params, &TokenSeq::new(vec![4, 4, 4])).unwrap();
        assert!(ce < 1e-10, "ce = {ce}");
    }

    #[test]
    fn ce_loss_value_matches_sequence_cross_entropy() {
        let params = random_params(9, 6);
        let ids = vec![4u32, 7, 2, 8, 1];
        let seq = TokenSeq::new(ids.clone());
        let ce = sequence_cross_entropy(&params, &seq).unwrap();
        let x = transformer::one_hot(&ids, 9);
        let value = relaxed_loss_value(&params, &x, &CeLoss).unwrap();
        assert!((ce - value).abs() < 1e-12);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let params = random_params(9, 7);
        let ids = vec![4u32, 7, 2, 8];
        let seq = TokenSeq::new(ids.clone());
        let g = input_gradient(&params, &seq, &CeLoss).unwrap();
        let x = transformer::one_hot(&ids, 9);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..25 {
            let i = rng.gen_range(0..ids.len());
            let w = rng.gen_range(0..9);
            let mut xp = x.clone();
            xp.add_at(i, w, h);
            let mut xm = x.clone();
            xm.add_at(i, w, -h);
            let fd = (relaxed_loss_value(&params, &xp, &CeLoss).unwrap()
                - relaxed_loss_value(&params, &xm, &CeLoss).unwrap())
                / (2.0 * h);
            let an = g.get(i, w);
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / denom < 1e-4, "({i},{w}): fd {fd} vs {an}");
        }
    }

    #[test]
    fn swap_delta_prediction_close_on_full_model() {
        // Directional finite difference along (e_v - e_{t_i}) with step 1e-4
        // matches G[i,v] - G[i,t_i] with relative error < 1e-2.
        let params = random_params(9, 8);
        let ids = vec![4u32, 7, 2, 8, 5];
        let seq = TokenSeq::new(ids.clone());
        let g = input_gradient(&params, &seq, &CeLoss).unwrap();
        let x = transformer::one_hot(&ids, 9);
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..40 {
            let i = rng.gen_range(0..ids.len());
            let w = rng.gen_range(0..9u32);
            if w == ids[i] {
                continue;
            }
            let mut xp = x.clone();
            xp.add_at(i, w as usize, h);
            xp.add_at(i, ids[i] as usize, -h);
            let mut xm = x.clone();
            xm.add_at(i, w as usize, -h);
            xm.add_at(i, ids[i] as usize, h);
            let fd = (relaxed_loss_value(&params, &xp, &CeLoss).unwrap()
                - relaxed_loss_value(&params, &xm, &CeLoss).unwrap())
                / (2.0 * h);
            let an = g.get(i, w as usize) - g.get(i, ids[i] as usize);
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!((fd - an).abs() / denom < 1e-2, "({i},{w}): fd {fd} vs {an}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    /// A loss reading only logits row 0 has zero gradient at later positions
    /// (dead inputs under causality).
    #[test]
    fn dead_input_rows_have_zero_gradient() {
        struct Row0Sum;
        impl GradientLoss for Row0Sum {
            fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts> {
                let mut dlogits = Mat::zeros(cache.seq_len(), x.cols);
                dlogits.row_mut(0).iter_mut().for_each(|d| *d = 1.0);
                let value = cache.logits.row(0).iter().sum();
                Ok(LossParts { value, dlogits, dresiduals: Vec::new(), dx_direct: None })
            }
        }
        let params = random_params(9, 9);
        let seq = TokenSeq::new(vec![4, 7, 2, 8]);
        let g = input_gradient(&params, &seq, &Row0Sum).unwrap();
        for i in 1..4 {
            for w in 0..9 {
                assert!(g.get(i, w).abs() <= 1e-8, "g[{i},{w}] = {}", g.get(i, w));
            }
        }
        assert!(g.row(0).iter().any(|&v| v.abs() > 1e-8));
    }

    /// Linear surrogate: a loss linear in the embedded input makes the
    /// first-order swap prediction exact.
    #[test]
    fn linear_surrogate_swap_prediction_is_exact() {
        struct BagOfEmbeddings;
        impl GradientLoss for BagOfEmbeddings {
            fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts> {
                let n = cache.seq_len();
                let d = cache.residual(0).cols;
                let value: f64 = cache.residual(0).data.iter().sum();
                let mut seed = Mat::zeros(n, d);
                seed.fill(1.0);
                Ok(LossParts {
                    value,
                    dlogits: Mat::zeros(n, x.cols),
                    dresiduals: vec![Some(seed)],
                    dx_direct: None,
                })
            }
        }
        let params = random_params(9, 10);
        let ids = vec![4u32, 7, 2];
        let seq = TokenSeq::new(ids.clone());
        let g = input_gradient(&params, &seq, &BagOfEmbeddings).unwrap();
        let base = {
            let x = transformer::one_hot(&ids, 9);
            relaxed_loss_value(&params, &x, &BagOfEmbeddings).unwrap()
        };
        for i in 0..ids.len() {
            for v in 0..9u32 {
                let mut swapped = ids.clone();
                swapped[i] = v;
                let x = transformer::one_hot(&swapped, 9);
                let exact = relaxed_loss_value(&params, &x, &BagOfEmbeddings).unwrap() - base;
                let predicted = g.get(i, v as usize) - g.get(i, ids[i] as usize);
                assert!(
                    (exact - predicted).abs() < 1e-8,
                    "({i},{v}): exact {exact} vs predicted {predicted}"
                );
            }
        }
    }

    #[test]
    fn greedy_extend_follows_trained_pattern() {
        let corpus: Vec<Vec<u32>> = (0..20).map(|_| vec![4, 5, 4, 5, 4, 5]).collect();
        let mut cfg = small_config(6);
        cfg.steps = 400;
        let params = train_lm(&corpus, &cfg).unwrap();
        let out = greedy_extend(&params, &[4, 5], 3).unwrap();
        assert_eq!(out, vec![4, 5, 4, 5, 4]);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let params = random_params(9, 11);
        let seq = TokenSeq::new(vec![4, 12]);
        assert!(matches!(
            forward(&params, &seq),
            Err(Error::TokenOutOfRange { id: 12, vocab: 9 })
        ));
    }
}
