//! SAE-activation tasks: pick live latents, measure their corpus behaviour
//! (max activation, firing density, token diversity, concentration), and
//! attach qualitative labels so results can be sliced by latent character.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, LMParams};
use crate::objective::ObjectiveSpec;
use crate::rng;
use crate::sae::{LatentId, SAEParams};
use crate::vocab::TokenSeq;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SAETaskLabels {
    pub density: Label,
    pub diversity: Label,
    pub locality: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaeKind {
    SaeMax,
    SaeMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SAETask {
    pub latent: LatentId,
    pub kind: SaeKind,
    /// Exact corpus maximum activation; > 0 for every generated task.
    pub a_star: f64,
    pub labels: SAETaskLabels,
}

impl SAETask {
    pub fn objective(&self) -> ObjectiveSpec {
        match self.kind {
            SaeKind::SaeMax => ObjectiveSpec::SaeMax { latent: self.latent },
            SaeKind::SaeMean => ObjectiveSpec::SaeMean { latent: self.latent },
        }
    }
}

/// Measured corpus statistics of one latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentStats {
    pub latent: LatentId,
    pub a_star: f64,
    /// Fraction of corpus positions with activation > 0.
    pub density: f64,
    /// Distinct vocab tokens among activating positions.
    pub distinct_tokens: usize,
    /// Share of total activation mass held by the single largest activation.
    pub concentration: f64,
}

impl LatentStats {
    pub fn dead(&self) -> bool {
        self.a_star <= 0.0
    }

    pub fn labels(&self) -> SAETaskLabels {
        let density = if self.density >= 0.15 {
            Label::High
        } else if self.density >= 0.02 {
            Label::Medium
        } else {
            Label::Low
        };
        let diversity = if self.distinct_tokens <= 2 {
            Label::Low
        } else if self.distinct_tokens <= 8 {
            Label::Medium
        } else {
            Label::High
        };
        let locality = if self.concentration >= 0.5 {
            Label::High
        } else if self.concentration >= 0.1 {
            Label::Medium
        } else {
            Label::Low
        };
        SAETaskLabels { density, diversity, locality }
    }
}

/// One corpus pass computing stats for every latent (one forward per
/// document, all latents read from the cached residual).
pub fn latent_stats(
    lm_params: &LMParams,
    sae: &SAEParams,
    corpus: &[Vec<u32>],
) -> Result<Vec<LatentStats>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if sae.layer >= lm_params.read_points() {
        return Err(Error::UnknownLatent { layer: sae.layer, index: 0 });
    }
    let m = sae.latent_count();
    let mut a_star = vec![0.0f64; m];
    let mut firing = vec![0usize; m];
    let mut mass = vec![0.0f64; m];
    let mut tokens: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); m];
    let mut positions = 0usize;
    for doc in corpus {
        let fw = lm::forward(lm_params, &TokenSeq::new(doc.clone()))?;
        let resid = &fw.residuals[sae.layer];
        positions += resid.rows;
        for i in 0..resid.rows {
            let row = resid.row(i);
            for j in 0..m {
                let a = sae.readout(sae.pre_activation(j, row));
                if a > 0.0 {
                    firing[j] += 1;
                    mass[j] += a;
                    tokens[j].insert(doc[i]);
                    if a > a_star[j] {
                        a_star[j] = a;
                    }
                }
            }
        }
    }
    Ok((0..m)
        .map(|j| LatentStats {
            latent: LatentId { layer: sae.layer, index: j },
            a_star: a_star[j],
            density: firing[j] as f64 / positions as f64,
            distinct_tokens: tokens[j].len(),
            concentration: if mass[j] > 0.0 { a_star[j] / mass[j] } else { 0.0 },
        })
        .collect())
}

pub struct SaeTaskSet {
    pub tasks: Vec<SAETask>,
    /// True when fewer live latents existed than were requested.
    pub exhausted: bool,
}

/// Samples `count` tasks over live latents (dead ones are skipped). Asking
/// for more tasks than live latents yields all of them, flagged.
pub fn gen_sae_tasks(
    lm_params: &LMParams,
    sae: &SAEParams,
    corpus: &[Vec<u32>],
    count: usize,
    seed: u64,
) -> Result<SaeTaskSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("task count must be >= 1".into()));
    }
    let stats = latent_stats(lm_params, sae, corpus)?;
    let live: Vec<&LatentStats> = stats.iter().filter(|s| !s.dead()).collect();
    if live.is_empty() {
        return Err(Error::DegenerateInput("no live latent on this corpus".into()));
    }
    let exhausted = count > live.len();
    if exhausted {
        log::warn!("requested {count} SAE tasks but only {} latents are live", live.len());
    }
    let mut rng = rng::stream(seed, "sae-tasks", 0);
    let mut picked: Vec<&LatentStats> = live.clone();
    picked.shuffle(&mut rng);
    picked.truncate(count);
    picked.sort_by_key(|s| s.latent.index);
    let tasks = picked
        .into_iter()
        .map(|s| SAETask {
            latent: s.latent,
            kind: if rng.gen_bool(0.5) { SaeKind::SaeMax } else { SaeKind::SaeMean },
            a_star: s.a_star,
            labels: s.labels(),
        })
        .collect();
    Ok(SaeTaskSet { tasks, exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{self, Mat};
    use crate::sae;
    use crate::transformer::{TransformerConfig, TransformerParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_lm(vocab: usize, seed: u64) -> LMParams {
        let cfg = TransformerConfig { vocab, d: 16, layers: 2, heads: 2, ctx: 12, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LMParams { t: TransformerParams::init(cfg, &mut rng) }
    }

    fn random_sae(d: usize, m: usize, layer: usize, seed: u64) -> SAEParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SAEParams {
            enc: Mat::randn(m, d, 0.5, &mut rng),
            enc_bias: vec![0.0; m],
            dec: Mat::randn(m, d, 1.0, &mut rng),
            dec_bias: vec![0.0; d],
            theta: 0.0,
            layer,
        }
    }

    fn small_corpus(vocab: u32, seed: u64) -> Vec<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..12)
            .map(|_| {
                (0..6).map(|_| rand::Rng::gen_range(&mut rng, 4..vocab)).collect::<Vec<u32>>()
            })
            .collect()
    }

    #[test]
    fn stats_match_per_latent_recomputation() {
        let lm_params = random_lm(9, 1);
        let sae = random_sae(16, 20, 1, 2);
        let corpus = small_corpus(9, 3);
        let stats = latent_stats(&lm_params, &sae, &corpus).unwrap();
        let positions: usize = corpus.iter().map(Vec::len).sum();
        for j in [0usize, 7, 19] {
            let latent = LatentId { layer: 1, index: j };
            let mut max = 0.0f64;
            let mut firing = 0usize;
            let mut sum = 0.0;
            let mut toks = std::collections::BTreeSet::new();
            for doc in &corpus {
                let acts =
                    sae::latent_activation(&lm_params, &sae, &TokenSeq::new(doc.clone()), latent)
                        .unwrap();
                for (i, &a) in acts.iter().enumerate() {
                    if a > 0.0 {
                        firing += 1;
                        sum += a;
                        toks.insert(doc[i]);
                        max = max.max(a);
                    }
                }
            }
            let s = &stats[j];
            assert_eq!(s.a_star, max);
            assert_eq!(s.density, firing as f64 / positions as f64);
            assert_eq!(s.distinct_tokens, toks.len());
            if sum > 0.0 {
                assert!((s.concentration - max / sum).abs() < 1e-15);
            }
        }
    }

    /// An encoder row aligned with one token's embedding (large margin, no
    /// positional leakage wins) fires on exactly that token at read point 0.
    #[test]
    fn planted_single_token_latent_gets_low_diversity() {
        let lm_params = random_lm(9, 4);
        let mut sae = random_sae(16, 20, 0, 5);
        let w = 6u32;
        let emb_w = lm_params.t.emb.row(w as usize);
        let scale = 4.0 / mat::dot(emb_w, emb_w);
        let row: Vec<f64> = emb_w.iter().map(|x| x * scale).collect();
        sae.enc.row_mut(3).copy_from_slice(&row);
        sae.enc_bias[3] = -2.0;
        let mut corpus = small_corpus(9, 6);
        corpus.push(vec![w, 4, w, 5]);
        let stats = latent_stats(&lm_params, &sae, &corpus).unwrap();
        let s = &stats[3];
        assert!(s.a_star > 0.0);
        assert_eq!(s.distinct_tokens, 1);
        assert_eq!(s.labels().diversity, Label::Low);
    }

    #[test]
    fn dead_latents_are_skipped() {
        let lm_params = random_lm(9, 7);
        let mut sae = random_sae(16, 20, 1, 8);
        sae.enc.row_mut(5).iter_mut().for_each(|x| *x = 0.0);
        sae.enc_bias[5] = -1.0;
        let corpus = small_corpus(9, 9);
        let set = gen_sae_tasks(&lm_params, &sae, &corpus, 50, 0).unwrap();
        assert!(set.exhausted);
        assert!(set.tasks.iter().all(|t| t.latent.index != 5));
        assert!(set.tasks.iter().all(|t| t.a_star > 0.0));
        let live = latent_stats(&lm_params, &sae, &corpus)
            .unwrap()
            .iter()
            .filter(|s| !s.dead())
            .count();
        assert_eq!(set.tasks.len(), live);
    }

    #[test]
    fn generation_is_deterministic_and_respects_count() {
        let lm_params = random_lm(9, 10);
        let sae = random_sae(16, 20, 1, 11);
        let corpus = small_corpus(9, 12);
        let a = gen_sae_tasks(&lm_params, &sae, &corpus, 5, 42).unwrap();
        let b = gen_sae_tasks(&lm_params, &sae, &corpus, 5, 42).unwrap();
        assert_eq!(a.tasks, b.tasks);
        assert_eq!(a.tasks.len(), 5);
        assert!(!a.exhausted);
        let c = gen_sae_tasks(&lm_params, &sae, &corpus, 5, 43).unwrap();
        assert!(c.tasks != a.tasks || c.tasks.iter().zip(&a.tasks).any(|(x, y)| x.kind != y.kind));
    }

    #[test]
    fn labels_recount_from_thresholds() {
        let cases = [
            (0.20, 1, 0.9, Label::High, Label::Low, Label::High),
            (0.05, 5, 0.2, Label::Medium, Label::Medium, Label::Medium),
            (0.001, 12, 0.01, Label::Low, Label::High, Label::Low),
        ];
        for (density, distinct, conc, d, v, l) in cases {
            let s = LatentStats {
                latent: LatentId { layer: 0, index: 0 },
                a_star: 1.0,
                density,
                distinct_tokens: distinct,
                concentration: conc,
            };
            let labels = s.labels();
            assert_eq!(labels.density, d);
            assert_eq!(labels.diversity, v);
            assert_eq!(labels.locality, l);
        }
    }

    #[test]
    fn objective_kind_round_trip() {
        let task = SAETask {
            latent: LatentId { layer: 1, index: 3 },
            kind: SaeKind::SaeMax,
            a_star: 2.0,
            labels: SAETaskLabels {
                density: Label::Low,
                diversity: Label::Low,
                locality: Label::High,
            },
        };
        assert!(matches!(task.objective(), ObjectiveSpec::SaeMax { latent } if latent.index == 3));
        let json = serde_json::to_string(&task).unwrap();
        let back: SAETask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, task);
        assert!(json.contains("sae_max"));
    }
}
