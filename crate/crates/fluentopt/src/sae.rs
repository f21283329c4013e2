//! Sparse autoencoder over residual-stream activations: ReLU + L1 training
//! with unit-norm decoder directions, thresholded (JumpReLU-style) readout,
//! and corpus-max normalization of activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, LMParams};
use crate::mat::{self, AdamState, Mat};
use crate::rng;
use crate::vocab::TokenSeq;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SAEConfig {
    /// Input width (residual stream dimension).
    pub d: usize,
    /// Latent count, overcomplete (m > d).
    pub m: usize,
    /// L1 penalty weight on latent activations.
    pub sparsity: f64,
    /// Readout threshold theta >= 0; activation = z * H(z - theta).
    pub theta: f64,
    /// Residual read point the SAE attaches to.
    pub layer: usize,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for SAEConfig {
    fn default() -> Self {
        SAEConfig {
            d: 32,
            m: 64,
            sparsity: 0.05,
            theta: 0.0,
            layer: 1,
            seed: 0,
            steps: 4000,
            lr: 1e-3,
            batch: 32,
        }
    }
}

impl SAEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m <= self.d {
            return Err(Error::InvalidConfig(format!(
                "latent count {} must exceed input width {}",
                self.m, self.d
            )));
        }
        if self.theta < 0.0 || !self.theta.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold {} must be >= 0", self.theta)));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("steps and batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trained SAE weights. Encoder and decoder both store one row per latent;
/// decoder rows are unit-norm after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SAEParams {
    pub enc: Mat,
    pub enc_bias: Vec<f64>,
    pub dec: Mat,
    pub dec_bias: Vec<f64>,
    pub theta: f64,
    pub layer: usize,
}

impl SAEParams {
    pub fn latent_count(&self) -> usize {
        self.enc.rows
    }

    pub fn input_width(&self) -> usize {
        self.enc.cols
    }

    /// Raw encoder pre-activation of one latent at one input vector.
    pub fn pre_activation(&self, latent: usize, a: &[f64]) -> f64 {
        mat::dot(self.enc.row(latent), a) + self.enc_bias[latent]
    }

    /// Thresholded readout: z * H(z - theta).
    pub fn readout(&self, z: f64) -> f64 {
        if z > self.theta {
            z
        } else {
            0.0
        }
    }
}

/// One SAE latent addressed by residual read point and latent index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentId {
    pub layer: usize,
    pub index: usize,
}

pub(crate) fn check_latent(sae: &SAEParams, latent: LatentId) -> Result<()> {
    if latent.layer != sae.layer || latent.index >= sae.latent_count() {
        return Err(Error::UnknownLatent { layer: latent.layer, index: latent.index });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn normalize_dec_rows(dec: &mut Mat) {
    for i in 0..dec.rows {
        let row = dec.row_mut(i);
        let norm = mat::dot(row, row).sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Trains the SAE with Adam on reconstruction + L1 sparsity. Decoder rows are
/// renormalized to unit length after every step. Deterministic given seed.
pub fn train_sae(activations: &[Vec<f64>], config: &SAEConfig) -> Result<SAEParams> {
    config.validate()?;
    let need = 10 * config.m;
    if activations.len() < need {
        return Err(Error::InsufficientSamples { have: activations.len(), need });
    }
    let d = config.d;
    for (i, a) in activations.iter().enumerate() {
        if a.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: activations[i].len() });
        }
    }
    let energy: f64 = activations.iter().map(|a| mat::dot(a, a)).sum();
    if energy == 0.0 {
        return Err(Error::DegenerateInput("all-zero activation dataset".into()));
    }

    let m = config.m;
    let mut rng = rng::stream(config.seed, "sae-train", 0);
    let mut dec = Mat::randn(m, d, 1.0, &mut rng);
    normalize_dec_rows(&mut dec);
    let mut enc = dec.clone();
    let mut enc_bias = vec![0.0; m];
    let mut dec_bias = {
        let mut mean = vec![0.0; d];
        for a in activations {
            mat::axpy(1.0 / activations.len() as f64, a, &mut mean);
        }
        mean
    };

    let mut st_enc = AdamState::new(m * d);
    let mut st_enc_b = AdamState::new(m);
    let mut st_dec = AdamState::new(m * d);
    let mut st_dec_b = AdamState::new(d);

    let (train_idx, _) = lm::holdout_split_samples(activations.len());
    for step in 1..=config.steps {
        let mut g_enc = Mat::zeros(m, d);
        let mut g_enc_b = vec![0.0; m];
        let mut g_dec = Mat::zeros(m, d);
        let mut g_dec_b = vec![0.0; d];
        let w = 1.0 / config.batch as f64;
        for _ in 0..config.batch {
            let a = &activations[train_idx[rng.gen_range(0..train_idx.len())]];
            // z = relu(enc a + b_e); ahat = dec^T z + b_d
            let mut z = vec![0.0; m];
            for j in 0..m {
                z[j] = relu(mat::dot(enc.row(j), a) + enc_bias[j]);
            }
            let mut ahat = dec_bias.clone();
            for j in 0..m {
                if z[j] != 0.0 {
                    mat::axpy(z[j], dec.row(j), &mut ahat);
                }
            }
            // loss = ||a - ahat||^2 + sparsity * sum z
            let e: Vec<f64> = ahat.iter().zip(a.iter()).map(|(h, x)| 2.0 * (h - x)).collect();
            mat::axpy(w, &e, &mut g_dec_b);
            for j in 0..m {
                if z[j] == 0.0 {
                    continue;
                }
                mat::axpy(w * z[j], &e, g_dec.row_mut(j));
                let dz = mat::dot(dec.row(j), &e) + config.sparsity;
                g_enc_b[j] += w * dz;
                mat::axpy(w * dz, a, g_enc.row_mut(j));
            }
        }
        st_enc.update(&mut enc.data, &g_enc.data, config.lr, step);
        st_enc_b.update(&mut enc_bias, &g_enc_b, config.lr, step);
        st_dec.update(&mut dec.data, &g_dec.data, config.lr, step);
        st_dec_b.update(&mut dec_bias, &g_dec_b, config.lr, step);
        normalize_dec_rows(&mut dec);
    }

    Ok(SAEParams { enc, enc_bias, dec, dec_bias, theta: config.theta, layer: config.layer })
}

/// Held-out reconstruction relative error and mean active-latent fraction.
pub fn sae_metrics(params: &SAEParams, activations: &[Vec<f64>]) -> (f64, f64) {
    let (_, held) = lm::holdout_split_samples(activations.len());
    let m = params.latent_count();
    let mut rel = 0.0;
    let mut frac = 0.0;
    let mut count = 0usize;
    for &i in &held {
        let a = &activations[i];
        let mut z = vec![0.0; m];
        let mut active = 0usize;
        for j in 0..m {
            z[j] = relu(params.pre_activation(j, a));
            if z[j] > 0.0 {
                active += 1;
            }
        }
        let mut ahat = params.dec_bias.clone();
        for j in 0..m {
            if z[j] != 0.0 {
                mat::axpy(z[j], params.dec.row(j), &mut ahat);
            }
        }
        let err: f64 =
            ahat.iter().zip(a.iter()).map(|(h, x)| (h - x) * (h - x)).sum::<f64>().sqrt();
        let norm = mat::dot(a, a).sqrt();
        if norm > 0.0 {
            rel += err / norm;
            frac += active as f64 / m as f64;
            count += 1;
        }
    }
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    (rel / count as f64, frac / count as f64)
}

/// Residual-stream activation vectors of every corpus position at one read
/// point (SAE training data).
pub fn collect_activations(
    lm_params: &LMParams,
    corpus: &[Vec<u32>],
    layer: usize,
) -> Result<Vec<Vec<f64>>> {
    if layer >= lm_params.read_points() {
        return Err(Error::InvalidConfig(format!(
            "read point {layer} out of range ({} available)",
            lm_params.read_points()
        )));
    }
    let mut out = Vec::new();
    for doc in corpus {
        let fw = lm::forward(lm_params, &TokenSeq::new(doc.clone()))?;
        let resid = &fw.residuals[layer];
        for i in 0..resid.rows {
            out.push(resid.row(i).to_vec());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Readout
// ---------------------------------------------------------------------------

/// Per-position thresholded activation of one latent on a sequence.
pub fn latent_activation(
    lm_params: &LMParams,
    sae: &SAEParams,
    seq: &TokenSeq,
    latent: LatentId,
) -> Result<Vec<f64>> {
    check_latent(sae, latent)?;
    if sae.layer >= lm_params.read_points() {
        return Err(Error::UnknownLatent { layer: sae.layer, index: latent.index });
    }
    let fw = lm::forward(lm_params, seq)?;
    let resid = &fw.residuals[sae.layer];
    Ok((0..resid.rows)
        .map(|i| sae.readout(sae.pre_activation(latent.index, resid.row(i))))
        .collect())
}

#[derive(Clone, Debug)]
pub struct CorpusMax {
    /// Exact maximum per-token activation over all corpus positions.
    pub a_star: f64,
    /// (document index, document max activation), sorted descending by
    /// activation, ties toward the lower index.
    pub exemplars: Vec<(usize, f64)>,
    /// True when the latent never activates on the corpus (a_star = 0).
    pub dead: bool,
}

/// Scans the corpus for the maximum activation of a latent and the top-k
/// exemplar documents.
pub fn corpus_max(
    lm_params: &LMParams,
    sae: &SAEParams,
    latent: LatentId,
    corpus: &[Vec<u32>],
    k: usize,
) -> Result<CorpusMax> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_latent(sae, latent)?;
    let mut doc_max: Vec<(usize, f64)> = Vec::with_capacity(corpus.len());
    let mut a_star = 0.0f64;
    for (i, doc) in corpus.iter().enumerate() {
        let acts = latent_activation(lm_params, sae, &TokenSeq::new(doc.clone()), latent)?;
        let dmax = acts.iter().cloned().fold(0.0f64, f64::max);
        a_star = a_star.max(dmax);
        doc_max.push((i, dmax));
    }
    doc_max.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    doc_max.truncate(k);
    Ok(CorpusMax { a_star, exemplars: doc_max, dead: a_star == 0.0 })
}

/// Normalized activation value / A*.
pub fn normalize_activation(value: f64, a_star: f64) -> Result<f64> {
    if a_star <= 0.0 {
        return Err(Error::UnnormalizableLatent(a_star));
    }
    Ok(value / a_star)
}
