//! Declarative elicitation objectives f(t): SAE latent activation (max or
//! mean over positions), token logit difference at a scoring position, and
//! linear probe projection of a residual activation. Each kind evaluates on a
//! forward cache and exposes -f as a differentiable loss for the input
//! gradient machinery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{self, GradientLoss, LMParams, LossParts};
use crate::mat::{self, Mat};
use crate::sae::{self, LatentId, SAEParams};
use crate::transformer::ForwardCache;
use crate::vocab::TokenSeq;

/// Unit-norm linear probe on one residual read point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDirection {
    pub direction: Vec<f64>,
    pub layer: usize,
    pub bias: f64,
}

impl ProbeDirection {
    pub fn new(direction: Vec<f64>, layer: usize, bias: f64) -> Result<Self> {
        let p = ProbeDirection { direction, layer, bias };
        p.validate()?;
        Ok(p)
    }

    /// Normalized class-mean difference; bias centers the decision boundary
    /// at the midpoint, so projections are positive toward `positive`.
    pub fn from_class_means(positive: &[f64], negative: &[f64], layer: usize) -> Result<Self> {
        if positive.len() != negative.len() {
            return Err(Error::LengthMismatch { expected: positive.len(), got: negative.len() });
        }
        let mut direction: Vec<f64> =
            positive.iter().zip(negative).map(|(p, n)| p - n).collect();
        let norm = mat::dot(&direction, &direction).sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateInput("class means coincide".into()));
        }
        direction.iter_mut().for_each(|x| *x /= norm);
        let mid: Vec<f64> =
            positive.iter().zip(negative).map(|(p, n)| 0.5 * (p + n)).collect();
        let bias = -mat::dot(&direction, &mid);
        Ok(ProbeDirection { direction, layer, bias })
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction.is_empty() {
            return Err(Error::InvalidConfig("probe direction is empty".into()));
        }
        if !self.direction.iter().all(|x| x.is_finite()) || !self.bias.is_finite() {
            return Err(Error::InvalidConfig("probe has non-finite entries".into()));
        }
        let norm = mat::dot(&self.direction, &self.direction).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probe direction norm {norm}, want 1")));
        }
        Ok(())
    }

    pub fn project(&self, activation: &[f64]) -> f64 {
        mat::dot(&self.direction, activation) + self.bias
    }
}

/// What the optimizer maximizes. `position: None` scores the final position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    SaeMax {
        latent: LatentId,
    },
    SaeMean {
        latent: LatentId,
    },
    LogitDiff {
        target: u32,
        source: u32,
        #[serde(default)]
        position: Option<usize>,
    },
    ProbeProjection {
        probe: ProbeDirection,
        #[serde(default)]
        position: Option<usize>,
    },
}

impl ObjectiveSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectiveSpec::SaeMax { .. } => "sae_max",
            ObjectiveSpec::SaeMean { .. } => "sae_mean",
            ObjectiveSpec::LogitDiff { .. } => "logit_diff",
            ObjectiveSpec::ProbeProjection { .. } => "probe_projection",
        }
    }

    /// Per-token attribution exists only for the SAE kinds.
    pub fn decomposable(&self) -> bool {
        matches!(self, ObjectiveSpec::SaeMax { .. } | ObjectiveSpec::SaeMean { .. })
    }

    pub fn validate(&self, lm_params: &LMParams, sae_params: Option<&SAEParams>) -> Result<()> {
        match self {
            ObjectiveSpec::SaeMax { latent } | ObjectiveSpec::SaeMean { latent } => {
                let sae_params = sae_params.ok_or_else(|| {
                    Error::InvalidConfig("sae objective requires a loaded sae".into())
                })?;
                sae::check_latent(sae_params, *latent)?;
                if sae_params.layer >= lm_params.read_points() {
                    return Err(Error::UnknownLatent { layer: sae_params.layer, index: latent.index });
                }
                if sae_params.input_width() != lm_params.t.cfg.d {
                    return Err(Error::LengthMismatch {
                        expected: lm_params.t.cfg.d,
                        got: sae_params.input_width(),
                    });
                }
                Ok(())
            }
            ObjectiveSpec::LogitDiff { target, source, .. } => {
                let vocab = lm_params.vocab_size();
                for &id in [target, source] {
                    if id as usize >= vocab {
                        return Err(Error::TokenOutOfRange { id, vocab });
                    }
                }
                Ok(())
            }
            ObjectiveSpec::ProbeProjection { probe, .. } => {
                probe.validate()?;
                if probe.direction.len() != lm_params.t.cfg.d {
                    return Err(Error::LengthMismatch {
                        expected: lm_params.t.cfg.d,
                        got: probe.direction.len(),
                    });
                }
                if probe.layer >= lm_params.read_points() {
                    return Err(Error::InvalidConfig(format!(
                        "probe read point {} out of range ({} available)",
                        probe.layer,
                        lm_params.read_points()
                    )));
                }
                Ok(())
            }
        }
    }
}

fn resolve_position(position: Option<usize>, n: usize) -> Result<usize> {
    let pos = position.unwrap_or(n.saturating_sub(1));
    if pos >= n {
        return Err(Error::ScoringPositionOutOfRange { pos, len: n });
    }
    Ok(pos)
}

fn latent_from_cache(sae_params: &SAEParams, latent: LatentId, cache: &ForwardCache) -> Vec<f64> {
    let resid = cache.residual(sae_params.layer);
    (0..resid.rows)
        .map(|i| sae_params.readout(sae_params.pre_activation(latent.index, resid.row(i))))
        .collect()
}

/// First maximal index; ties resolve to the lowest position.
fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Objective value from an existing forward cache. The caller guarantees the
/// spec was validated against the models that produced the cache.
pub fn eval_with_cache(
    spec: &ObjectiveSpec,
    sae_params: Option<&SAEParams>,
    cache: &ForwardCache,
) -> Result<f64> {
    let n = cache.seq_len();
    match spec {
        ObjectiveSpec::SaeMax { latent } => {
            let acts = latent_from_cache(sae_params.expect("validated"), *latent, cache);
            Ok(acts[first_argmax(&acts)])
        }
        ObjectiveSpec::SaeMean { latent } => {
            let acts = latent_from_cache(sae_params.expect("validated"), *latent, cache);
            Ok(acts.iter().sum::<f64>() / n as f64)
        }
        ObjectiveSpec::LogitDiff { target, source, position } => {
            let pos = resolve_position(*position, n)?;
            let row = cache.logits.row(pos);
            Ok(row[*target as usize] - row[*source as usize])
        }
        ObjectiveSpec::ProbeProjection { probe, position } => {
            let pos = resolve_position(*position, n)?;
            Ok(probe.project(cache.residual(probe.layer).row(pos)))
        }
    }
}

/// Elicitation strength f(t) of a token sequence.
pub fn eval_objective(
    spec: &ObjectiveSpec,
    lm_params: &LMParams,
    sae_params: Option<&SAEParams>,
    seq: &TokenSeq,
) -> Result<f64> {
    spec.validate(lm_params, sae_params)?;
    let cache = lm::forward_cache(lm_params, seq)?;
    eval_with_cache(spec, sae_params, &cache)
}

/// Per-position contribution vector; only SAE objectives decompose.
/// mean(attribution) = sae_mean value and max(attribution) = sae_max value.
pub fn per_token_attribution(
    spec: &ObjectiveSpec,
    lm_params: &LMParams,
    sae_params: Option<&SAEParams>,
    seq: &TokenSeq,
) -> Result<Vec<f64>> {
    spec.validate(lm_params, sae_params)?;
    match spec {
        ObjectiveSpec::SaeMax { latent } | ObjectiveSpec::SaeMean { latent } => {
            sae::latent_activation(lm_params, sae_params.expect("validated"), seq, *latent)
        }
        _ => Err(Error::InpaintingUnavailable),
    }
}

/// -f(t) as a relaxed loss functional, composable with lambda * CE.
pub struct ObjectiveLoss<'a> {
    spec: &'a ObjectiveSpec,
    sae_params: Option<&'a SAEParams>,
}

fn seed_slot(
    dresiduals: &mut Vec<Option<Mat>>,
    layer: usize,
    n: usize,
    d: usize,
) -> &mut Mat {
    if dresiduals.len() <= layer {
        dresiduals.resize_with(layer + 1, || None);
    }
    dresiduals[layer].get_or_insert_with(|| Mat::zeros(n, d))
}

pub fn objective_gradient_loss<'a>(
    spec: &'a ObjectiveSpec,
    lm_params: &LMParams,
    sae_params: Option<&'a SAEParams>,
) -> Result<ObjectiveLoss<'a>> {
    spec.validate(lm_params, sae_params)?;
    Ok(ObjectiveLoss { spec, sae_params })
}

impl GradientLoss for ObjectiveLoss<'_> {
    fn parts(&self, cache: &ForwardCache, x: &Mat) -> Result<LossParts> {
        let n = cache.seq_len();
        let mut dlogits = Mat::zeros(n, x.cols);
        let mut dresiduals: Vec<Option<Mat>> = Vec::new();
        let value = match self.spec {
            ObjectiveSpec::SaeMax { latent } => {
                let sae_params = self.sae_params.expect("validated");
                let acts = latent_from_cache(sae_params, *latent, cache);
                let imax = first_argmax(&acts);
                // Subgradient: flow through the first maximal position, and
                // only when the readout is live (above threshold).
                if acts[imax] > 0.0 {
                    let grad =
                        seed_slot(&mut dresiduals, sae_params.layer, n, sae_params.input_width());
                    mat::axpy(-1.0, sae_params.enc.row(latent.index), grad.row_mut(imax));
                }
                acts[imax]
            }
            ObjectiveSpec::SaeMean { latent } => {
                let sae_params = self.sae_params.expect("validated");
                let acts = latent_from_cache(sae_params, *latent, cache);
                let coef = 1.0 / n as f64;
                let grad =
                    seed_slot(&mut dresiduals, sae_params.layer, n, sae_params.input_width());
                for (i, &a) in acts.iter().enumerate() {
                    if a > 0.0 {
                        mat::axpy(-coef, sae_params.enc.row(latent.index), grad.row_mut(i));
                    }
                }
                acts.iter().sum::<f64>() * coef
            }
            ObjectiveSpec::LogitDiff { target, source, position } => {
                let pos = resolve_position(*position, n)?;
                let row = cache.logits.row(pos);
                let f = row[*target as usize] - row[*source as usize];
                let drow = dlogits.row_mut(pos);
                drow[*target as usize] -= 1.0;
                drow[*source as usize] += 1.0;
                f
            }
            ObjectiveSpec::ProbeProjection { probe, position } => {
                let pos = resolve_position(*position, n)?;
                let f = probe.project(cache.residual(probe.layer).row(pos));
                let grad = seed_slot(&mut dresiduals, probe.layer, n, probe.direction.len());
                mat::axpy(-1.0, &probe.direction, grad.row_mut(pos));
                f
            }
        };
        Ok(LossParts { value: -value, dlogits, dresiduals, dx_direct: None })
    }
}
