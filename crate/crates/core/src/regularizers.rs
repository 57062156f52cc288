//! Activation regularizers: momentum-adaptive dropout (MAGDrop), fixed
//! inverted dropout, and a gradient-norm rescaling baseline.
//!
//! MAGDrop keeps, per hook site, an exponential moving average of the
//! activation gradient. The gradient it consumes at step `t` is the one the
//! backward pass recorded at step `t-1`; the mask must exist before the loss
//! of step `t` does. With no stored gradient the site is left untouched.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationHook, Gradients, Mask, Model};
use crate::seeded_stream;
use crate::tensor::Tensor;

const MASK_STREAM_BASE: u64 = 0x1000;

/// Which regularizer a run uses, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerConfig {
    None,
    Dropout { p: f64 },
    Agr { lambda: f64 },
    Magdrop(MagDropConfig),
}

impl RegularizerConfig {
    pub fn method_name(&self) -> &'static str {
        match self {
            RegularizerConfig::None => "none",
            RegularizerConfig::Dropout { .. } => "dropout",
            RegularizerConfig::Agr { .. } => "agr",
            RegularizerConfig::Magdrop(_) => "magdrop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerConfig::None => Ok(()),
            RegularizerConfig::Dropout { p } => check_fixed_rate(p),
            RegularizerConfig::Agr { lambda } => {
                if lambda.is_finite() && lambda >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "agr lambda must be >= 0, got {lambda}"
                    )))
                }
            }
            RegularizerConfig::Magdrop(cfg) => cfg.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagDropConfig {
    #[serde(default = "MagDropConfig::default_p_base")]
    pub p_base: f64,
    #[serde(default = "MagDropConfig::default_beta")]
    pub beta: f64,
    #[serde(default = "MagDropConfig::default_tau")]
    pub tau: f64,
    #[serde(default = "MagDropConfig::default_clamp_max")]
    pub clamp_max: f64,
}

impl MagDropConfig {
    fn default_p_base() -> f64 {
        0.3
    }
    fn default_beta() -> f64 {
        0.9
    }
    fn default_tau() -> f64 {
        0.1
    }
    fn default_clamp_max() -> f64 {
        0.6
    }

    /// Upper bound on the expected rate claimed for the clamped process,
    /// `p_base / (1 + beta)`. Monitored, not enforced.
    pub fn rate_ceiling(&self) -> f64 {
        self.p_base / (1.0 + self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_base > 0.0 && self.p_base < 1.0) {
            return Err(Error::Config(format!(
                "p_base must be in (0,1), got {}",
                self.p_base
            )));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta must be in [0,1), got {}",
                self.beta
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.clamp_max > 0.0 && self.clamp_max < 1.0) {
            return Err(Error::Config(format!(
                "clamp_max must be in (0,1), got {}",
                self.clamp_max
            )));
        }
        Ok(())
    }
}

impl Default for MagDropConfig {
    fn default() -> Self {
        MagDropConfig {
            p_base: 0.3,
            beta: 0.9,
            tau: 0.1,
            clamp_max: 0.6,
        }
    }
}

/// A sampled MAGDrop mask together with the rates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutDecision {
    /// Post-clamp rate for each batch row.
    pub per_sample_rate: Vec<f64>,
    /// `{0,1}` entries, same shape as the activation.
    pub mask: Tensor,
    /// Divisor applied to surviving units: `1 - mean(per_sample_rate)`.
    pub scale: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-sample MAGDrop rate
/// `p_base · (‖m_i‖ / mean_j ‖m_j‖) · sigmoid(‖g_i − m_i‖ / τ)`, clamped to
/// `[0, clamp_max]`. Norms flatten every non-batch dimension. A batch whose
/// momentum norms are all zero gets rate 0.
pub fn magdrop_rate(cfg: &MagDropConfig, grad: &Tensor, momentum: &Tensor) -> Result<Vec<f64>> {
    if !(cfg.tau > 0.0) {
        return Err(Error::Config(format!(
            "tau must be positive, got {}",
            cfg.tau
        )));
    }
    grad.check_same_shape(momentum)?;
    if grad.batch_size() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mom_norms = momentum.per_sample_norms();
    // incremental mean: identical norms give exactly that norm
    let mean_norm = mom_norms
        .iter()
        .enumerate()
        .fold(0.0, |mean, (k, &x)| mean + (x - mean) / (k + 1) as f64);
    if mean_norm == 0.0 {
        return Ok(vec![0.0; mom_norms.len()]);
    }
    let diff_norms = grad.zip_map(momentum, |g, m| g - m)?.per_sample_norms();
    Ok(mom_norms
        .iter()
        .zip(&diff_norms)
        .map(|(&mn, &dn)| {
            let raw = cfg.p_base * (mn / mean_norm) * sigmoid(dn / cfg.tau);
            raw.clamp(0.0, cfg.clamp_max)
        })
        .collect())
}

/// Samples a MAGDrop mask: each element of row `i` is kept with probability
/// `1 - rates[i]`, and survivors are divided by `1 - mean(rates)`.
pub fn magdrop_apply(
    activation: &Tensor,
    rates: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, DropoutDecision)> {
    let bsz = activation.batch_size();
    if rates.len() != bsz {
        return Err(Error::Shape(format!(
            "{} rates for a batch of {bsz}",
            rates.len()
        )));
    }
    let mean_rate = rates.iter().sum::<f64>() / bsz as f64;
    if !(mean_rate < 1.0) || rates.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::State(format!(
            "dropout rates must lie in [0,1) (mean {mean_rate})"
        )));
    }
    let scale = 1.0 - mean_rate;
    let mut mask = Tensor::zeros(activation.shape());
    for (i, &rate) in rates.iter().enumerate() {
        let keep = 1.0 - rate;
        for m in mask.sample_mut(i) {
            *m = if rng.random::<f64>() < keep { 1.0 } else { 0.0 };
        }
    }
    let out = activation.zip_map(&mask, |a, k| a * k / scale)?;
    Ok((
        out,
        DropoutDecision {
            per_sample_rate: rates.to_vec(),
            mask,
            scale,
        },
    ))
}

fn check_fixed_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "dropout rate must be in [0,1), got {p}"
        )))
    }
}

/// Inverted-dropout keep mask at rate `p`.
pub fn fixed_dropout_mask(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Result<Mask> {
    check_fixed_rate(p)?;
    let mut keep = Tensor::zeros(shape);
    let keep_prob = 1.0 - p;
    for k in keep.data_mut() {
        *k = if rng.random::<f64>() < keep_prob {
            1.0
        } else {
            0.0
        };
    }
    Ok(Mask {
        keep,
        scale: keep_prob,
    })
}

/// Standard inverted dropout with its own seeded stream.
pub fn fixed_dropout_apply(activation: &Tensor, p: f64, seed: u64) -> Result<Tensor> {
    let mut rng = seeded_stream(seed, MASK_STREAM_BASE);
    let mask = fixed_dropout_mask(activation.shape(), p, &mut rng)?;
    activation.zip_map(&mask.keep, |a, k| a * k / mask.scale)
}

/// Gradient-norm rescaling used as the AGR baseline: each parameter gradient
/// is multiplied by `1 + lambda · ‖g‖ / max_j ‖g_j‖`. Returns the factors.
pub fn agr_penalty(grads: &mut [&mut Tensor], lambda: f64) -> Vec<f64> {
    let norms: Vec<f64> = grads.iter().map(|g| g.norm()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    if max_norm == 0.0 || lambda == 0.0 {
        return vec![1.0; grads.len()];
    }
    grads
        .iter_mut()
        .zip(&norms)
        .map(|(g, &n)| {
            let factor = 1.0 + lambda * n / max_norm;
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
            factor
        })
        .collect()
}

#[derive(Debug, Clone)]
struct MagDropSite {
    momentum: Option<Tensor>,
    pending_grad: Option<Tensor>,
    rng: ChaCha8Rng,
    rates: Vec<f64>,
}

/// Per-layer MAGDrop state for one training run.
#[derive(Debug, Clone)]
pub struct MagDrop {
    config: MagDropConfig,
    rng_seed: u64,
    sites: Vec<MagDropSite>,
    last_step: Vec<Option<f64>>,
}

impl MagDrop {
    pub fn new(config: MagDropConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(MagDrop {
            config,
            rng_seed,
            sites: Vec::new(),
            last_step: Vec::new(),
        })
    }

    pub fn config(&self) -> &MagDropConfig {
        &self.config
    }

    fn site(&mut self, layer: usize) -> &mut MagDropSite {
        while self.sites.len() <= layer {
            let idx = self.sites.len() as u64;
            self.sites.push(MagDropSite {
                momentum: None,
                pending_grad: None,
                rng: seeded_stream(self.rng_seed, MASK_STREAM_BASE + idx),
                rates: Vec::new(),
            });
            self.last_step.push(None);
        }
        &mut self.sites[layer]
    }

    pub fn momentum(&self, layer: usize) -> Option<&Tensor> {
        self.sites.get(layer).and_then(|s| s.momentum.as_ref())
    }

    /// `m ← g` on the first call, `m ← β·m + (1−β)·g` afterwards.
    pub fn update_momentum(&mut self, layer: usize, grad: &Tensor) -> Result<Tensor> {
        let beta = self.config.beta;
        let site = self.site(layer);
        let updated = match &site.momentum {
            None => grad.clone(),
            Some(m) => {
                if m.shape() != grad.shape() {
                    return Err(Error::State(format!(
                        "momentum for layer {layer} has shape {:?} but gradient has {:?}",
                        m.shape(),
                        grad.shape()
                    )));
                }
                // m + (1-β)(g-m): equal to β·m + (1-β)·g, with g == m an exact fixed point.
                m.zip_map(grad, |m, g| m + (1.0 - beta) * (g - m))?
            }
        };
        site.momentum = Some(updated.clone());
        Ok(updated)
    }

    /// Stores the activation gradients of the last backward pass, one per site.
    pub fn observe_gradients(&mut self, grads: &[Option<&Tensor>]) {
        for (layer, g) in grads.iter().enumerate() {
            self.site(layer).pending_grad = g.map(|t| (*t).clone());
        }
    }

    /// Applies MAGDrop to one site's activation. Returns `None` (no-op) when
    /// no gradient is available yet or its batch size does not match the
    /// current batch.
    pub fn apply(&mut self, layer: usize, activation: &Tensor) -> Result<Option<DropoutDecision>> {
        let Some(grad) = self.site(layer).pending_grad.take() else {
            self.last_step[layer] = None;
            return Ok(None);
        };
        let bsz_matches = grad.batch_size() == activation.batch_size();
        let shape_matches = self
            .momentum(layer)
            .is_none_or(|m| m.shape() == grad.shape());
        if !bsz_matches || !shape_matches {
            self.last_step[layer] = None;
            return Ok(None);
        }
        let momentum = self.update_momentum(layer, &grad)?;
        let rates = magdrop_rate(&self.config, &grad, &momentum)?;
        let site = &mut self.sites[layer];
        let (_, decision) = magdrop_apply(activation, &rates, &mut site.rng)?;
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        site.rates.push(mean);
        self.last_step[layer] = Some(mean);
        Ok(Some(decision))
    }

    /// Batch-mean applied rate of every step where MAGDrop fired, per site.
    pub fn rate_history(&self) -> Vec<&[f64]> {
        self.sites.iter().map(|s| s.rates.as_slice()).collect()
    }
}

/// Runtime regularizer driven by the training loop.
#[derive(Debug, Clone)]
pub enum Regularizer {
    None,
    Dropout {
        p: f64,
        rngs: Vec<ChaCha8Rng>,
        seed: u64,
        last_step: Vec<Option<f64>>,
    },
    Agr {
        lambda: f64,
    },
    MagDrop(MagDrop),
}

impl Regularizer {
    pub fn from_config(cfg: &RegularizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(match *cfg {
            RegularizerConfig::None => Regularizer::None,
            RegularizerConfig::Dropout { p } => Regularizer::Dropout {
                p,
                rngs: Vec::new(),
                seed,
                last_step: Vec::new(),
            },
            RegularizerConfig::Agr { lambda } => Regularizer::Agr { lambda },
            RegularizerConfig::Magdrop(c) => Regularizer::MagDrop(MagDrop::new(c, seed)?),
        })
    }

    /// Called after `backward`; feeds activation gradients to MAGDrop and
    /// rescales parameter gradients for AGR.
    pub fn after_backward(&mut self, model: &Model, grads: &mut Gradients) {
        match self {
            Regularizer::MagDrop(md) => md.observe_gradients(&model.site_activation_grads()),
            Regularizer::Agr { lambda } => {
                agr_penalty(&mut grads.tensors_mut(), *lambda);
            }
            _ => {}
        }
    }

    /// Mean applied rate per hook site for the step just taken (`None` where
    /// nothing was applied).
    pub fn step_rates(&self) -> Vec<Option<f64>> {
        match self {
            Regularizer::Dropout { last_step, .. } => last_step.clone(),
            Regularizer::MagDrop(md) => md.last_step.clone(),
            _ => Vec::new(),
        }
    }
}

impl ActivationHook for Regularizer {
    fn on_activation(&mut self, site: usize, activation: &Tensor) -> Result<Option<Mask>> {
        match self {
            Regularizer::None | Regularizer::Agr { .. } => Ok(None),
            Regularizer::Dropout {
                p,
                rngs,
                seed,
                last_step,
            } => {
                while rngs.len() <= site {
                    rngs.push(seeded_stream(*seed, MASK_STREAM_BASE + rngs.len() as u64));
                    last_step.push(None);
                }
                last_step[site] = Some(*p);
                fixed_dropout_mask(activation.shape(), *p, &mut rngs[site]).map(Some)
            }
            Regularizer::MagDrop(md) => Ok(md.apply(site, activation)?.map(|d| Mask {
                keep: d.mask,
                scale: d.scale,
            })),
        }
    }
}
