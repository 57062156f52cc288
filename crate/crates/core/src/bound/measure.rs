use serde::{Deserialize, Serialize};

use super::spectral::{measure_spectral_norm, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use super::{default_covering_constant, BoundInputs, LayerTerm, DEFAULT_ALPHA};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_per_sample, Model, NoHook};
use crate::Mode;

/// Applied dropout rates over a run: for each hook site, the batch-mean rate
/// of every training step at which the regularizer actually masked it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTrace {
    pub sites: Vec<Vec<f64>>,
}

impl RateTrace {
    pub fn with_sites(n: usize) -> Self {
        RateTrace {
            sites: vec![Vec::new(); n],
        }
    }

    pub fn record(&mut self, step_rates: &[Option<f64>]) {
        for (site, r) in step_rates.iter().enumerate() {
            if let Some(r) = r {
                self.sites[site].push(*r);
            }
        }
    }

    /// Time-mean rate at one site; 0 if it never fired.
    pub fn expected_rate(&self, site: usize) -> f64 {
        let s = &self.sites[site];
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }

    /// Mean over sites of the per-site time-mean rate.
    pub fn mean_rate(&self) -> f64 {
        if self.sites.is_empty() {
            return 0.0;
        }
        (0..self.sites.len())
            .map(|i| self.expected_rate(i))
            .sum::<f64>()
            / self.sites.len() as f64
    }
}

/// Bound inputs measured from a trained model plus the loss-clipping record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub inputs: BoundInputs,
    /// Mean unclipped training cross-entropy.
    pub raw_empirical_risk: f64,
    /// Training samples whose loss exceeded `B` and was clipped.
    pub clipped_samples: usize,
}

/// For each parameterised layer, the hook site fed by its output (if any
/// ReLU follows before the next parameterised layer).
fn site_after_each_param_layer(model: &Model) -> Vec<Option<usize>> {
    let layers = &model.spec().layers;
    let sites = model.hook_sites();
    layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_params())
        .map(|(li, _)| {
            layers[li + 1..]
                .iter()
                .enumerate()
                .take_while(|(_, l)| !l.has_params())
                .find(|(_, l)| matches!(l, crate::LayerSpec::Relu))
                .and_then(|(off, _)| sites.iter().position(|&s| s == li + 1 + off))
        })
        .collect()
}

/// Collects the bound inputs from a finished run. `sigma` is left unset.
pub fn measure_from_run(
    model: &mut Model,
    trace: Option<&RateTrace>,
    dataset: &Dataset,
    loss_clip: f64,
    delta: f64,
) -> Result<Measurement> {
    let trace = trace.ok_or_else(|| Error::State("no rate trace recorded for this run".into()))?;
    let n_sites = model.hook_sites().len();
    if trace.sites.len() != n_sites {
        return Err(Error::State(format!(
            "rate trace covers {} sites but the model has {n_sites}",
            trace.sites.len()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot measure on an empty dataset".into()));
    }
    if !(loss_clip > 0.0) {
        return Err(Error::Config(format!(
            "loss clip B must be positive, got {loss_clip}"
        )));
    }

    let weight_norm_sq = model
        .states()
        .iter()
        .map(|s| s.weights.sum_sq() + s.bias.sum_sq())
        .sum();
    let kappas: Vec<f64> = model
        .weight_matrices()
        .into_iter()
        .enumerate()
        .map(|(i, (r, c, w))| {
            measure_spectral_norm(w, r, c, DEFAULT_MAX_ITERS, DEFAULT_TOL, i as u64)
        })
        .collect();
    let per_layer = kappas
        .iter()
        .zip(site_after_each_param_layer(model))
        .map(|(&kappa, site)| LayerTerm {
            kappa,
            expected_rate: site.map_or(0.0, |s| trace.expected_rate(s)),
        })
        .collect();

    let (mut raw, mut clipped_sum, mut clipped) = (0.0, 0.0, 0usize);
    let input_shape = model.spec().input_shape.clone();
    let data = dataset.reshaped(&input_shape)?;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        let batch = data.images.select_samples(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let logits = model.forward(&batch, Mode::Eval, &mut NoHook)?;
        for l in cross_entropy_per_sample(&logits, &labels)? {
            raw += l;
            if l > loss_clip {
                clipped += 1;
            }
            clipped_sum += l.min(loss_clip);
        }
    }
    let m = data.len();
    Ok(Measurement {
        inputs: BoundInputs {
            weight_norm_sq,
            expected_rate: trace.mean_rate(),
            per_layer,
            perturbation_sum: None,
            m: m as u64,
            delta,
            loss_bound: loss_clip,
            x_sq: dataset.input_norm_bound * dataset.input_norm_bound,
            sigma: None,
            alpha: DEFAULT_ALPHA,
            c: default_covering_constant(),
            empirical_risk: clipped_sum / m as f64,
        },
        raw_empirical_risk: raw / m as f64,
        clipped_samples: clipped,
    })
}
