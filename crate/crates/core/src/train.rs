//! Single-threaded, seeded training loop.

use serde::{Deserialize, Serialize};

use crate::bound::RateTrace;
use crate::config::RunConfig;
use crate::data::{batches, Dataset};
use crate::error::Result;
use crate::nn::{cross_entropy_per_sample, Mode, Model, NoHook};
use crate::optim::{AdamWState, CosineSchedule};
use crate::regularizers::Regularizer;

/// Metrics after one epoch. Epoch 0 is the evaluation before any update.
/// Accuracies and the gap are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub gen_gap: f64,
    pub lr: f64,
    /// Epoch-mean applied rate per hook site (0 where nothing was applied).
    pub site_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Applied rates of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRates {
    pub step: u64,
    pub epoch: usize,
    pub rates: Vec<Option<f64>>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub metrics: RunMetrics,
    pub trace: RateTrace,
    pub steps: Vec<StepRates>,
}

/// Mean loss and accuracy (percent) in evaluation mode.
pub fn evaluate(model: &mut Model, dataset: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(256) {
        let x = dataset.images.select_samples(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
        let logits = model.forward(&x, Mode::Eval, &mut NoHook)?;
        loss += cross_entropy_per_sample(&logits, &y)?.iter().sum::<f64>();
        correct += logits
            .argmax_rows()
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    let n = dataset.len().max(1) as f64;
    Ok((loss / n, 100.0 * correct as f64 / n))
}

/// Shapes both splits for the configured model and builds the initial model.
pub fn prepare(
    config: &RunConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Model, Dataset, Dataset)> {
    let (train, test) = if config.model.flat_input() {
        let flat = [train.sample_shape().iter().product::<usize>()];
        (train.reshaped(&flat)?, test.reshaped(&flat)?)
    } else {
        (train.clone(), test.clone())
    };
    let spec = config
        .model
        .build(train.sample_shape(), train.num_classes, config.seed)?;
    Ok((Model::new(spec, config.init)?, train, test))
}

pub fn train(config: &RunConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let started = std::time::Instant::now();
    let (mut model, train_set, test_set) = prepare(config, train_set, test_set)?;
    let mut reg = Regularizer::from_config(&config.regularizer, config.seed)?;
    let n_sites = model.hook_sites().len();
    let mut trace = RateTrace::with_sites(n_sites);
    let mut steps = Vec::new();

    let names = model.param_names();
    let mut opt = {
        let params = model.params_mut();
        let refs: Vec<&crate::Tensor> = params.iter().map(|p| &**p).collect();
        AdamWState::new(&refs, names, &config.optimizer)
    };
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size) as u64;
    let schedule = CosineSchedule {
        lr_max: config.optimizer.lr_max,
        lr_min: config.optimizer.lr_min,
        total_steps: if config.optimizer.schedule_per_epoch {
            config.epochs as u64
        } else {
            steps_per_epoch * config.epochs as u64
        },
    };

    let mut history = Vec::with_capacity(config.epochs + 1);
    let eval_row = |model: &mut Model, epoch, lr, site_rates| -> Result<EpochMetrics> {
        let (train_loss, train_acc) = evaluate(model, &train_set)?;
        let (test_loss, test_acc) = evaluate(model, &test_set)?;
        Ok(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            gen_gap: train_acc - test_acc,
            lr,
            site_rates,
        })
    };
    history.push(eval_row(
        &mut model,
        0,
        schedule.lr(0)?,
        vec![0.0; n_sites],
    )?);

    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut sums = vec![0.0; n_sites];
        let mut counts = vec![0usize; n_sites];
        for (x, y) in batches(&train_set, config.batch_size, config.seed, epoch as u64)? {
            opt.lr = if config.optimizer.schedule_per_epoch {
                schedule.lr(epoch as u64)?
            } else {
                schedule.lr(step)?
            };
            model.forward_loss(&x, &y, Mode::Train, &mut reg)?;
            let mut grads = model.backward(&y)?;
            reg.after_backward(&model, &mut grads);
            let rates = reg.step_rates();
            for (site, r) in rates.iter().enumerate() {
                if let Some(r) = r {
                    sums[site] += r;
                    counts[site] += 1;
                }
            }
            trace.record(&rates);
            if !rates.is_empty() {
                steps.push(StepRates {
                    step,
                    epoch: epoch + 1,
                    rates,
                });
            }
            let grad_refs = grads.tensors();
            opt.step(&mut model.params_mut(), &grad_refs)?;
            step += 1;
        }
        let site_rates = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let lr = opt.lr;
        history.push(eval_row(&mut model, epoch + 1, lr, site_rates)?);
    }

    Ok(TrainOutcome {
        model,
        metrics: RunMetrics {
            epochs: history,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        trace,
        steps,
    })
}
