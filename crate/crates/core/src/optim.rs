//! AdamW with decoupled weight decay and a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Advance the schedule once per epoch instead of once per step.
    pub schedule_per_epoch: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_max: 1e-3,
            lr_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            schedule_per_epoch: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max > 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    names: Vec<String>,
}

impl AdamWState {
    /// Zero moments shaped like `params`; `names` label errors.
    pub fn new(params: &[&Tensor], names: Vec<String>, cfg: &OptimConfig) -> Self {
        AdamWState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step_count: 0,
            lr: cfg.lr_max,
            betas: (cfg.beta1, cfg.beta2),
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            names,
        }
    }

    fn name(&self, i: usize) -> String {
        self.names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("param{i}"))
    }

    fn check(&self, params: &[&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} params / {} grads for optimizer tracking {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}` shape {:?}, gradient {:?}",
                    self.name(i),
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    param: self.name(i),
                });
            }
        }
        Ok(())
    }

    /// One AdamW update at the current `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        self.update(params, grads, true)
    }

    /// One Adam update with L2 decay folded into the gradient. Kept as the
    /// reference that AdamW must match when `weight_decay == 0`.
    pub fn adam_step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        self.update(params, grads, false)
    }

    fn update(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        decoupled: bool,
    ) -> Result<()> {
        self.check(params, grads)?;
        self.step_count += 1;
        let (b1, b2) = self.betas;
        let t = self.step_count as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (lr, wd, eps) = (self.lr, self.weight_decay, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let mut gi = gi;
                if decoupled {
                    if wd != 0.0 {
                        *w -= lr * wd * *w;
                    }
                } else if wd != 0.0 {
                    gi += wd * *w;
                }
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    /// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total_steps))`.
    pub fn lr(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Config(format!(
                "schedule step {step} beyond total {}",
                self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.lr_max);
        }
        let frac = step as f64 / self.total_steps as f64;
        Ok(self.lr_min
            + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

pub fn cosine_lr(schedule: &CosineSchedule, step: u64) -> Result<f64> {
    schedule.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_matches_hand_iteration() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut p = scalar(0.5);
        let g = scalar(1.0);
        let mut st = AdamWState::new(&[&p], vec!["w".into()], &cfg);
        st.step(&mut [&mut p], &[&g]).unwrap();
        // m = 0.1, v = 0.001; bias-corrected m̂ = 1, v̂ = 1.
        let m = 0.1;
        let v = 0.001;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.999);
        let expected = 0.5 - 1e-3 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((0.5 - p.data()[0] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamWState::new(&[&p], vec![], &cfg);
        for _ in 0..5 {
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
        assert_eq!(st.step_count, 5);
    }

    #[test]
    fn decay_only_is_geometric() {
        let cfg = OptimConfig {
            weight_decay: 0.1,
            lr_max: 0.01,
            ..OptimConfig::default()
        };
        let mut p = scalar(2.0);
        let g = scalar(0.0);
        let mut st = AdamWState::new(&[&p], vec![], &cfg);
        for _ in 0..7 {
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        let expected = 2.0 * (1.0f64 - 0.01 * 0.1).powi(7);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = OptimConfig::default();
        let mut p = scalar(1.0);
        let g = scalar(f64::NAN);
        let mut st = AdamWState::new(&[&p], vec!["dense0.weight".into()], &cfg);
        match st.step(&mut [&mut p], &[&g]) {
            Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "dense0.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adamw_without_decay_is_adam_bitwise() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut a = Tensor::new(vec![4], vec![0.1, -0.4, 2.0, 0.0]).unwrap();
        let mut b = a.clone();
        let mut sa = AdamWState::new(&[&a], vec![], &cfg);
        let mut sb = sa.clone();
        for k in 0..50 {
            let g = a.map(|w| (w * 3.0 + k as f64).sin());
            sa.step(&mut [&mut a], &[&g]).unwrap();
            sb.adam_step(&mut [&mut b], &[&g]).unwrap();
            assert_eq!(a, b);
        }
        assert!(sa.second_moment[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule {
            lr_max: 1e-3,
            lr_min: 1e-5,
            total_steps: 100,
        };
        assert!((cosine_lr(&s, 0).unwrap() - 1e-3).abs() < 1e-12);
        assert!((cosine_lr(&s, 100).unwrap() - 1e-5).abs() < 1e-12);
        assert!((cosine_lr(&s, 50).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-12);
        assert!(matches!(cosine_lr(&s, 101), Err(Error::Config(_))));
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let lr = s.lr(t).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
