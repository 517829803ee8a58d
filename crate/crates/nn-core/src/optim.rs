//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub config: AdamWConfig,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], config: AdamWConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }

    /// True when no step has touched the moments.
    pub fn is_pristine(&self) -> bool {
        self.t == 0
            && self
                .m
                .iter()
                .chain(&self.v)
                .all(|t| t.data().iter().all(|&x| x == 0.0))
    }
}

/// One AdamW update, in place.
///
/// The decay `p *= 1 - lr * wd` is applied to the parameter independently of
/// the adaptive gradient term.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NnError::Shape(format!(
                "param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(NnError::InvalidArgument(format!("learning rate {lr}")));
    }
    let c = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - lr * c.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
    pub warmup_ratio: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64, warmup_ratio: f64) -> Result<Self> {
        let s = Self {
            base_lr,
            min_lr: 0.0,
            total_steps,
            warmup_ratio,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ratio * self.total_steps as f64).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(NnError::Config(format!("base_lr {}", self.base_lr)));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return Err(NnError::Config(format!(
                "min_lr {} must lie in [0, base_lr]",
                self.min_lr
            )));
        }
        if self.total_steps == 0 {
            return Err(NnError::Config("total_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) || self.warmup_steps() >= self.total_steps {
            return Err(NnError::Config(format!(
                "warmup ratio {} leaves no decay phase over {} steps",
                self.warmup_ratio, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to `min_lr` at
/// `total_steps`.
pub fn cosine_lr(step: u64, schedule: &LrSchedule) -> Result<f64> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(NnError::InvalidArgument(format!(
            "step {step} beyond schedule of {} steps",
            schedule.total_steps
        )));
    }
    let warmup = schedule.warmup_steps();
    if step < warmup {
        return Ok(schedule.base_lr * step as f64 / warmup as f64);
    }
    if step == warmup {
        return Ok(schedule.base_lr);
    }
    if step == schedule.total_steps {
        return Ok(schedule.min_lr);
    }
    let progress = (step - warmup) as f64 / (schedule.total_steps - warmup) as f64;
    let cosine = 0.5 * (1.0 + (PI * progress).cos());
    Ok(schedule.min_lr + (schedule.base_lr - schedule.min_lr) * cosine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_step() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = OptimizerState::new(&params, AdamWConfig::default());
        adamw_step(&mut params, &grads, &mut state, 0.1).unwrap();
        for (p, orig) in params[0].data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((p - 0.995 * orig).abs() < 1e-15);
        }
        assert!(state.m[0].data().iter().all(|&x| x == 0.0));
        assert!(state.v[0].data().iter().all(|&x| x == 0.0));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [0.3, -2.0, 1e-3] {
            let mut params = vec![Tensor::scalar(1.0)];
            let cfg = AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            };
            let mut state = OptimizerState::new(&params, cfg);
            adamw_step(&mut params, &[Tensor::scalar(g)], &mut state, 0.01).unwrap();
            // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((params[0].data()[0] - expected).abs() < 1e-15);
            assert!(((1.0 - params[0].data()[0]).abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_calls_are_bitwise_identical() {
        let params = vec![Tensor::new(vec![4], vec![0.1, 0.2, -0.3, 0.4]).unwrap()];
        let grads = vec![Tensor::new(vec![4], vec![0.01, -0.5, 0.3, 1e-9]).unwrap()];
        let run = || {
            let mut p = params.clone();
            let mut s = OptimizerState::new(&p, AdamWConfig::default());
            for _ in 0..5 {
                adamw_step(&mut p, &grads, &mut s, 1e-3).unwrap();
            }
            (p, s)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert!(p1[0].bitwise_eq(&p2[0]));
        assert!(s1.v[0].bitwise_eq(&s2.v[0]));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = OptimizerState::new(&params, AdamWConfig::default());
        assert!(adamw_step(&mut params, &[Tensor::zeros(&[3])], &mut state, 0.1).is_err());
        assert_eq!(state.t, 0);
    }

    fn sched() -> LrSchedule {
        LrSchedule {
            base_lr: 1e-3,
            min_lr: 1e-5,
            total_steps: 1000,
            warmup_ratio: 0.02,
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = sched();
        assert_eq!(s.warmup_steps(), 20);
        assert_eq!(cosine_lr(0, &s).unwrap(), 0.0);
        assert_eq!(cosine_lr(20, &s).unwrap(), 1e-3);
        assert_eq!(cosine_lr(1000, &s).unwrap(), 1e-5);
        assert!((cosine_lr(10, &s).unwrap() - 5e-4).abs() < 1e-18);
        // halfway through the decay, cos(pi/2) = 0
        let mid = cosine_lr(510, &s).unwrap();
        assert!((mid - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_out_of_range() {
        assert!(cosine_lr(1001, &sched()).is_err());
        let bad = LrSchedule {
            warmup_ratio: 1.0,
            ..sched()
        };
        assert!(cosine_lr(0, &bad).is_err());
    }

    #[test]
    fn schedule_bounded_and_reproducible() {
        let s = sched();
        for step in 0..=1000 {
            let lr = cosine_lr(step, &s).unwrap();
            assert!((0.0..=s.base_lr).contains(&lr));
            assert_eq!(lr.to_bits(), cosine_lr(step, &s).unwrap().to_bits());
        }
    }
}
