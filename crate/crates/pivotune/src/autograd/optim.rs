//! AdamW with decoupled weight decay, global-norm gradient clipping, and
//! optional per-entry trainability masks.
//!
//! Masks are how partitioned fine-tuning keeps frozen entries bit-identical:
//! a masked-off entry receives no moment update, no decay, and no step, and
//! its gradient is excluded from the clipping norm.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

struct Slot {
    name: String,
    param: Tensor,
    lr: f64,
    weight_decay: f64,
    mask: Option<Vec<bool>>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

pub struct AdamW {
    config: AdamWConfig,
    step_count: u64,
    slots: Vec<Slot>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        assert!(config.beta1 > 0.0 && config.beta1 < 1.0);
        assert!(config.beta2 > 0.0 && config.beta2 < 1.0);
        assert!(config.grad_clip > 0.0);
        AdamW {
            config,
            step_count: 0,
            slots: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: &str, param: &Tensor, lr: f64, weight_decay: f64) {
        self.add_masked_param(name, param, lr, weight_decay, None);
    }

    /// Register a parameter where only `mask == true` entries may change.
    pub fn add_masked_param(
        &mut self,
        name: &str,
        param: &Tensor,
        lr: f64,
        weight_decay: f64,
        mask: Option<Vec<bool>>,
    ) {
        let n = param.numel();
        if let Some(m) = &mask {
            assert_eq!(m.len(), n, "mask length mismatch for {name}");
        }
        self.slots.push(Slot {
            name: name.to_string(),
            param: param.clone(),
            lr,
            weight_decay,
            mask,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_count(&self) -> usize {
        self.slots.iter().map(|s| s.param.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for slot in &self.slots {
            slot.param.zero_grad();
        }
    }

    /// One optimizer update: clip gradients by global norm, update moments
    /// with bias correction, apply the decoupled decay and the step, then
    /// zero every registered gradient.
    pub fn step(&mut self) -> Result<()> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let grad = slot.param.grad().ok_or_else(|| {
                Error::Usage(format!("adamw step: parameter `{}` has no gradient", slot.name))
            })?;
            grads.push(grad);
        }

        // Global-norm clipping over trainable entries, before any moment update.
        let mut sq_norm = 0.0;
        for (slot, grad) in self.slots.iter().zip(&grads) {
            for (i, g) in grad.iter().enumerate() {
                if slot.mask.as_ref().map_or(true, |m| m[i]) {
                    sq_norm += g * g;
                }
            }
        }
        let norm = sq_norm.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is not finite: {norm}")));
        }
        let scale = if norm > self.config.grad_clip {
            self.config.grad_clip / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);

        for (slot, grad) in self.slots.iter_mut().zip(&grads) {
            let mut data = slot.param.to_vec();
            for i in 0..data.len() {
                if let Some(mask) = &slot.mask {
                    if !mask[i] {
                        continue;
                    }
                }
                let g = grad[i] * scale;
                slot.first_moment[i] =
                    self.config.beta1 * slot.first_moment[i] + (1.0 - self.config.beta1) * g;
                slot.second_moment[i] =
                    self.config.beta2 * slot.second_moment[i] + (1.0 - self.config.beta2) * g * g;
                let m_hat = slot.first_moment[i] / bc1;
                let v_hat = slot.second_moment[i] / bc2;
                let prev = data[i];
                data[i] = prev
                    - slot.lr * (m_hat / (v_hat.sqrt() + self.config.eps) + slot.weight_decay * prev);
            }
            slot.param.set_data(&data);
            slot.param.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_param_unchanged() {
        let p = Tensor::from_vec(&[2], vec![1.5, -2.5]).unwrap();
        p.set_requires_grad(true);
        p.accumulate_grad(&[0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.add_param("p", &p, 0.1, 0.0);
        opt.step().unwrap();
        assert_eq!(p.to_vec(), vec![1.5, -2.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected moments cancel to g/|g| on step one
        let p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        p.set_requires_grad(true);
        p.accumulate_grad(&[1.0]);
        let mut opt = AdamW::new(AdamWConfig {
            grad_clip: 10.0,
            ..AdamWConfig::default()
        });
        opt.add_param("p", &p, 0.1, 0.0);
        opt.step().unwrap();
        let v = p.to_vec()[0];
        assert!((v + 0.1).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn clipping_scales_by_global_norm() {
        // ||g|| = 10 with clip 1.0 -> effective grads scaled by 0.1
        let p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        p.set_requires_grad(true);
        let g = [6.0, 8.0];
        p.accumulate_grad(&g);
        let q = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        q.set_requires_grad(true);
        q.accumulate_grad(&[0.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.add_param("p", &p, 0.1, 0.0);
        opt.add_param("q", &q, 0.1, 0.0);
        opt.step().unwrap();
        // After scaling, both entries of p see nonzero grads in ratio 3:4; the
        // Adam step normalizes magnitude, so verify via the moments instead.
        let m = &opt.slots[0].first_moment;
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-12);
        assert!((m[1] - 0.1 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_a_usage_error_naming_the_param() {
        let p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.add_param("layer.weight", &p, 0.1, 0.0);
        let err = opt.step().unwrap_err();
        assert!(err.to_string().contains("layer.weight"), "{err}");
    }

    #[test]
    fn masked_entries_never_move_even_with_decay() {
        let p = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        p.set_requires_grad(true);
        p.accumulate_grad(&[1.0, 1.0, 1.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.add_masked_param("p", &p, 0.1, 0.1, Some(vec![true, false, true]));
        opt.step().unwrap();
        let v = p.to_vec();
        assert_ne!(v[0], 1.0);
        assert_eq!(v[1].to_bits(), 2.0f64.to_bits());
        assert_ne!(v[2], 3.0);
    }

    #[test]
    fn grads_zeroed_after_step() {
        let p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        p.set_requires_grad(true);
        p.accumulate_grad(&[1.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.add_param("p", &p, 0.1, 0.0);
        opt.step().unwrap();
        assert!(p.grad().is_none());
    }
}
