//! Noise schedule, forward corruption, the ε-prediction training loss, and
//! samplers with classifier-free guidance.
//!
//! The same loss kernel serves pretraining, concept training, mask training,
//! and partitioned fine-tuning; callers differ only in what they mark
//! trainable and in how the condition is assembled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// β_t sequence with its cumulative-product table.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Linear β interpolation from `beta_start` to `beta_end` over `t_steps`.
pub fn build_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(Error::Config("schedule: T must be at least 1".to_string()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "schedule: need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let mut alphas_cumprod = Vec::with_capacity(t_steps);
    let mut product = 1.0;
    for beta in &betas {
        product *= 1.0 - beta;
        alphas_cumprod.push(product);
    }
    Ok(NoiseSchedule { betas, alphas_cumprod })
}

/// Closed-form forward marginal: `x_t = sqrt(ᾱ_t) x0 + sqrt(1-ᾱ_t) eps`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if t >= schedule.len() {
        return Err(Error::Config(format!(
            "q_sample: t={t} out of schedule length {}",
            schedule.len()
        )));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::Dim(format!(
            "q_sample: x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let abar = schedule.alphas_cumprod[t];
    x0.mul_scalar(abar.sqrt()).add(&eps.mul_scalar((1.0 - abar).sqrt()))
}

/// Anything that predicts ε from a noisy latent, a timestep, and an optional
/// condition. `None` selects the model's unconditional branch.
pub trait NoisePredictor {
    fn predict(&self, x_t: &Tensor, t: usize, condition: Option<&Tensor>) -> Result<Tensor>;
}

/// Draw `(t, eps)` and return the ε-regression loss for one latent.
///
/// Differentiable with respect to model parameters and to the condition
/// embeddings (the condition tensor may carry its own graph).
pub fn training_loss<M: NoisePredictor>(
    model: &M,
    x0: &Tensor,
    condition: Option<&Tensor>,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let t = rng.gen_range(0..schedule.len());
    let eps = Tensor::from_vec(&x0.shape(), rng::normal_vec(rng, x0.numel()))?;
    loss_at(model, x0, condition, schedule, t, &eps)
}

/// The loss kernel with `t` and `eps` pinned; used directly by gradient
/// verification where the draw must be frozen.
pub fn loss_at<M: NoisePredictor>(
    model: &M,
    x0: &Tensor,
    condition: Option<&Tensor>,
    schedule: &NoiseSchedule,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    let x_t = q_sample(x0, t, eps, schedule)?;
    let predicted = model.predict(&x_t, t, condition)?;
    predicted.mse(eps)
}

/// Classifier-free guidance: `ε_u + w (ε_c - ε_u)`.
///
/// `w == 1` short-circuits to the conditional branch and `w == 0` to the
/// unconditional branch, so those paths are bit-identical to single-branch
/// prediction and skip the unused forward entirely.
pub fn cfg_predict<M: NoisePredictor>(
    model: &M,
    x_t: &Tensor,
    t: usize,
    condition: &Tensor,
    guidance_scale: f64,
) -> Result<Tensor> {
    if guidance_scale == 1.0 {
        return model.predict(x_t, t, Some(condition));
    }
    if guidance_scale == 0.0 {
        return model.predict(x_t, t, None);
    }
    let cond = model.predict(x_t, t, Some(condition))?;
    let uncond = model.predict(x_t, t, None)?;
    uncond.add(&cond.sub(&uncond)?.mul_scalar(guidance_scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Stochastic reverse steps with the schedule-posterior variance.
    Ancestral,
    /// No per-step noise injection; reproducible trajectories.
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub guidance_scale: f64,
    pub mode: SamplerMode,
    pub seed: u64,
    /// Optional symmetric clamp applied to the x0 estimate each step.
    /// Latents are bounded by construction, so this guards early-sampling
    /// excursions; `None` disables it.
    pub clamp_x0: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 200,
            guidance_scale: 7.0,
            mode: SamplerMode::Deterministic,
            seed: 0,
            clamp_x0: None,
        }
    }
}

/// One reverse update from ᾱ_t to ᾱ_prev given the ε estimate.
///
/// `sigma` is the per-step noise scale (0 in deterministic mode); `noise`
/// must be a standard-normal draw when `sigma > 0`. Exposed so tests can
/// replay trajectories step by step.
pub fn reverse_step(
    x_t: &[f64],
    eps_hat: &[f64],
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
    sigma: f64,
    noise: Option<&[f64]>,
    clamp_x0: Option<f64>,
) -> Vec<f64> {
    let sqrt_ab_t = alpha_bar_t.sqrt();
    let sqrt_om_t = (1.0 - alpha_bar_t).sqrt();
    let dir_scale = (1.0 - alpha_bar_prev - sigma * sigma).max(0.0).sqrt();
    let sqrt_ab_prev = alpha_bar_prev.sqrt();
    x_t.iter()
        .enumerate()
        .map(|(i, &xv)| {
            let e = eps_hat[i];
            let mut x0_hat = (xv - sqrt_om_t * e) / sqrt_ab_t;
            if let Some(c) = clamp_x0 {
                x0_hat = x0_hat.clamp(-c, c);
            }
            let mut out = sqrt_ab_prev * x0_hat + dir_scale * e;
            if sigma > 0.0 {
                out += sigma * noise.expect("noise required when sigma > 0")[i];
            }
            out
        })
        .collect()
}

/// Evenly spaced timestep ladder for a sub-sampled reverse pass, descending.
pub fn timestep_ladder(t_total: usize, num_steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..num_steps)
        .map(|i| (i * t_total) / num_steps)
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Iterate from seeded Gaussian noise down to an x0 estimate.
///
/// Pass `condition = None` for a purely unconditional trajectory. A fixed
/// seed gives a bit-identical output; guidance_scale 1 never evaluates the
/// unconditional branch.
pub fn sample<M: NoisePredictor>(
    model: &M,
    condition: Option<&Tensor>,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    shape: &[usize],
) -> Result<Tensor> {
    if config.num_steps == 0 || config.num_steps > schedule.len() {
        return Err(Error::Config(format!(
            "sampler: num_steps {} outside 1..={}",
            config.num_steps,
            schedule.len()
        )));
    }
    no_grad(|| {
        let mut draw = rng::stream(config.seed, "sampler", 0);
        let n: usize = shape.iter().product();
        let mut x = rng::normal_vec(&mut draw, n);
        let ladder = timestep_ladder(schedule.len(), config.num_steps);
        for (step, &t) in ladder.iter().enumerate() {
            let alpha_bar_t = schedule.alphas_cumprod[t];
            let alpha_bar_prev = if step + 1 < ladder.len() {
                schedule.alphas_cumprod[ladder[step + 1]]
            } else {
                1.0
            };
            let x_t = Tensor::from_vec(shape, x.clone())?;
            let eps_hat = match condition {
                Some(cond) => cfg_predict(model, &x_t, t, cond, config.guidance_scale)?,
                None => model.predict(&x_t, t, None)?,
            };
            let sigma = match config.mode {
                SamplerMode::Deterministic => 0.0,
                SamplerMode::Ancestral => {
                    // posterior variance for the (possibly strided) step
                    let beta_step = 1.0 - alpha_bar_t / alpha_bar_prev;
                    ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t) * beta_step).max(0.0).sqrt()
                }
            };
            let noise = (sigma > 0.0).then(|| rng::normal_vec(&mut draw, n));
            x = reverse_step(
                &x,
                &eps_hat.data(),
                alpha_bar_t,
                alpha_bar_prev,
                sigma,
                noise.as_deref(),
                config.clamp_x0,
            );
        }
        Tensor::from_vec(shape, x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test double that always predicts the stored tensor.
    struct FixedEps(Tensor);
    impl NoisePredictor for FixedEps {
        fn predict(&self, _x: &Tensor, _t: usize, _c: Option<&Tensor>) -> Result<Tensor> {
            Ok(self.0.mul_scalar(1.0))
        }
    }

    /// Test double that echoes zeros.
    struct ZeroModel;
    impl NoisePredictor for ZeroModel {
        fn predict(&self, x: &Tensor, _t: usize, _c: Option<&Tensor>) -> Result<Tensor> {
            Ok(Tensor::zeros(&x.shape()))
        }
    }

    #[test]
    fn schedule_single_step() {
        let s = build_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas, vec![0.5]);
        assert_eq!(s.alphas_cumprod, vec![0.5]);
    }

    #[test]
    fn schedule_cumulative_product_by_hand() {
        let s = build_schedule(3, 0.1, 0.3).unwrap();
        assert!((s.betas[1] - 0.2).abs() < 1e-15);
        let expected = [0.9, 0.72, 0.504];
        for (a, e) in s.alphas_cumprod.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        // strictly decreasing, in (0, 1)
        for w in s.alphas_cumprod.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.alphas_cumprod.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn schedule_vanishing_betas_leave_signal() {
        let s = build_schedule(10, 1e-12, 1e-12).unwrap();
        assert!(s.alphas_cumprod.iter().all(|&a| (a - 1.0).abs() < 1e-10));
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(5, 0.0, 0.2).is_err());
        assert!(build_schedule(5, 0.3, 0.2).is_err());
        assert!(build_schedule(5, 0.3, 1.0).is_err());
    }

    #[test]
    fn q_sample_zero_eps_scales_x0() {
        let s = build_schedule(3, 0.1, 0.3).unwrap();
        let x0 = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let eps = Tensor::zeros(&[2]);
        let x = q_sample(&x0, 1, &eps, &s).unwrap();
        let scale = 0.72f64.sqrt();
        assert!((x.to_vec()[0] - scale).abs() < 1e-12);
        assert!((x.to_vec()[1] + 2.0 * scale).abs() < 1e-12);
    }

    #[test]
    fn q_sample_hand_value() {
        // x0 = 1, eps = 1, abar = 0.72 -> 0.8485 + 0.5292
        let s = build_schedule(3, 0.1, 0.3).unwrap();
        let x0 = Tensor::scalar(1.0);
        let eps = Tensor::scalar(1.0);
        let x = q_sample(&x0, 1, &eps, &s).unwrap();
        assert!((x.item() - 1.3777).abs() < 1e-4);
    }

    #[test]
    fn q_sample_near_identity_when_betas_vanish() {
        let s = build_schedule(4, 1e-12, 1e-12).unwrap();
        let x0 = Tensor::from_vec(&[3], vec![0.5, -0.25, 2.0]).unwrap();
        let eps = Tensor::zeros(&[3]);
        let x = q_sample(&x0, 3, &eps, &s).unwrap();
        for (a, b) in x.to_vec().iter().zip(x0.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn q_sample_shape_mismatch() {
        let s = build_schedule(2, 0.1, 0.2).unwrap();
        let x0 = Tensor::zeros(&[2]);
        let eps = Tensor::zeros(&[3]);
        assert!(matches!(q_sample(&x0, 0, &eps, &s), Err(Error::Dim(_))));
    }

    #[test]
    fn loss_zero_for_oracle_model() {
        let s = build_schedule(5, 0.1, 0.2).unwrap();
        let x0 = Tensor::from_vec(&[4], vec![0.3, -0.1, 0.2, 0.9]).unwrap();
        let eps = Tensor::from_vec(&[4], vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let model = FixedEps(eps.mul_scalar(1.0));
        let loss = loss_at(&model, &x0, None, &s, 2, &eps).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn loss_of_zero_model_is_unit_noise_variance() {
        // E ||eps||^2 / d = 1; check the Monte-Carlo mean within 3 standard errors
        let s = build_schedule(10, 0.1, 0.2).unwrap();
        let model = ZeroModel;
        let x0 = Tensor::zeros(&[8]);
        let mut rng = rng::stream(42, "mc-loss", 0);
        let draws = 10_000usize;
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            values.push(training_loss(&model, &x0, None, &s, &mut rng).unwrap().item());
        }
        let mean: f64 = values.iter().sum::<f64>() / draws as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn loss_deterministic_under_fixed_seed() {
        let s = build_schedule(10, 0.1, 0.2).unwrap();
        let model = ZeroModel;
        let x0 = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = training_loss(&model, &x0, None, &s, &mut rng::stream(9, "l", 0))
            .unwrap()
            .item();
        let b = training_loss(&model, &x0, None, &s, &mut rng::stream(9, "l", 0))
            .unwrap()
            .item();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cfg_identities() {
        let s_cond = Tensor::scalar(2.0);
        struct Branchy;
        impl NoisePredictor for Branchy {
            fn predict(&self, _x: &Tensor, _t: usize, c: Option<&Tensor>) -> Result<Tensor> {
                Ok(Tensor::scalar(if c.is_some() { 2.0 } else { 1.0 }))
            }
        }
        let x = Tensor::scalar(0.0);
        let w1 = cfg_predict(&Branchy, &x, 0, &s_cond, 1.0).unwrap();
        assert_eq!(w1.item(), 2.0);
        let w0 = cfg_predict(&Branchy, &x, 0, &s_cond, 0.0).unwrap();
        assert_eq!(w0.item(), 1.0);
        let w7 = cfg_predict(&Branchy, &x, 0, &s_cond, 7.0).unwrap();
        assert_eq!(w7.item(), 8.0);
    }

    #[test]
    fn cfg_scale_one_never_calls_uncond() {
        struct PanicOnUncond;
        impl NoisePredictor for PanicOnUncond {
            fn predict(&self, x: &Tensor, _t: usize, c: Option<&Tensor>) -> Result<Tensor> {
                assert!(c.is_some(), "unconditional branch must not run at w=1");
                Ok(Tensor::zeros(&x.shape()))
            }
        }
        let cond = Tensor::scalar(1.0);
        let x = Tensor::scalar(0.0);
        cfg_predict(&PanicOnUncond, &x, 0, &cond, 1.0).unwrap();
    }

    #[test]
    fn sampler_deterministic_and_seed_sensitive() {
        let s = build_schedule(20, 1e-3, 0.2).unwrap();
        let model = ZeroModel;
        let config = SamplerConfig {
            num_steps: 10,
            guidance_scale: 0.0,
            mode: SamplerMode::Deterministic,
            seed: 7,
            clamp_x0: None,
        };
        let a = sample(&model, None, &config, &s, &[4, 2]).unwrap();
        let b = sample(&model, None, &config, &s, &[4, 2]).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        let other = SamplerConfig { seed: 8, ..config };
        let c = sample(&model, None, &other, &s, &[4, 2]).unwrap();
        assert_ne!(a.to_vec(), c.to_vec());
    }

    #[test]
    fn deterministic_zero_model_is_rescaled_start_noise() {
        // eps_hat = 0 collapses every step to x / sqrt(abar ratio), so the
        // final output is start_noise / sqrt(abar_T).
        let s = build_schedule(16, 1e-3, 0.2).unwrap();
        let config = SamplerConfig {
            num_steps: 16,
            guidance_scale: 0.0,
            mode: SamplerMode::Deterministic,
            seed: 3,
            clamp_x0: None,
        };
        let out = sample(&ZeroModel, None, &config, &s, &[3]).unwrap();
        let mut start = rng::normal_vec(&mut rng::stream(3, "sampler", 0), 3);
        let scale = 1.0 / s.alphas_cumprod[15].sqrt();
        for v in start.iter_mut() {
            *v *= scale;
        }
        for (a, b) in out.to_vec().iter().zip(start) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn single_step_inversion_matches_hand_computation() {
        // T=1: x0_hat = (x_1 - sqrt(1-abar) eps_hat) / sqrt(abar)
        let s = build_schedule(1, 0.36, 0.36).unwrap(); // abar = 0.64
        let eps_hat = Tensor::scalar(0.25);
        let model = FixedEps(eps_hat);
        let config = SamplerConfig {
            num_steps: 1,
            guidance_scale: 0.0,
            mode: SamplerMode::Deterministic,
            seed: 11,
            clamp_x0: None,
        };
        let out = sample(&model, None, &config, &s, &[1]).unwrap();
        let x1 = rng::normal_vec(&mut rng::stream(11, "sampler", 0), 1)[0];
        let expected = (x1 - 0.36f64.sqrt() * 0.25) / 0.64f64.sqrt();
        assert!((out.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn sampler_rejects_too_many_steps() {
        let s = build_schedule(4, 0.1, 0.2).unwrap();
        let config = SamplerConfig {
            num_steps: 5,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            sample(&ZeroModel, None, &config, &s, &[2]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn marginal_consistency_one_step_kernel() {
        // Iterating q(x_t | x_{t-1}) must reproduce the closed-form marginal.
        let s = build_schedule(50, 1e-3, 0.1).unwrap();
        let x0 = 1.0;
        let draws = 10_000;
        let mut rng = rng::stream(21, "marginal", 0);
        for &t in &[1usize, 25, 49] {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..draws {
                let mut x = x0;
                for step in 0..=t {
                    let beta = s.betas[step];
                    x = (1.0 - beta).sqrt() * x + beta.sqrt() * rng::normal(&mut rng);
                }
                sum += x;
                sumsq += x * x;
            }
            let n = draws as f64;
            let mean = sum / n;
            let var = sumsq / n - mean * mean;
            let abar = s.alphas_cumprod[t];
            let exp_mean = abar.sqrt() * x0;
            let exp_var = 1.0 - abar;
            let se_mean = exp_var.sqrt() / n.sqrt();
            let se_var = exp_var * (2.0 / (n - 1.0)).sqrt();
            assert!(
                (mean - exp_mean).abs() < 3.0 * se_mean,
                "t={t}: mean {mean} vs {exp_mean}"
            );
            assert!(
                (var - exp_var).abs() < 3.0 * se_var,
                "t={t}: var {var} vs {exp_var}"
            );
        }
        let _ = &mut rng;
    }
}
