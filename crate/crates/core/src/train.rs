//! Adam training loop over freshly generated synthetic samples.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::model::{make_flow_pair, ForwardOptions, ModelConfig, ModelParams, PromoDiT};
use crate::pipeline::{build_conditioning, loss_weights, target_latent, CondSettings};
use crate::sampler::initial_noise;
use crate::synth::{gen_sample, SynthConfig};

/// First seed of the held-out range; training draws seeds below it.
pub const HELD_OUT_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub cond: CondSettings,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr` after cosine decay.
    pub min_lr_frac: f64,
    pub grad_clip: f64,
    pub lambda: f64,
    pub weighted_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            cond: CondSettings::default(),
            batch: 4,
            steps: 2000,
            lr: 3e-3,
            warmup: 100,
            min_lr_frac: 0.1,
            grad_clip: 1.0,
            lambda: 0.5,
            weighted_loss: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        if self.synth.patch_size != self.cond.patch {
            return Err(Error::InvalidConfig("dataset and conditioning patch sizes differ"));
        }
        if self.model.token_dim != crate::codec::token_dim(self.cond.patch) {
            return Err(Error::InvalidConfig("model token_dim does not match the patch size"));
        }
        if self.batch == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("batch and lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must be in [0, 1)"));
        }
        Ok(())
    }

    /// Linear warmup, then cosine decay to `min_lr_frac * lr`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1);
        let p = ((step - self.warmup) as f64 / span as f64).min(1.0);
        let cos = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p));
        self.lr * (self.min_lr_frac + (1.0 - self.min_lr_frac) * cos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ModelParams<f32>,
    v: ModelParams<f32>,
    t: u64,
}

impl Adam {
    pub fn new(like: &ModelParams<f32>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// Restores moments and step count, e.g. from a checkpoint.
    pub fn from_state(m: ModelParams<f32>, v: ModelParams<f32>, t: u64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t,
        }
    }

    /// First and second moments and the number of updates taken.
    pub fn state(&self) -> (&ModelParams<f32>, &ModelParams<f32>, u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        let iter = params
            .params_mut()
            .iter_mut()
            .zip(grads.params())
            .zip(self.m.params_mut().iter_mut().zip(self.v.params_mut().iter_mut()));
        for ((p, g), (m, v)) in iter {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step * m.data[i] / ((v.data[i] / c2).sqrt() + eps);
            }
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: PromoDiT<f32>,
    pub adam: Adam,
    pub step: usize,
    grads: ModelParams<f32>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = PromoDiT::new(cfg.model, cfg.seed)?;
        Ok(Self::from_model(cfg, model))
    }

    pub fn from_model(cfg: TrainConfig, model: PromoDiT<f32>) -> Self {
        let adam = Adam::new(&model.params);
        let grads = model.params.zeros_like();
        Self {
            cfg,
            model,
            adam,
            step: 0,
            grads,
        }
    }

    /// Training seed of batch item `b` at step `step`.
    pub fn sample_seed(&self, step: usize, b: usize) -> u64 {
        let base = self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) % (HELD_OUT_SEED_BASE / 2);
        (base + (step * self.cfg.batch + b) as u64) % HELD_OUT_SEED_BASE
    }

    /// One optimizer step on a fresh batch; returns the mean batch loss.
    pub fn train_step(&mut self) -> Result<f32> {
        let cfg = &self.cfg;
        self.grads.fill_zero();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((self.step as u64 + 1) << 20));
        let scale = 1.0 / cfg.batch as f32;
        let mut total = 0.0f32;
        for b in 0..cfg.batch {
            let sample = gen_sample(self.sample_seed(self.step, b), &cfg.synth)?;
            let cond = build_conditioning(&sample, cfg.cond, false)?;
            let z0 = target_latent(&sample, cfg.cond.patch)?;
            let eps: TokenGrid<f32> = initial_noise(z0.shape(), rng.random());
            let t: f32 = rng.random_range(0.0..1.0);
            let pair = make_flow_pair(&z0, &eps, t)?;
            let weights = if cfg.weighted_loss {
                Some(loss_weights(&sample, cfg.cond.patch, cfg.lambda)?.weights)
            } else {
                None
            };
            let prep = self.model.prepare((z0.h, z0.w), &cond)?;
            total += self.model.loss_and_grad(
                &prep,
                &pair,
                &cond,
                weights.as_deref(),
                &ForwardOptions::default(),
                scale,
                &mut self.grads,
            )?;
        }
        if cfg.grad_clip > 0.0 {
            let norm = libm::sqrt(self.grads.sq_norm() as f64);
            if norm > cfg.grad_clip {
                self.grads.scale((cfg.grad_clip / norm) as f32);
            }
        }
        let lr = cfg.lr_at(self.step);
        self.adam.step(&mut self.model.params, &self.grads, lr);
        self.step += 1;
        Ok(total * scale)
    }

    /// Runs up to `cfg.steps`, returning the per-step losses.
    pub fn run(&mut self, mut on_step: impl FnMut(usize, f32)) -> Result<Vec<f32>> {
        let mut log = Vec::with_capacity(self.cfg.steps);
        while self.step < self.cfg.steps {
            let l = self.train_step()?;
            on_step(self.step - 1, l);
            log.push(l);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            synth: SynthConfig {
                height: 32,
                width: 32,
                garment_size: 16,
                ..SynthConfig::default()
            },
            model: ModelConfig {
                d_model: 24,
                n_layers: 1,
                n_heads: 2,
                ..ModelConfig::default()
            },
            batch: 2,
            steps: 6,
            warmup: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let c = TrainConfig::default();
        assert!(c.lr_at(0) < c.lr_at(50));
        assert!((c.lr_at(c.warmup) - c.lr).abs() < 1e-12);
        assert!((c.lr_at(c.steps) - c.lr * c.min_lr_frac).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_moves_params() {
        let mut a = Trainer::new(small()).unwrap();
        let init = a.model.clone();
        let la = a.run(|_, _| {}).unwrap();
        let mut b = Trainer::new(small()).unwrap();
        let lb = b.run(|_, _| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.model, b.model);
        assert_ne!(a.model, init);
        assert!(la.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn zero_steps_keeps_init() {
        let mut t = Trainer::new(TrainConfig { steps: 0, ..small() }).unwrap();
        let init = t.model.clone();
        assert!(t.run(|_, _| {}).unwrap().is_empty());
        assert_eq!(t.model, init);
    }

    #[test]
    fn rejects_mismatched_patch() {
        let mut c = small();
        c.cond.patch = 8;
        assert!(Trainer::new(c).is_err());
    }
}
