//! Euler integration of the learned velocity field, with the condition KV
//! cache variant and the token accounting used by the benchmark.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::SegmentKind;
use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::model::{Conditioning, ForwardOptions, Prepared, PromoDiT};
use crate::real::Real;

pub const DEFAULT_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerMode {
    /// Every step recomputes every token with condition rows modulated at `t_k`.
    Full,
    /// Every step recomputes every token with condition rows pinned at `t_0`.
    Frozen,
    /// Condition keys/values captured at `t_0` and reused.
    Cached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: Vec<f64>,
    pub mode: SamplerMode,
    pub seed: u64,
}

impl SamplerConfig {
    /// Uniform schedule `1, 1 - 1/S, ..., 0`.
    pub fn uniform(steps: usize, mode: SamplerMode, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("sampler needs at least one step"));
        }
        let schedule = (0..=steps).map(|k| 1.0 - k as f64 / steps as f64).collect();
        Ok(Self { schedule, mode, seed })
    }

    pub fn steps(&self) -> usize {
        self.schedule.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.len() < 2 || s[0] != 1.0 || s[s.len() - 1] != 0.0 {
            return Err(Error::InvalidConfig("schedule must run from 1 to 0"));
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("schedule must be strictly decreasing"));
        }
        Ok(())
    }
}

/// Seeded standard-normal starting latent.
pub fn initial_noise<T: Real>(shape: (usize, usize, usize), seed: u64) -> TokenGrid<T> {
    let (h, w, d) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(v)
        })
        .collect();
    TokenGrid { h, w, d, data }
}

fn euler_update<T: Real>(z: &mut TokenGrid<T>, v: &TokenGrid<T>, dt: f64) {
    let dt = T::from_f64(dt);
    for (a, &b) in z.data.iter_mut().zip(&v.data) {
        *a -= dt * b;
    }
}

/// Integrates from `z_T` (seeded noise) at `t = 1` to `t = 0`.
///
/// `Cached` mode runs a full capturing forward at `t_0`, then latent and style
/// rows only. Its result equals `Frozen` mode exactly.
pub fn euler_sample<T: Real>(
    model: &PromoDiT<T>,
    cond: &Conditioning<T>,
    latent_shape: (usize, usize),
    cfg: &SamplerConfig,
) -> Result<TokenGrid<T>> {
    cfg.validate()?;
    let prep = model.prepare(latent_shape, cond)?;
    let z = initial_noise(
        (latent_shape.0, latent_shape.1, model.cfg().token_dim),
        cfg.seed,
    );
    sample_from(model, &prep, cond, z, cfg)
}

/// Same as [`euler_sample`] from an explicit starting latent.
pub fn sample_from<T: Real>(
    model: &PromoDiT<T>,
    prep: &Prepared<T>,
    cond: &Conditioning<T>,
    mut z: TokenGrid<T>,
    cfg: &SamplerConfig,
) -> Result<TokenGrid<T>> {
    cfg.validate()?;
    let s = &cfg.schedule;
    let t0 = T::from_f64(s[0]);
    match cfg.mode {
        SamplerMode::Full | SamplerMode::Frozen => {
            let opts = match cfg.mode {
                SamplerMode::Full => ForwardOptions::default(),
                _ => ForwardOptions::frozen(t0),
            };
            for k in 0..cfg.steps() {
                let v = model.forward_prepared(prep, &z, T::from_f64(s[k]), cond, &opts)?;
                euler_update(&mut z, &v, s[k] - s[k + 1]);
            }
        }
        SamplerMode::Cached => {
            let (v, cache) = model.forward_capture(prep, &z, t0, cond, &ForwardOptions::frozen(t0))?;
            euler_update(&mut z, &v, s[0] - s[1]);
            for k in 1..cfg.steps() {
                let v = model.forward_cached(prep, &z, T::from_f64(s[k]), &cond.style_tokens, &cache)?;
                euler_update(&mut z, &v, s[k] - s[k + 1]);
            }
        }
    }
    Ok(z)
}

/// Cached-mode sampling; equals frozen-condition [`euler_sample`].
pub fn cached_sample<T: Real>(
    model: &PromoDiT<T>,
    cond: &Conditioning<T>,
    latent_shape: (usize, usize),
    cfg: &SamplerConfig,
) -> Result<TokenGrid<T>> {
    if cfg.mode != SamplerMode::Cached {
        return Err(Error::InvalidConfig("cached_sample requires cached mode"));
    }
    euler_sample(model, cond, latent_shape, cfg)
}

/// Per-segment token counts and per-run work for a sampling workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenAccount {
    pub latent: usize,
    pub text: usize,
    pub cond: usize,
    pub steps: usize,
}

impl TokenAccount {
    pub fn from_prepared<T>(prep: &Prepared<T>, steps: usize) -> Self {
        Self {
            latent: prep.layout.len_of(SegmentKind::Latent),
            text: prep.layout.len_of(SegmentKind::Style),
            cond: prep.layout.len_of(SegmentKind::Condition),
            steps,
        }
    }

    pub fn total(&self) -> usize {
        self.latent + self.text + self.cond
    }

    pub fn live(&self) -> usize {
        self.latent + self.text
    }

    /// Query rows processed at step `k` (0-based).
    pub fn queries_at(&self, mode: SamplerMode, k: usize) -> usize {
        match mode {
            SamplerMode::Cached if k > 0 => self.live(),
            _ => self.total(),
        }
    }

    /// Query-key score pairs per head per layer at step `k`: live rows see
    /// every token, each condition row sees only its own group.
    pub fn score_pairs_at(&self, mode: SamplerMode, k: usize, group_lens: &[usize]) -> usize {
        let live = self.live() * self.total();
        match mode {
            SamplerMode::Cached if k > 0 => live,
            _ => live + group_lens.iter().map(|n| n * n).sum::<usize>(),
        }
    }

    /// Attention FLOP estimate for a whole run: `QK^T` plus `PV`, each
    /// `2 * head_dim` per pair, summed over heads and layers.
    pub fn attention_flops(&self, mode: SamplerMode, group_lens: &[usize], d_model: usize, n_layers: usize) -> u64 {
        (0..self.steps)
            .map(|k| 4 * d_model as u64 * n_layers as u64 * self.score_pairs_at(mode, k, group_lens) as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rope::{ConditionGroup, ConditionKind};
    use rand::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            token_dim: 6,
            d_model: 12,
            n_heads: 2,
            n_layers: 2,
            time_freq_dim: 8,
            ..Default::default()
        }
    }

    fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> TokenGrid<f32> {
        TokenGrid::from_data(h, w, 6, (0..h * w * 6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(n_garments: usize, style: bool) -> (PromoDiT<f32>, Conditioning<f32>) {
        let mut m = PromoDiT::new(cfg(), 0).unwrap();
        m.params.randomize(9, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut groups = alloc::vec![ConditionGroup::new(1, ConditionKind::Spatial, grid(&mut rng, 2, 2), (4, 4), 0.0).unwrap()];
        for g in 0..n_garments {
            groups.push(ConditionGroup::new(3 + g as u32, ConditionKind::Garment, grid(&mut rng, 2, 2), (4, 4), 4.0).unwrap());
        }
        let style_tokens = if style { alloc::vec![1, 2, 3, 4, 5, 0, 0, 0, 0, 0] } else { Vec::new() };
        (m, Conditioning { style_tokens, groups })
    }

    #[test]
    fn schedule_validation() {
        assert!(SamplerConfig::uniform(0, SamplerMode::Full, 0).is_err());
        let c = SamplerConfig::uniform(4, SamplerMode::Full, 0).unwrap();
        assert_eq!(c.schedule, alloc::vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        let mut bad = c.clone();
        bad.schedule = alloc::vec![1.0, 0.5, 0.5, 0.0];
        assert!(bad.validate().is_err());
        bad.schedule = alloc::vec![0.9, 0.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_model_returns_noise() {
        let m = PromoDiT::<f32>::new(cfg(), 0).unwrap();
        let c = Conditioning {
            style_tokens: Vec::new(),
            groups: Vec::new(),
        };
        let sc = SamplerConfig::uniform(5, SamplerMode::Full, 11).unwrap();
        let z = euler_sample(&m, &c, (4, 4), &sc).unwrap();
        assert_eq!(z, initial_noise((4, 4, 6), 11));
    }

    #[test]
    fn single_step_is_one_euler_update() {
        let (m, c) = setup(1, true);
        let sc = SamplerConfig::uniform(1, SamplerMode::Full, 2).unwrap();
        let zt = initial_noise::<f32>((4, 4, 6), 2);
        let v = m.forward(&zt, 1.0, &c, &ForwardOptions::default()).unwrap();
        let z0 = euler_sample(&m, &c, (4, 4), &sc).unwrap();
        for ((a, b), c) in z0.data.iter().zip(&zt.data).zip(&v.data) {
            assert_eq!(*a, b - c);
        }
        let cached = SamplerConfig { mode: SamplerMode::Cached, ..sc };
        assert_eq!(cached_sample(&m, &c, (4, 4), &cached).unwrap(), z0);
    }

    #[test]
    fn cached_equals_frozen() {
        for (n, style) in [(1, true), (2, false), (3, true)] {
            let (m, c) = setup(n, style);
            let frozen = SamplerConfig::uniform(20, SamplerMode::Frozen, 5).unwrap();
            let cached = SamplerConfig {
                mode: SamplerMode::Cached,
                ..frozen.clone()
            };
            let a = euler_sample(&m, &c, (4, 4), &frozen).unwrap();
            let b = cached_sample(&m, &c, (4, 4), &cached).unwrap();
            assert_eq!(a, b);
            let full = euler_sample(&m, &c, (4, 4), &SamplerConfig { mode: SamplerMode::Full, ..frozen }).unwrap();
            assert_ne!(a, full);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (m, c) = setup(2, true);
        let sc = SamplerConfig::uniform(6, SamplerMode::Cached, 8).unwrap();
        assert_eq!(euler_sample(&m, &c, (4, 4), &sc).unwrap(), euler_sample(&m, &c, (4, 4), &sc).unwrap());
        let other = SamplerConfig { seed: 9, ..sc.clone() };
        assert_ne!(euler_sample(&m, &c, (4, 4), &sc).unwrap(), euler_sample(&m, &c, (4, 4), &other).unwrap());
        assert!(cached_sample(&m, &c, (4, 4), &SamplerConfig { mode: SamplerMode::Full, ..sc }).is_err());
    }

    #[test]
    fn token_accounting() {
        let (m, c) = setup(2, true);
        let prep = m.prepare((4, 4), &c).unwrap();
        let acc = TokenAccount::from_prepared(&prep, 20);
        assert_eq!((acc.latent, acc.text, acc.cond), (16, 10, 12));
        assert_eq!(acc.queries_at(SamplerMode::Cached, 0), 38);
        assert_eq!(acc.queries_at(SamplerMode::Cached, 1), 16 + 10);
        assert_eq!(acc.queries_at(SamplerMode::Full, 7), 38);
        let groups = [4, 4, 4];
        assert_eq!(acc.score_pairs_at(SamplerMode::Full, 3, &groups), 26 * 38 + 48);
        assert_eq!(acc.score_pairs_at(SamplerMode::Cached, 3, &groups), 26 * 38);
        assert!(acc.attention_flops(SamplerMode::Cached, &groups, 12, 2) < acc.attention_flops(SamplerMode::Full, &groups, 12, 2));
    }
}
