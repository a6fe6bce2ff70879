//! Wall-clock inference benchmark of the sampler modes on a fixed workload.

use std::time::Instant;

use promo_core::codec::TokenGrid;
use promo_core::model::{Conditioning, PromoDiT};
use promo_core::rope::{ConditionGroup, ConditionKind};
use promo_core::sampler::{initial_noise, sample_from, SamplerConfig, SamplerMode, TokenAccount};
use promo_core::synth::L_TEXT;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::mode_name;
use crate::error::Result;

/// Token layout of a benchmark run. Condition token values are random; only
/// the shapes matter for timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workload {
    pub latent: (usize, usize),
    /// Spatial condition grid; must tile `latent` at an integer factor.
    pub spatial: (usize, usize),
    pub garments: usize,
    pub garment: (usize, usize),
    pub style_len: usize,
}

impl Workload {
    /// 256 latent tokens, merged 8x8 spatial condition and four 8x8 garments
    /// (320 condition tokens), full style prompt.
    pub fn standard() -> Self {
        Self {
            latent: (16, 16),
            spatial: (8, 8),
            garments: 4,
            garment: (8, 8),
            style_len: L_TEXT,
        }
    }

    pub fn condition_tokens(&self) -> usize {
        self.spatial.0 * self.spatial.1 + self.garments * self.garment.0 * self.garment.1
    }

    pub fn conditioning(&self, token_dim: usize, seed: u64) -> Result<Conditioning<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = |(h, w): (usize, usize)| {
            let data = (0..h * w * token_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            TokenGrid::from_data(h, w, token_dim, data)
        };
        let mut groups = vec![ConditionGroup::new(1, ConditionKind::Spatial, grid(self.spatial)?, self.latent, 0.0)?];
        for g in 0..self.garments {
            let tokens = grid(self.garment)?;
            groups.push(ConditionGroup::new(3 + g as u32, ConditionKind::Garment, tokens, self.latent, self.latent.0 as f64)?);
        }
        Ok(Conditioning {
            style_tokens: (0..self.style_len as u32).map(|i| 1 + i % 30).collect(),
            groups,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mode: SamplerMode,
    pub steps: usize,
    pub tokens_latent: usize,
    pub tokens_text: usize,
    pub tokens_cond: usize,
    pub runs: usize,
    pub wall_ms_median: f64,
    pub attention_flops: u64,
    /// Query rows processed per step after the first.
    pub queries_per_step: usize,
}

impl BenchRecord {
    pub fn to_json(&self, config_hash: &str) -> serde_json::Value {
        json!({
            "mode": mode_name(self.mode),
            "steps": self.steps,
            "tokens_latent": self.tokens_latent,
            "tokens_text": self.tokens_text,
            "tokens_cond": self.tokens_cond,
            "runs": self.runs,
            "wall_ms_median": self.wall_ms_median,
            "attention_flops": self.attention_flops,
            "queries_per_step": self.queries_per_step,
            "config_hash": config_hash,
        })
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times `runs` full sampling trajectories per mode on the same workload and
/// starting noise. Runs of different modes are interleaved.
pub fn bench_inference(
    model: &PromoDiT<f32>,
    work: &Workload,
    steps: usize,
    runs: usize,
    modes: &[SamplerMode],
) -> Result<Vec<BenchRecord>> {
    let cfg = model.cfg();
    let cond = work.conditioning(cfg.token_dim, 0)?;
    let prep = model.prepare(work.latent, &cond)?;
    let acc = TokenAccount::from_prepared(&prep, steps);
    let group_lens: Vec<usize> = cond.groups.iter().map(|g| g.tokens.len()).collect();
    let z = initial_noise((work.latent.0, work.latent.1, cfg.token_dim), 1);
    let samplers = modes
        .iter()
        .map(|&m| SamplerConfig::uniform(steps, m, 1))
        .collect::<promo_core::Result<Vec<_>>>()?;
    let mut times = vec![Vec::with_capacity(runs); modes.len()];
    for _ in 0..runs {
        for (i, sc) in samplers.iter().enumerate() {
            let start = Instant::now();
            let out = sample_from(model, &prep, &cond, z.clone(), sc)?;
            times[i].push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
    }
    Ok(modes
        .iter()
        .zip(times.iter_mut())
        .map(|(&mode, t)| BenchRecord {
            mode,
            steps,
            tokens_latent: acc.latent,
            tokens_text: acc.text,
            tokens_cond: acc.cond,
            runs,
            wall_ms_median: median(t),
            attention_flops: acc.attention_flops(mode, &group_lens, cfg.d_model, cfg.n_layers),
            queries_per_step: acc.queries_at(mode, 1),
        })
        .collect())
}

/// Median wall time of `full` divided by that of `cached`.
pub fn speedup(records: &[BenchRecord]) -> Option<f64> {
    let get = |m| records.iter().find(|r| r.mode == m).map(|r| r.wall_ms_median);
    Some(get(SamplerMode::Full)? / get(SamplerMode::Cached)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use promo_core::model::ModelConfig;

    #[test]
    fn standard_workload_shape() {
        let w = Workload::standard();
        assert_eq!(w.condition_tokens(), 320);
        let c = w.conditioning(48, 0).unwrap();
        assert_eq!(c.groups.iter().map(|g| g.tokens.len()).sum::<usize>(), 320);
        assert_eq!(c.style_tokens.len(), L_TEXT);
    }

    #[test]
    fn records_token_accounting() {
        let cfg = ModelConfig {
            d_model: 12,
            n_layers: 1,
            n_heads: 2,
            ..ModelConfig::default()
        };
        let m = PromoDiT::new(cfg, 0).unwrap();
        let w = Workload {
            latent: (4, 4),
            spatial: (2, 2),
            garments: 2,
            garment: (2, 2),
            style_len: 10,
        };
        let r = bench_inference(&m, &w, 3, 3, &[SamplerMode::Full, SamplerMode::Cached]).unwrap();
        assert_eq!((r[0].tokens_latent, r[0].tokens_text, r[0].tokens_cond), (16, 10, 12));
        assert_eq!(r[0].queries_per_step, 38);
        assert_eq!(r[1].queries_per_step, 26);
        assert!(r[1].attention_flops < r[0].attention_flops);
        assert!(speedup(&r).unwrap() > 0.0);
        let j = r[1].to_json("h");
        assert_eq!(j["mode"], "cached");
        assert_eq!(j["tokens_cond"], 12);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
