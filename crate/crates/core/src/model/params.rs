use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rope::{RopeConfig, DEFAULT_THETA};
use crate::synth::STYLE_VOCAB;

/// Transformer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Codec token width (`3 p^2`).
    pub token_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub mlp_ratio: usize,
    /// Width of the sinusoidal timestep features.
    pub time_freq_dim: usize,
    pub style_vocab: usize,
    pub rope_theta: f64,
    /// When false, condition tokens get identity rotations.
    pub rope_on_conditions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            token_dim: 48,
            d_model: 72,
            n_heads: 3,
            n_layers: 4,
            mlp_ratio: 2,
            time_freq_dim: 32,
            style_vocab: STYLE_VOCAB,
            rope_theta: DEFAULT_THETA,
            rope_on_conditions: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig("d_model must be divisible by n_heads"));
        }
        if !self.head_dim().is_multiple_of(6) {
            return Err(Error::InvalidConfig("head dimension must be divisible by 6"));
        }
        if self.token_dim == 0 || self.n_layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("token_dim, n_layers and mlp_ratio must be positive"));
        }
        if self.time_freq_dim == 0 || !self.time_freq_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig("time_freq_dim must be even and positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn rope(&self) -> RopeConfig {
        RopeConfig {
            head_dim: self.head_dim(),
            theta: self.rope_theta,
        }
    }
}

/// One named parameter tensor (vectors have `rows == 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerIndex {
    pub mod_w: usize,
    pub mod_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamIndex {
    pub w_in: usize,
    pub b_in: usize,
    pub style_emb: usize,
    pub t_w1: usize,
    pub t_b1: usize,
    pub t_w2: usize,
    pub t_b2: usize,
    pub layers: Vec<LayerIndex>,
    pub f_mod_w: usize,
    pub f_mod_b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

/// All weights of the velocity transformer, stored as an ordered list of
/// named tensors. The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub cfg: ModelConfig,
    params: Vec<Param<T>>,
    pub(crate) idx: ParamIndex,
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    Xavier,
    Embedding,
}

impl<T: Real> ModelParams<T> {
    fn build(cfg: ModelConfig, mut fill: impl FnMut(usize, usize, Init) -> Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut params = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, init: Init| {
            params.push(Param {
                name,
                rows,
                cols,
                data: fill(rows, cols, init),
            });
            params.len() - 1
        };
        let w_in = push("in.w".into(), cfg.token_dim, d, Init::Xavier);
        let b_in = push("in.b".into(), 1, d, Init::Zero);
        let style_emb = push("style.emb".into(), cfg.style_vocab, d, Init::Embedding);
        let t_w1 = push("time.w1".into(), cfg.time_freq_dim, d, Init::Xavier);
        let t_b1 = push("time.b1".into(), 1, d, Init::Zero);
        let t_w2 = push("time.w2".into(), d, d, Init::Xavier);
        let t_b2 = push("time.b2".into(), 1, d, Init::Zero);
        let mut layers = Vec::new();
        for l in 0..cfg.n_layers {
            let n = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerIndex {
                mod_w: push(n("mod.w"), d, 6 * d, Init::Zero),
                mod_b: push(n("mod.b"), 1, 6 * d, Init::Zero),
                wq: push(n("attn.q.w"), d, d, Init::Xavier),
                bq: push(n("attn.q.b"), 1, d, Init::Zero),
                wk: push(n("attn.k.w"), d, d, Init::Xavier),
                bk: push(n("attn.k.b"), 1, d, Init::Zero),
                wv: push(n("attn.v.w"), d, d, Init::Xavier),
                bv: push(n("attn.v.b"), 1, d, Init::Zero),
                wo: push(n("attn.o.w"), d, d, Init::Xavier),
                bo: push(n("attn.o.b"), 1, d, Init::Zero),
                w1: push(n("mlp.w1"), d, cfg.mlp_dim(), Init::Xavier),
                b1: push(n("mlp.b1"), 1, cfg.mlp_dim(), Init::Zero),
                w2: push(n("mlp.w2"), cfg.mlp_dim(), d, Init::Xavier),
                b2: push(n("mlp.b2"), 1, d, Init::Zero),
            });
        }
        let f_mod_w = push("final.mod.w".into(), d, 2 * d, Init::Zero);
        let f_mod_b = push("final.mod.b".into(), 1, 2 * d, Init::Zero);
        let w_out = push("out.w".into(), d, cfg.token_dim, Init::Zero);
        let b_out = push("out.b".into(), 1, cfg.token_dim, Init::Zero);
        Ok(Self {
            cfg,
            params,
            idx: ParamIndex {
                w_in,
                b_in,
                style_emb,
                t_w1,
                t_b1,
                t_w2,
                t_b2,
                layers,
                f_mod_w,
                f_mod_b,
                w_out,
                b_out,
            },
        })
    }

    /// Seeded initialization: Xavier-uniform projections, small embeddings,
    /// zero biases, and zero modulation and output projections so the fresh
    /// model predicts exactly zero velocity.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |rows, cols, init| match init {
            Init::Zero => vec![T::zero(); rows * cols],
            Init::Xavier => {
                let a = libm::sqrt(6.0 / (rows + cols) as f64);
                (0..rows * cols).map(|_| T::from_f64(rng.random_range(-a..a))).collect()
            }
            Init::Embedding => (0..rows * cols).map(|_| T::from_f64(rng.random_range(-0.1..0.1))).collect(),
        })
    }

    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        Self::build(cfg, |rows, cols, _| vec![T::zero(); rows * cols])
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill_zero();
        out
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.data.fill(T::zero());
        }
    }

    /// Overwrites every tensor (including zero-initialized ones) with uniform
    /// values in `[-scale, scale]`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            for v in &mut p.data {
                *v = T::from_f64(rng.random_range(-scale..scale));
            }
        }
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    #[inline]
    pub(crate) fn t(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    #[inline]
    pub(crate) fn t_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[i].data
    }

    /// Disjoint mutable access to a weight and its bias.
    pub(crate) fn two_mut(&mut self, a: usize, b: usize) -> (&mut [T], &mut [T]) {
        assert!(a < b);
        let (lo, hi) = self.params.split_at_mut(b);
        (&mut lo[a].data, &mut hi[0].data)
    }

    /// Copies tensor data by name; shapes must match exactly.
    pub fn load_tensor(&mut self, name: &str, rows: usize, cols: usize, data: Vec<T>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or(Error::InvalidConfig("unknown parameter name"))?;
        if p.rows != rows || p.cols != cols || data.len() != rows * cols {
            return Err(Error::DimensionMismatch("parameter shape"));
        }
        p.data = data;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            cfg: self.cfg,
            idx: self.idx.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &ModelParams<T>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            crate::real::axpy(&mut a.data, alpha, &b.data);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v *= alpha;
            }
        }
    }

    pub fn sq_norm(&self) -> T {
        self.params.iter().map(|p| crate::real::dot(&p.data, &p.data)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_head_split() {
        let cfg = ModelConfig {
            d_model: 40,
            n_heads: 2,
            ..Default::default()
        };
        assert!(ModelParams::<f32>::init(cfg, 0).is_err());
    }

    #[test]
    fn zero_init_tensors() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), 1).unwrap();
        for name in ["out.w", "out.b", "final.mod.w", "layers.0.mod.w", "layers.2.mod.b"] {
            assert!(p.get(name).unwrap().data.iter().all(|&v| v == 0.0), "{name}");
        }
        assert!(p.get("layers.1.attn.q.w").unwrap().data.iter().any(|&v| v != 0.0));
        let names: Vec<_> = p.params().iter().map(|q| q.name.clone()).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::<f32>::init(ModelConfig::default(), 5).unwrap();
        let b = ModelParams::<f32>::init(ModelConfig::default(), 5).unwrap();
        let c = ModelParams::<f32>::init(ModelConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
