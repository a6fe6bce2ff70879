//! The velocity transformer: a stack of adaLN-modulated blocks over
//! `[latent | style | condition groups]`, with grouped attention and 3-axis
//! rotary positions.

mod backward;
pub mod flow;
mod forward;
pub mod layers;
pub mod params;

use alloc::vec::Vec;

pub use flow::{make_flow_pair, weighted_fm_loss, FlowPair};
pub use forward::{prepare, Prepared};
pub use params::{ModelConfig, ModelParams, Param};

use crate::attention::LayerKVCache;
use crate::codec::TokenGrid;
use crate::error::Result;
use crate::real::Real;
use crate::rope::ConditionGroup;
use crate::tensor::Mat;
use forward::Mode;

/// Everything besides the noisy latent that the model attends to.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning<T = f32> {
    pub style_tokens: Vec<u32>,
    pub groups: Vec<ConditionGroup<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions<T> {
    /// Timestep used to modulate condition rows; `None` uses the live `t`.
    pub condition_t: Option<T>,
}

impl<T> Default for ForwardOptions<T> {
    fn default() -> Self {
        Self { condition_t: None }
    }
}

impl<T> ForwardOptions<T> {
    /// Condition rows modulated at a fixed timestep.
    pub fn frozen(t0: T) -> Self {
        Self { condition_t: Some(t0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromoDiT<T = f32> {
    pub params: ModelParams<T>,
}

impl<T: Real> PromoDiT<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            params: ModelParams::init(cfg, seed)?,
        })
    }

    pub fn from_params(params: ModelParams<T>) -> Self {
        Self { params }
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.params.cfg
    }

    pub fn prepare(&self, latent_shape: (usize, usize), cond: &Conditioning<T>) -> Result<Prepared<T>> {
        prepare(&self.params, latent_shape, cond)
    }

    /// Predicted velocity for `z_t` at time `t`.
    pub fn forward(&self, z_t: &TokenGrid<T>, t: T, cond: &Conditioning<T>, opts: &ForwardOptions<T>) -> Result<TokenGrid<T>> {
        let prep = self.prepare((z_t.h, z_t.w), cond)?;
        self.forward_prepared(&prep, z_t, t, cond, opts)
    }

    pub fn forward_prepared(
        &self,
        prep: &Prepared<T>,
        z_t: &TokenGrid<T>,
        t: T,
        cond: &Conditioning<T>,
        opts: &ForwardOptions<T>,
    ) -> Result<TokenGrid<T>> {
        Ok(forward::run_full(&self.params, prep, z_t, t, cond, opts, Mode::default())?.out)
    }

    /// Forward that also returns every block's output hidden states
    /// (`total x d_model`, sequence order).
    pub fn forward_traced(
        &self,
        z_t: &TokenGrid<T>,
        t: T,
        cond: &Conditioning<T>,
        opts: &ForwardOptions<T>,
    ) -> Result<(TokenGrid<T>, Vec<Mat<T>>)> {
        let prep = self.prepare((z_t.h, z_t.w), cond)?;
        let mode = Mode {
            trace: true,
            ..Mode::default()
        };
        let o = forward::run_full(&self.params, &prep, z_t, t, cond, opts, mode)?;
        Ok((o.out, o.trace))
    }

    /// Full forward that records each layer's condition keys and values.
    pub fn forward_capture(
        &self,
        prep: &Prepared<T>,
        z_t: &TokenGrid<T>,
        t: T,
        cond: &Conditioning<T>,
        opts: &ForwardOptions<T>,
    ) -> Result<(TokenGrid<T>, LayerKVCache<T>)> {
        let mode = Mode {
            capture: true,
            ..Mode::default()
        };
        let o = forward::run_full(&self.params, prep, z_t, t, cond, opts, mode)?;
        let cache = LayerKVCache::new(&prep.layout, o.cache)?;
        Ok((o.out, cache))
    }

    /// Forward over latent and style rows only, reading condition keys and
    /// values from `cache`.
    pub fn forward_cached(
        &self,
        prep: &Prepared<T>,
        z_t: &TokenGrid<T>,
        t: T,
        style_tokens: &[u32],
        cache: &LayerKVCache<T>,
    ) -> Result<TokenGrid<T>> {
        forward::run_cached(&self.params, prep, z_t, t, style_tokens, cache)
    }

    /// Weighted flow-matching loss of one pair; accumulates `scale * dL/dθ`
    /// into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        prep: &Prepared<T>,
        pair: &FlowPair<T>,
        cond: &Conditioning<T>,
        weights: Option<&[f64]>,
        opts: &ForwardOptions<T>,
        scale: T,
        grads: &mut ModelParams<T>,
    ) -> Result<T> {
        let mode = Mode {
            tape: true,
            ..Mode::default()
        };
        let o = forward::run_full(&self.params, prep, &pair.z_t, pair.t, cond, opts, mode)?;
        let (loss, mut dout) = weighted_fm_loss(&o.out, &pair.target, weights)?;
        for v in &mut dout {
            *v *= scale;
        }
        let tape = o.tape.expect("taped forward");
        backward::backward(&self.params, prep, &tape, &pair.z_t, cond, &dout, grads);
        Ok(loss)
    }
}

#[cfg(test)]
mod tests;
