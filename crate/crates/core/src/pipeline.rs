//! Turns a [`TryOnSample`] into model inputs and a generated image back out.

use alloc::vec::Vec;

use crate::codec::{self, TokenGrid};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Conditioning, PromoDiT};
use crate::rope::{ConditionGroup, ConditionKind};
use crate::sampler::{euler_sample, SamplerConfig};
use crate::spatial::{make_agnostic, merge_spatial, region_weight_map, WeightMap};
use crate::synth::{style_to_tokens, TryOnSample};

/// Group id of the merged spatial condition, or of the agnostic image when
/// unmerged.
pub const SPATIAL_ID: u32 = 1;
/// Group id of the pose map when it is not merged.
pub const POSE_ID: u32 = 2;
/// Garment groups take `FIRST_GARMENT_ID + slot index`.
pub const FIRST_GARMENT_ID: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondSettings {
    pub patch: usize,
    /// Overlay pose on the agnostic image and halve its resolution.
    pub merge: bool,
}

impl Default for CondSettings {
    fn default() -> Self {
        Self { patch: 4, merge: true }
    }
}

pub fn latent_shape(sample: &TryOnSample, patch: usize) -> (usize, usize) {
    (sample.target.height / patch, sample.target.width / patch)
}

/// Style tokens, spatial group(s) and one group per replacement garment.
/// `null_style` replaces the prompt by the null token sequence.
pub fn build_conditioning(sample: &TryOnSample, s: CondSettings, null_style: bool) -> Result<Conditioning<f32>> {
    let z_shape = latent_shape(sample, s.patch);
    let agnostic = make_agnostic(&sample.person, &sample.agnostic_mask)?;
    let mut groups = Vec::new();
    if s.merge {
        let merged = merge_spatial(&agnostic, &sample.pose_map)?;
        let tokens = codec::encode(&merged, s.patch)?;
        groups.push(ConditionGroup::new(SPATIAL_ID, ConditionKind::Spatial, tokens, z_shape, 0.0)?);
    } else {
        let a = codec::encode(&agnostic, s.patch)?;
        let p = codec::encode(&sample.pose_map, s.patch)?;
        groups.push(ConditionGroup::new(SPATIAL_ID, ConditionKind::Spatial, a, z_shape, 0.0)?);
        groups.push(ConditionGroup::new(POSE_ID, ConditionKind::Spatial, p, z_shape, 0.0)?);
    }
    if sample.garments.len() != sample.garment_specs.len() {
        return Err(Error::DimensionMismatch("garment images and specs differ in count"));
    }
    for (img, spec) in sample.garments.iter().zip(&sample.garment_specs) {
        let tokens = codec::encode(img, s.patch)?;
        let id = FIRST_GARMENT_ID + spec.slot.index() as u32;
        groups.push(ConditionGroup::new(id, ConditionKind::Garment, tokens, z_shape, z_shape.0 as f64)?);
    }
    let style = if null_style { None } else { sample.style.as_ref() };
    Ok(Conditioning {
        style_tokens: style_to_tokens(style).to_vec(),
        groups,
    })
}

/// Clean target latent `z_0`.
pub fn target_latent(sample: &TryOnSample, patch: usize) -> Result<TokenGrid<f32>> {
    codec::encode(&sample.target, patch)
}

/// Loss weights over the latent grid; `lambda = 0` gives uniform weights.
pub fn loss_weights(sample: &TryOnSample, patch: usize, lambda: f64) -> Result<WeightMap> {
    region_weight_map(&sample.parsing_mask, lambda, latent_shape(sample, patch))
}

/// Samples the try-on image for `sample`, clamped to `[0, 1]`.
pub fn generate(
    model: &PromoDiT<f32>,
    sample: &TryOnSample,
    s: CondSettings,
    null_style: bool,
    sampler: &SamplerConfig,
) -> Result<Image> {
    let cond = build_conditioning(sample, s, null_style)?;
    let z0 = euler_sample(model, &cond, latent_shape(sample, s.patch), sampler)?;
    Ok(codec::decode(&z0, s.patch)?.clamped())
}
