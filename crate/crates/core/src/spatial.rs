//! Agnostic masking, pose-over-agnostic merging and the region-aware loss weights.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Per-latent-token loss weights `1 + lambda * (2 m - 1)` where `m` is the
/// body occupancy of the token's pixel cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub h: usize,
    pub w: usize,
    pub lambda: f64,
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn uniform(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            lambda: 0.0,
            weights: alloc::vec![1.0; h * w],
        }
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Person image with the masked region zeroed.
pub fn make_agnostic(person: &Image, mask: &Mask) -> Result<Image> {
    if (person.height, person.width) != (mask.height, mask.width) {
        return Err(Error::ShapeMismatch {
            expected: (person.height, person.width, person.channels),
            got: (mask.height, mask.width, person.channels),
        });
    }
    let mut out = person.clone();
    let n = person.plane_len();
    for c in 0..person.channels {
        for (i, &m) in mask.data.iter().enumerate() {
            if m != 0 {
                out.data[c * n + i] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Pastes the pose skeleton over the agnostic image (pose wins wherever any
/// channel is nonzero) and area-averages the result down by 2 per side.
pub fn merge_spatial(agnostic: &Image, pose: &Image) -> Result<Image> {
    agnostic.check_same_shape(pose)?;
    let (h, w, ch) = agnostic.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::DimensionMismatch("merge_spatial needs even height and width"));
    }
    let mut overlay = agnostic.clone();
    for y in 0..h {
        for x in 0..w {
            if (0..ch).any(|c| pose.get(y, x, c) > 0.0) {
                for c in 0..ch {
                    overlay.set(y, x, c, pose.get(y, x, c));
                }
            }
        }
    }
    Ok(avg_pool2(&overlay))
}

/// 2x2 area average.
pub fn avg_pool2(img: &Image) -> Image {
    let (h, w, ch) = img.shape();
    let mut out = Image::new(h / 2, w / 2, ch);
    for c in 0..ch {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let s = img.get(2 * y, 2 * x, c)
                    + img.get(2 * y, 2 * x + 1, c)
                    + img.get(2 * y + 1, 2 * x, c)
                    + img.get(2 * y + 1, 2 * x + 1, c);
                out.set(y, x, c, s * 0.25);
            }
        }
    }
    out
}

/// Pools the parsing mask to the latent grid and builds the loss weights.
pub fn region_weight_map(parsing: &Mask, lambda: f64, latent_shape: (usize, usize)) -> Result<WeightMap> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidConfig("lambda must be in [0, 1)"));
    }
    let (hl, wl) = latent_shape;
    if hl == 0 || wl == 0 || !parsing.height.is_multiple_of(hl) || !parsing.width.is_multiple_of(wl) {
        return Err(Error::NonIntegralFactor);
    }
    let f = parsing.height / hl;
    if parsing.width / wl != f {
        return Err(Error::NonIntegralFactor);
    }
    let cell = (f * f) as f64;
    let mut weights = Vec::with_capacity(hl * wl);
    for ty in 0..hl {
        for tx in 0..wl {
            let mut on = 0usize;
            for y in ty * f..(ty + 1) * f {
                for x in tx * f..(tx + 1) * f {
                    on += parsing.get(y, x) as usize;
                }
            }
            let m = on as f64 / cell;
            weights.push(m * (1.0 + lambda) + (1.0 - m) * (1.0 - lambda));
        }
    }
    Ok(WeightMap {
        h: hl,
        w: wl,
        lambda,
        weights,
    })
}
