//! Exact patch codec between images and token grids.
//!
//! Encoding is space-to-depth patchification followed by a fixed per-channel
//! affine normalization `(x - 0.5) * 2`. Both constants are powers of two
//! apart, so `decode(encode(x)) == x` holds bit-exactly for every pixel value
//! on the `2^-24` lattice in `[0, 1]` (this includes everything the synthetic
//! renderer produces and every `f32` drawn uniformly from `[0, 1)` by `rand`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

pub const CHANNEL_MEAN: [f32; 3] = [0.5, 0.5, 0.5];
pub const CHANNEL_INV_SCALE: [f32; 3] = [2.0, 2.0, 2.0];
pub const CHANNEL_SCALE: [f32; 3] = [0.5, 0.5, 0.5];

/// `h x w` lattice of `d`-dimensional tokens, row-major, token-contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid<T = f32> {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<T>,
}

impl<T: Real> TokenGrid<T> {
    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self {
            h,
            w,
            d,
            data: vec![T::zero(); h * w * d],
        }
    }

    pub fn from_data(h: usize, w: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w * d {
            return Err(Error::DimensionMismatch("token grid buffer length"));
        }
        Ok(Self { h, w, d, data })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.d)
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn check_same_shape(&self, other: &TokenGrid<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> TokenGrid<U> {
        TokenGrid {
            h: self.h,
            w: self.w,
            d: self.d,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn token_dim(patch: usize) -> usize {
    3 * patch * patch
}

pub fn encode(img: &Image, patch: usize) -> Result<TokenGrid> {
    if img.channels != 3 {
        return Err(Error::DimensionMismatch("codec expects 3-channel images"));
    }
    if patch == 0 || !img.height.is_multiple_of(patch) || !img.width.is_multiple_of(patch) {
        return Err(Error::DimensionMismatch("image size not divisible by patch size"));
    }
    let (gh, gw, d) = (img.height / patch, img.width / patch, token_dim(patch));
    let mut grid = TokenGrid::zeros(gh, gw, d);
    for ty in 0..gh {
        for tx in 0..gw {
            let base = (ty * gw + tx) * d;
            for c in 0..3 {
                for py in 0..patch {
                    for px in 0..patch {
                        let v = img.get(ty * patch + py, tx * patch + px, c);
                        grid.data[base + c * patch * patch + py * patch + px] =
                            (v - CHANNEL_MEAN[c]) * CHANNEL_INV_SCALE[c];
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub fn decode(grid: &TokenGrid, patch: usize) -> Result<Image> {
    if patch == 0 || grid.d != token_dim(patch) {
        return Err(Error::DimensionMismatch("token dimension must equal 3 * patch^2"));
    }
    let mut img = Image::rgb(grid.h * patch, grid.w * patch);
    for ty in 0..grid.h {
        for tx in 0..grid.w {
            let base = (ty * grid.w + tx) * grid.d;
            for c in 0..3 {
                for py in 0..patch {
                    for px in 0..patch {
                        let t = grid.data[base + c * patch * patch + py * patch + px];
                        img.set(ty * patch + py, tx * patch + px, c, t * CHANNEL_SCALE[c] + CHANNEL_MEAN[c]);
                    }
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
        Image::from_data(h, w, 3, data).unwrap()
    }

    #[test]
    fn shape_arithmetic() {
        let g = encode(&Image::rgb(64, 64), 4).unwrap();
        assert_eq!(g.shape(), (16, 16, 48));
    }

    #[test]
    fn constant_half_image_gives_equal_tokens() {
        let g = encode(&Image::filled(16, 16, 3, 0.5), 4).unwrap();
        assert!(g.data.iter().all(|&v| v == g.data[0]));
        assert_eq!(g.data[0], 0.0);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let img = random_image(&mut rng, 32, 24);
            let back = decode(&encode(&img, 4).unwrap(), 4).unwrap();
            assert!(img.data.iter().zip(&back.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn unit_patch_is_pointwise_denormalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = TokenGrid::from_data(2, 3, 3, (0..18).map(|_| rng.random::<f32>() - 0.5).collect()).unwrap();
        let img = decode(&grid, 1).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..3 {
                    assert_eq!(img.get(y, x, c), grid.data[(y * 3 + x) * 3 + c] * 0.5 + 0.5);
                }
            }
        }
    }

    #[test]
    fn zero_grid_decodes_to_midpoint() {
        let img = decode(&TokenGrid::zeros(4, 4, 48), 4).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn divisibility_errors() {
        assert!(encode(&Image::rgb(30, 32), 4).is_err());
        assert!(decode(&TokenGrid::zeros(2, 2, 47), 4).is_err());
        assert!(encode(&Image::new(8, 8, 1), 4).is_err());
    }

    proptest! {
        // encode(a x + b y) = a encode(x) + b encode(y) + (1 - a - b) * shift
        #[test]
        fn encode_is_affine(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_image(&mut rng, 8, 8);
            let y = random_image(&mut rng, 8, 8);
            let mix = Image::from_data(8, 8, 3, x.data.iter().zip(&y.data)
                .map(|(p, q)| (a * *p as f64 + b * *q as f64) as f32).collect()).unwrap();
            let (ex, ey, em) = (encode(&x, 2).unwrap(), encode(&y, 2).unwrap(), encode(&mix, 2).unwrap());
            let shift = -1.0; // encode of the zero image
            for i in 0..em.data.len() {
                let lin = a * ex.data[i] as f64 + b * ey.data[i] as f64 + (1.0 - a - b) * shift;
                prop_assert!((em.data[i] as f64 - lin).abs() < 1e-5);
            }
        }
    }
}
