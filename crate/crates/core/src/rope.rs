//! Three-axis rotary coordinates `(t, x, y)` with the `t` axis carrying the
//! condition-group identifier.
//!
//! The head dimension is split into three equal blocks (t, x, y); each block
//! is rotated pairwise with geometric frequencies `theta^(-2k / block)`.

use alloc::vec::Vec;

use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_THETA: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rope3DCoord {
    /// Group id; 0 for the latent tokens.
    pub t: u32,
    pub x: f64,
    pub y: f64,
}

impl Rope3DCoord {
    pub const ORIGIN: Rope3DCoord = Rope3DCoord { t: 0, x: 0.0, y: 0.0 };

    pub fn new(t: u32, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    fn axis(&self, a: usize) -> f64 {
        match a {
            0 => self.t as f64,
            1 => self.x,
            _ => self.y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionKind {
    Spatial,
    Garment,
}

/// One conditioning input with its rotary coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGroup<T = f32> {
    pub id: u32,
    pub kind: ConditionKind,
    pub tokens: TokenGrid<T>,
    pub coords: Vec<Rope3DCoord>,
}

impl<T: Real> ConditionGroup<T> {
    /// Builds a group and assigns its coordinates relative to a latent grid of
    /// shape `z_shape`; garment groups are shifted by `delta` along y.
    pub fn new(id: u32, kind: ConditionKind, tokens: TokenGrid<T>, z_shape: (usize, usize), delta: f64) -> Result<Self> {
        let coords = coords_for_condition(id, kind, tokens.h, tokens.w, z_shape, delta)?;
        Ok(Self { id, kind, tokens, coords })
    }
}

/// `(0, x, y)` for every latent token, row-major.
pub fn coords_for_latent(h: usize, w: usize) -> Vec<Rope3DCoord> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(Rope3DCoord::new(0, x as f64, y as f64));
        }
    }
    out
}

/// Coordinates for a condition group.
///
/// Spatial groups must cover the latent grid at an integer down-factor `f`;
/// each token sits at the center of the `f x f` latent cells it covers. For the
/// merged spatial condition `f = 2`, giving `(2x' + 0.5, 2y' + 0.5)`.
pub fn coords_for_condition(
    group_id: u32,
    kind: ConditionKind,
    h_c: usize,
    w_c: usize,
    z_shape: (usize, usize),
    delta: f64,
) -> Result<Vec<Rope3DCoord>> {
    if group_id == 0 {
        return Err(Error::Rope("condition group ids start at 1"));
    }
    let mut out = Vec::with_capacity(h_c * w_c);
    match kind {
        ConditionKind::Spatial => {
            let (zh, zw) = z_shape;
            if h_c == 0 || w_c == 0 || zh % h_c != 0 || zw % w_c != 0 || zh / h_c != zw / w_c {
                return Err(Error::Rope("spatial group shape does not tile the latent grid"));
            }
            let f = (zh / h_c) as f64;
            let off = (f - 1.0) / 2.0;
            for y in 0..h_c {
                for x in 0..w_c {
                    out.push(Rope3DCoord::new(group_id, f * x as f64 + off, f * y as f64 + off));
                }
            }
        }
        ConditionKind::Garment => {
            for y in 0..h_c {
                for x in 0..w_c {
                    out.push(Rope3DCoord::new(group_id, x as f64, y as f64 + delta));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub theta: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize) -> Result<Self> {
        let cfg = Self {
            head_dim,
            theta: DEFAULT_THETA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(6) {
            return Err(Error::Rope("head dimension must be divisible by 6"));
        }
        Ok(())
    }

    pub fn axis_dim(&self) -> usize {
        self.head_dim / 3
    }

    /// Rotation frequencies of one axis block.
    pub fn frequencies(&self) -> Vec<f64> {
        let ad = self.axis_dim() as f64;
        (0..self.axis_dim() / 2)
            .map(|k| libm::pow(self.theta, -2.0 * k as f64 / ad))
            .collect()
    }
}

/// Precomputed `cos`/`sin` per token and rotation pair.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(cfg: &RopeConfig, coords: &[Rope3DCoord]) -> Self {
        let freqs = cfg.frequencies();
        let half = cfg.head_dim / 2;
        let mut cos = Vec::with_capacity(coords.len() * half);
        let mut sin = Vec::with_capacity(coords.len() * half);
        for c in coords {
            for a in 0..3 {
                for &f in &freqs {
                    let ang = c.axis(a) * f;
                    cos.push(T::from_f64(libm::cos(ang)));
                    sin.push(T::from_f64(libm::sin(ang)));
                }
            }
        }
        Self { half, cos, sin }
    }

    /// Identity rotations for `n` tokens.
    pub fn identity(cfg: &RopeConfig, n: usize) -> Self {
        let half = cfg.head_dim / 2;
        Self {
            half,
            cos: alloc::vec![T::one(); n * half],
            sin: alloc::vec![T::zero(); n * half],
        }
    }

    pub fn len(&self) -> usize {
        self.cos.len() / self.half.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }

    pub fn append(&mut self, other: &RopeTable<T>) {
        self.cos.extend_from_slice(&other.cos);
        self.sin.extend_from_slice(&other.sin);
    }

    /// Rotates one head vector of token `i` in place; `inverse` applies the transpose.
    #[inline]
    pub fn rotate(&self, v: &mut [T], i: usize, inverse: bool) {
        let cs = &self.cos[i * self.half..(i + 1) * self.half];
        let sn = &self.sin[i * self.half..(i + 1) * self.half];
        for (p, (&c, &s)) in cs.iter().zip(sn).enumerate() {
            let s = if inverse { -s } else { s };
            let (a, b) = (v[2 * p], v[2 * p + 1]);
            v[2 * p] = a * c - b * s;
            v[2 * p + 1] = a * s + b * c;
        }
    }
}

/// Rotates a single vector by the coordinate's angles.
pub fn apply_rope<T: Real>(vec: &[T], coord: Rope3DCoord, cfg: &RopeConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if vec.len() != cfg.head_dim {
        return Err(Error::Rope("vector length differs from head dimension"));
    }
    let table = RopeTable::<T>::new(cfg, &[coord]);
    let mut out = vec.to_vec();
    table.rotate(&mut out, 0, false);
    Ok(out)
}
