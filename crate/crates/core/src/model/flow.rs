//! Rectified-flow interpolation and the region-weighted velocity loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::real::Real;

/// Training triple: the interpolant `z_t`, its time and the velocity target.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair<T> {
    pub z_t: TokenGrid<T>,
    pub t: T,
    pub target: TokenGrid<T>,
}

/// `z_t = (1 - t) z0 + t eps`, target `v = eps - z0`.
pub fn make_flow_pair<T: Real>(z0: &TokenGrid<T>, eps: &TokenGrid<T>, t: T) -> Result<FlowPair<T>> {
    z0.check_same_shape(eps)?;
    let mut z_t = z0.clone();
    let mut target = z0.clone();
    for ((zt, v), (&a, &e)) in z_t.data.iter_mut().zip(target.data.iter_mut()).zip(z0.data.iter().zip(&eps.data)) {
        *zt = (T::one() - t) * a + t * e;
        *v = e - a;
    }
    Ok(FlowPair { z_t, t, target })
}

/// Mean over tokens and channels of `w_token (pred - target)^2`; `weights`
/// of `None` means uniform 1. Returns the loss and `dL/dpred`.
pub fn weighted_fm_loss<T: Real>(pred: &TokenGrid<T>, target: &TokenGrid<T>, weights: Option<&[f64]>) -> Result<(T, Vec<T>)> {
    pred.check_same_shape(target)?;
    if let Some(w) = weights {
        if w.len() != pred.len() {
            return Err(Error::DimensionMismatch("weight map length differs from token count"));
        }
    }
    let d = pred.d;
    let denom = T::from_f64((pred.len() * d) as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.data.len()];
    for r in 0..pred.len() {
        let w = T::from_f64(weights.map_or(1.0, |w| w[r]));
        for j in 0..d {
            let e = pred.data[r * d + j] - target.data[r * d + j];
            loss += w * e * e;
            grad[r * d + j] = T::from_f64(2.0) * w * e / denom;
        }
    }
    Ok((loss / denom, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: &[f64]) -> TokenGrid<f64> {
        TokenGrid::from_data(1, v.len() / 2, 2, v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints() {
        let z0 = grid(&[1.0, 2.0, 3.0, 4.0]);
        let e = grid(&[0.5, -1.0, 0.0, 2.0]);
        assert_eq!(make_flow_pair(&z0, &e, 0.0).unwrap().z_t, z0);
        let p = make_flow_pair(&z0, &e, 1.0).unwrap();
        assert_eq!(p.z_t, e);
        assert_eq!(p.target.data, vec![-0.5, -3.0, -3.0, -2.0]);
    }

    #[test]
    fn weighted_loss_value_and_grad() {
        let pred = grid(&[1.0, 1.0, 0.0, 0.0]);
        let tgt = grid(&[0.0, 0.0, 0.0, 2.0]);
        let (l, g) = weighted_fm_loss(&pred, &tgt, Some(&[1.5, 0.5])).unwrap();
        // (1.5 * 2 + 0.5 * 4) / 4
        assert!((l - 1.25).abs() < 1e-12);
        assert_eq!(g, vec![0.75, 0.75, 0.0, -0.5]);
        let (u, _) = weighted_fm_loss(&pred, &tgt, None).unwrap();
        assert!((u - 1.5).abs() < 1e-12);
        assert!(weighted_fm_loss(&pred, &tgt, Some(&[1.0])).is_err());
    }
}
