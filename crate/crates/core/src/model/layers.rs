//! Elementwise and per-row building blocks with their derivatives.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

pub const LN_EPS: f64 = 1e-6;

/// Affine-free layer norm of each `d`-wide row. Returns the normalized rows
/// and each row's reciprocal standard deviation.
pub fn layer_norm<T: Real>(x: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let inv_d = T::one() / T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(xr) {
            *o = (v - mean) * rs;
        }
        rstd.push(rs);
    }
    (out, rstd)
}

/// Accumulates `dx += LN'(x)^T da` given the normalized rows `a`.
pub fn layer_norm_backward<T: Real>(a: &[T], rstd: &[T], da: &[T], d: usize, dx: &mut [T]) {
    let inv_d = T::one() / T::from_f64(d as f64);
    for (r, &rs) in rstd.iter().enumerate() {
        let ar = &a[r * d..(r + 1) * d];
        let dar = &da[r * d..(r + 1) * d];
        let mean_da = dar.iter().copied().sum::<T>() * inv_d;
        let mean_da_a = ar.iter().zip(dar).map(|(&p, &q)| p * q).sum::<T>() * inv_d;
        for ((o, &g), &an) in dx[r * d..(r + 1) * d].iter_mut().zip(dar).zip(ar) {
            *o += rs * (g - mean_da - an * mean_da_a);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Real>(u: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    half * u * (T::one() + (k * (u + c * u * u * u)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(u: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    let th = (k * (u + c * u * u * u)).tanh();
    half * (T::one() + th) + half * u * (T::one() - th * th) * k * (T::one() + T::from_f64(3.0) * c * u * u)
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// Sinusoidal features of `1000 t`: `[cos(f_i 1000 t)..., sin(f_i 1000 t)...]`.
pub fn timestep_features<T: Real>(t: T, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half as f64);
        let arg = t.as_f64() * 1000.0 * freq;
        out[i] = T::from_f64(libm::cos(arg));
        out[half + i] = T::from_f64(libm::sin(arg));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + 1e-6) - f(x - 1e-6)) / 2e-6
    }

    #[test]
    fn scalar_derivatives() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8);
            assert!((silu_grad(x) - fd(silu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.5 + i as f64 * 0.01).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let loss = |x: &[f64]| layer_norm(x, 6).0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (a, rstd) = layer_norm(&x, 6);
        let mut dx = vec![0.0; 12];
        layer_norm_backward(&a, &rstd, &w, 6, &mut dx);
        for i in 0..12 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let g = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((g - dx[i]).abs() < 1e-6, "{i}: {g} vs {}", dx[i]);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (a, _) = layer_norm(&x, 4);
        for r in 0..2 {
            let row = &a[r * 4..r * 4 + 4];
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
            assert!((row.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-5);
        }
    }
}
