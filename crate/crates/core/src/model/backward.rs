//! Reverse-mode pass over a taped forward.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{LayerTape, Prepared, Tape, TimeTape};
use super::layers::{gelu_grad, layer_norm_backward, silu, silu_grad};
use super::params::ModelParams;
use super::Conditioning;
use crate::attention::mha_backward;
use crate::codec::TokenGrid;
use crate::real::Real;
use crate::tensor::linear_backward;

/// Gradients of `x = a (1 + scale) + shift` for the modulation rows in
/// `[shift, scale]` slots; returns `da`.
#[allow(clippy::too_many_arguments)]
fn modulate_backward<T: Real>(
    a: &[T],
    dx: &[T],
    d: usize,
    n_live: usize,
    mods: &[Vec<T>; 2],
    dmods: &mut [Vec<T>; 2],
    shift: usize,
    scale: usize,
) -> Vec<T> {
    let mut da = vec![T::zero(); a.len()];
    for r in 0..a.len() / d {
        let b = (r >= n_live) as usize;
        let sc = &mods[b][scale * d..(scale + 1) * d];
        let dm = &mut dmods[b];
        for j in 0..d {
            let g = dx[r * d + j];
            dm[shift * d + j] += g;
            dm[scale * d + j] += g * a[r * d + j];
            da[r * d + j] = g * (T::one() + sc[j]);
        }
    }
    da
}

/// `h += gate * y`: returns `dy` and accumulates the gate gradient.
fn gated_backward<T: Real>(
    dh: &[T],
    y: &[T],
    d: usize,
    n_live: usize,
    mods: &[Vec<T>; 2],
    dmods: &mut [Vec<T>; 2],
    gate: usize,
) -> Vec<T> {
    let mut dy = vec![T::zero(); dh.len()];
    for r in 0..dh.len() / d {
        let b = (r >= n_live) as usize;
        let g = &mods[b][gate * d..(gate + 1) * d];
        for j in 0..d {
            dmods[b][gate * d + j] += dh[r * d + j] * y[r * d + j];
            dy[r * d + j] = dh[r * d + j] * g[j];
        }
    }
    dy
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Real>(
    p: &ModelParams<T>,
    g: &mut ModelParams<T>,
    l: usize,
    lt: &LayerTape<T>,
    prep: &Prepared<T>,
    dh: &mut [T],
    dsilu: &mut [Vec<T>; 2],
    silu_c: [&[T]; 2],
) {
    let li = &p.idx.layers[l];
    let cfg = &p.cfg;
    let (d, nh, md) = (cfg.d_model, cfg.n_heads, cfg.mlp_dim());
    let rows = dh.len() / d;
    let n_live = prep.n_live;
    let mut dmods = [vec![T::zero(); 6 * d], vec![T::zero(); 6 * d]];

    // MLP branch.
    let dy2 = gated_backward(dh, &lt.y2, d, n_live, &lt.mods, &mut dmods, 5);
    let mut dm = vec![T::zero(); rows * md];
    {
        let (dw, db) = g.two_mut(li.w2, li.b2);
        linear_backward(&lt.m, rows, md, p.t(li.w2), d, &dy2, dw, Some(db), Some(&mut dm));
    }
    for (v, &u) in dm.iter_mut().zip(&lt.u) {
        *v *= gelu_grad(u);
    }
    let mut dx2 = vec![T::zero(); rows * d];
    {
        let (dw, db) = g.two_mut(li.w1, li.b1);
        linear_backward(&lt.x2, rows, d, p.t(li.w1), md, &dm, dw, Some(db), Some(&mut dx2));
    }
    let da2 = modulate_backward(&lt.a2, &dx2, d, n_live, &lt.mods, &mut dmods, 3, 4);
    layer_norm_backward(&lt.a2, &lt.rstd2, &da2, d, dh);

    // Attention branch.
    let dy = gated_backward(dh, &lt.y, d, n_live, &lt.mods, &mut dmods, 2);
    let mut d_o = vec![T::zero(); rows * d];
    {
        let (dw, db) = g.two_mut(li.wo, li.bo);
        linear_backward(&lt.o, rows, d, p.t(li.wo), d, &dy, dw, Some(db), Some(&mut d_o));
    }
    let mut dq = vec![T::zero(); rows * d];
    let mut dk = vec![T::zero(); rows * d];
    let mut dv = vec![T::zero(); rows * d];
    mha_backward(&lt.q, &lt.k, &lt.v, d, nh, &lt.probs, &d_o, &mut dq, &mut dk, &mut dv);
    let hd = d / nh;
    for r in 0..rows {
        for hh in 0..nh {
            let s = r * d + hh * hd..r * d + (hh + 1) * hd;
            prep.rope.rotate(&mut dq[s.clone()], r, true);
            prep.rope.rotate(&mut dk[s], r, true);
        }
    }
    let mut dx = vec![T::zero(); rows * d];
    for (w, b, dz) in [(li.wq, li.bq, &dq), (li.wk, li.bk, &dk), (li.wv, li.bv, &dv)] {
        let (dw, db) = g.two_mut(w, b);
        linear_backward(&lt.x, rows, d, p.t(w), d, dz, dw, Some(db), Some(&mut dx));
    }
    let da = modulate_backward(&lt.a, &dx, d, n_live, &lt.mods, &mut dmods, 0, 1);
    layer_norm_backward(&lt.a, &lt.rstd, &da, d, dh);

    for b in 0..2 {
        let (dw, db) = g.two_mut(li.mod_w, li.mod_b);
        linear_backward(silu_c[b], 1, d, p.t(li.mod_w), 6 * d, &dmods[b], dw, Some(db), Some(&mut dsilu[b]));
    }
}

fn time_backward<T: Real>(p: &ModelParams<T>, g: &mut ModelParams<T>, tt: &TimeTape<T>, dsilu_c: &[T]) {
    let d = p.cfg.d_model;
    let i = &p.idx;
    let dc: Vec<T> = dsilu_c.iter().zip(&tt.c).map(|(&g, &c)| g * silu_grad(c)).collect();
    let hidden: Vec<T> = tt.pre.iter().map(|&v| silu(v)).collect();
    let mut dhid = vec![T::zero(); d];
    {
        let (dw, db) = g.two_mut(i.t_w2, i.t_b2);
        linear_backward(&hidden, 1, d, p.t(i.t_w2), d, &dc, dw, Some(db), Some(&mut dhid));
    }
    let dpre: Vec<T> = dhid.iter().zip(&tt.pre).map(|(&g, &u)| g * silu_grad(u)).collect();
    let (dw, db) = g.two_mut(i.t_w1, i.t_b1);
    linear_backward(&tt.feats, 1, tt.feats.len(), p.t(i.t_w1), d, &dpre, dw, Some(db), None);
}

/// Accumulates parameter gradients into `g` given `dout = dL/d(output)`.
pub(crate) fn backward<T: Real>(
    p: &ModelParams<T>,
    prep: &Prepared<T>,
    tape: &Tape<T>,
    z: &TokenGrid<T>,
    cond: &Conditioning<T>,
    dout: &[T],
    g: &mut ModelParams<T>,
) {
    let cfg = &p.cfg;
    let (d, din) = (cfg.d_model, cfg.token_dim);
    let i = &p.idx;
    let n = prep.n_latent;
    let rows = prep.total();
    let silu_c = [tape.time[0].silu_c.as_slice(), tape.time[1].silu_c.as_slice()];
    let mut dsilu = [vec![T::zero(); d], vec![T::zero(); d]];

    // Final projection and modulation (latent rows, live branch).
    let mut dxf = vec![T::zero(); n * d];
    {
        let (dw, db) = g.two_mut(i.w_out, i.b_out);
        linear_backward(&tape.xf, n, d, p.t(i.w_out), din, dout, dw, Some(db), Some(&mut dxf));
    }
    let mods_f = [tape.mod_f.clone(), Vec::new()];
    let mut dmods_f = [vec![T::zero(); 2 * d], Vec::new()];
    let daf = modulate_backward(&tape.af, &dxf, d, n, &mods_f, &mut dmods_f, 0, 1);
    let mut dh = vec![T::zero(); rows * d];
    layer_norm_backward(&tape.af, &tape.rstd_f, &daf, d, &mut dh[..n * d]);
    {
        let (dw, db) = g.two_mut(i.f_mod_w, i.f_mod_b);
        linear_backward(silu_c[0], 1, d, p.t(i.f_mod_w), 2 * d, &dmods_f[0], dw, Some(db), Some(&mut dsilu[0]));
    }

    for l in (0..tape.layers.len()).rev() {
        layer_backward(p, g, l, &tape.layers[l], prep, &mut dh, &mut dsilu, silu_c);
    }

    time_backward(p, g, &tape.time[0], &dsilu[0]);
    time_backward(p, g, &tape.time[1], &dsilu[1]);

    // Input embeddings.
    {
        let (dw, db) = g.two_mut(i.w_in, i.b_in);
        linear_backward(&z.data, n, din, p.t(i.w_in), d, &dh[..n * d], dw, Some(&mut *db), None);
        let mut r0 = n + prep.n_style;
        for grp in &cond.groups {
            let m = grp.tokens.len();
            linear_backward(&grp.tokens.data, m, din, p.t(i.w_in), d, &dh[r0 * d..(r0 + m) * d], dw, Some(&mut *db), None);
            r0 += m;
        }
    }
    let demb = g.t_mut(i.style_emb);
    for (s, &tok) in cond.style_tokens.iter().enumerate() {
        let r = n + s;
        crate::real::axpy(&mut demb[tok as usize * d..(tok as usize + 1) * d], T::one(), &dh[r * d..(r + 1) * d]);
    }
}
