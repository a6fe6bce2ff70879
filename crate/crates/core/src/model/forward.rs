//! Forward passes: full (optionally taped for backprop, traced, or capturing
//! the condition KV cache) and cached (live rows against captured keys).

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::layers::{gelu, layer_norm, silu, timestep_features};
use super::params::{LayerIndex, ModelParams};
use super::{Conditioning, ForwardOptions};
use crate::attention::{self, AttnProbs, KvBlock, LayerKVCache, Segment, SegmentKind, SegmentLayout};
use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rope::{coords_for_latent, Rope3DCoord, RopeTable};
use crate::tensor::{linear, Mat};

/// Sequence layout, rotary tables and visibility ranges for one
/// `(latent shape, conditioning, options)` combination.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub layout: SegmentLayout,
    pub latent_shape: (usize, usize),
    pub n_latent: usize,
    pub n_style: usize,
    pub n_live: usize,
    pub(crate) rope: RopeTable<T>,
    pub(crate) ranges: Vec<Range<usize>>,
}

impl<T> Prepared<T> {
    pub fn total(&self) -> usize {
        self.layout.total()
    }
    pub fn n_condition(&self) -> usize {
        self.layout.total() - self.n_live
    }
}

pub fn prepare<T: Real>(
    params: &ModelParams<T>,
    latent_shape: (usize, usize),
    cond: &Conditioning<T>,
) -> Result<Prepared<T>> {
    let cfg = &params.cfg;
    let (h, w) = latent_shape;
    if h == 0 || w == 0 {
        return Err(Error::DimensionMismatch("empty latent grid"));
    }
    if cond.style_tokens.iter().any(|&t| t as usize >= cfg.style_vocab) {
        return Err(Error::InvalidConfig("style token outside vocabulary"));
    }
    let mut ids: Vec<u32> = Vec::with_capacity(cond.groups.len());
    let mut segments = vec![
        Segment::new("z_t", SegmentKind::Latent, h * w),
        Segment::new("style", SegmentKind::Style, cond.style_tokens.len()),
    ];
    for g in &cond.groups {
        if ids.contains(&g.id) {
            return Err(Error::DuplicateGroupId(g.id));
        }
        ids.push(g.id);
        if g.tokens.d != cfg.token_dim {
            return Err(Error::DimensionMismatch("condition token width differs from model token_dim"));
        }
        if g.coords.len() != g.tokens.len() {
            return Err(Error::Rope("condition coordinates do not match its token count"));
        }
        segments.push(Segment::new(alloc::format!("c{}", g.id), SegmentKind::Condition, g.tokens.len()));
    }
    let layout = SegmentLayout::new(segments)?;
    let rope_cfg = cfg.rope();
    let mut coords = coords_for_latent(h, w);
    coords.extend(core::iter::repeat_n(Rope3DCoord::ORIGIN, cond.style_tokens.len()));
    let mut rope = RopeTable::new(&rope_cfg, &coords);
    for g in &cond.groups {
        if cfg.rope_on_conditions {
            rope.append(&RopeTable::new(&rope_cfg, &g.coords));
        } else {
            rope.append(&RopeTable::identity(&rope_cfg, g.tokens.len()));
        }
    }
    let ranges = (0..layout.total()).map(|r| layout.visible_range(r)).collect();
    Ok(Prepared {
        n_latent: h * w,
        n_style: cond.style_tokens.len(),
        n_live: layout.live_len(),
        latent_shape,
        layout,
        rope,
        ranges,
    })
}

pub(crate) struct TimeTape<T> {
    pub feats: Vec<T>,
    pub pre: Vec<T>,
    pub c: Vec<T>,
    pub silu_c: Vec<T>,
}

pub(crate) struct LayerTape<T> {
    pub mods: [Vec<T>; 2],
    pub a: Vec<T>,
    pub rstd: Vec<T>,
    pub x: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub probs: AttnProbs<T>,
    pub o: Vec<T>,
    pub y: Vec<T>,
    pub a2: Vec<T>,
    pub rstd2: Vec<T>,
    pub x2: Vec<T>,
    pub u: Vec<T>,
    pub m: Vec<T>,
    pub y2: Vec<T>,
}

pub(crate) struct Tape<T> {
    /// `[live, condition]` timestep branches.
    pub time: [TimeTape<T>; 2],
    pub layers: Vec<LayerTape<T>>,
    pub mod_f: Vec<T>,
    pub af: Vec<T>,
    pub rstd_f: Vec<T>,
    pub xf: Vec<T>,
}

pub(crate) struct Outputs<T> {
    pub out: TokenGrid<T>,
    pub tape: Option<Tape<T>>,
    pub trace: Vec<Mat<T>>,
    pub cache: Vec<KvBlock<T>>,
}

#[derive(Clone, Copy, Default)]
pub(crate) struct Mode {
    pub tape: bool,
    pub trace: bool,
    pub capture: bool,
}

pub(crate) fn time_embed<T: Real>(p: &ModelParams<T>, t: T) -> TimeTape<T> {
    let d = p.cfg.d_model;
    let i = &p.idx;
    let feats = timestep_features(t, p.cfg.time_freq_dim);
    let mut pre = vec![T::zero(); d];
    linear(&feats, 1, feats.len(), p.t(i.t_w1), d, Some(p.t(i.t_b1)), &mut pre);
    let hidden: Vec<T> = pre.iter().map(|&v| silu(v)).collect();
    let mut c = vec![T::zero(); d];
    linear(&hidden, 1, d, p.t(i.t_w2), d, Some(p.t(i.t_b2)), &mut c);
    let silu_c = c.iter().map(|&v| silu(v)).collect();
    TimeTape { feats, pre, c, silu_c }
}

fn modulation<T: Real>(p: &ModelParams<T>, silu_c: &[T], w: usize, b: usize, width: usize) -> Vec<T> {
    let d = p.cfg.d_model;
    let mut out = vec![T::zero(); width];
    linear(silu_c, 1, d, p.t(w), width, Some(p.t(b)), &mut out);
    out
}

/// `a * (1 + scale) + shift`, choosing the live or condition modulation per row.
fn modulate<T: Real>(a: &[T], d: usize, n_live: usize, mods: &[&[T]; 2], shift: usize, scale: usize) -> Vec<T> {
    let mut x = vec![T::zero(); a.len()];
    for r in 0..a.len() / d {
        let m = mods[(r >= n_live) as usize];
        let (sh, sc) = (&m[shift * d..(shift + 1) * d], &m[scale * d..(scale + 1) * d]);
        for j in 0..d {
            x[r * d + j] = a[r * d + j] * (T::one() + sc[j]) + sh[j];
        }
    }
    x
}

fn add_gated<T: Real>(h: &mut [T], y: &[T], d: usize, n_live: usize, mods: &[&[T]; 2], gate: usize) {
    for r in 0..h.len() / d {
        let g = &mods[(r >= n_live) as usize][gate * d..(gate + 1) * d];
        for j in 0..d {
            h[r * d + j] += g[j] * y[r * d + j];
        }
    }
}

fn rotate_rows<T: Real>(buf: &mut [T], d: usize, n_heads: usize, rope: &RopeTable<T>, row0: usize) {
    let hd = d / n_heads;
    for r in 0..buf.len() / d {
        for hh in 0..n_heads {
            rope.rotate(&mut buf[r * d + hh * hd..r * d + (hh + 1) * hd], row0 + r, false);
        }
    }
}

fn embed_inputs<T: Real>(p: &ModelParams<T>, z: &TokenGrid<T>, cond: &Conditioning<T>, rows: usize) -> Vec<T> {
    let (d, din) = (p.cfg.d_model, p.cfg.token_dim);
    let i = &p.idx;
    let mut h = vec![T::zero(); rows * d];
    let n = z.len();
    linear(&z.data, n, din, p.t(i.w_in), d, Some(p.t(i.b_in)), &mut h[..n * d]);
    let emb = p.t(i.style_emb);
    for (s, &tok) in cond.style_tokens.iter().enumerate() {
        let r = n + s;
        h[r * d..(r + 1) * d].copy_from_slice(&emb[tok as usize * d..(tok as usize + 1) * d]);
    }
    let mut r0 = n + cond.style_tokens.len();
    for g in &cond.groups {
        let m = g.tokens.len();
        if r0 >= rows {
            break;
        }
        linear(&g.tokens.data, m, din, p.t(i.w_in), d, Some(p.t(i.b_in)), &mut h[r0 * d..(r0 + m) * d]);
        r0 += m;
    }
    h
}

struct BlockOut<T> {
    tape: Option<LayerTape<T>>,
    k: Vec<T>,
    v: Vec<T>,
}

/// One transformer block over `h` (rows `0..n_live` live, the rest
/// condition rows). `extra_kv` appends cached condition keys/values.
#[allow(clippy::too_many_arguments)]
fn block<T: Real>(
    p: &ModelParams<T>,
    li: &LayerIndex,
    h: &mut [T],
    n_live: usize,
    mods: [Vec<T>; 2],
    rope: &RopeTable<T>,
    ranges: &[Range<usize>],
    extra_kv: Option<&KvBlock<T>>,
    keep: bool,
) -> BlockOut<T> {
    let cfg = &p.cfg;
    let (d, nh, md) = (cfg.d_model, cfg.n_heads, cfg.mlp_dim());
    let rows = h.len() / d;
    let mref: [&[T]; 2] = [&mods[0], &mods[1]];

    let (a, rstd) = layer_norm(h, d);
    let x = modulate(&a, d, n_live, &mref, 0, 1);
    let mut q = vec![T::zero(); rows * d];
    let mut k = vec![T::zero(); rows * d];
    let mut v = vec![T::zero(); rows * d];
    linear(&x, rows, d, p.t(li.wq), d, Some(p.t(li.bq)), &mut q);
    linear(&x, rows, d, p.t(li.wk), d, Some(p.t(li.bk)), &mut k);
    linear(&x, rows, d, p.t(li.wv), d, Some(p.t(li.bv)), &mut v);
    rotate_rows(&mut q, d, nh, rope, 0);
    rotate_rows(&mut k, d, nh, rope, 0);

    let mut o = vec![T::zero(); rows * d];
    let probs = match extra_kv {
        Some(kv) => {
            let mut kk = k.clone();
            kk.extend_from_slice(&kv.keys().data);
            let mut vv = v.clone();
            vv.extend_from_slice(&kv.values().data);
            attention::mha_forward(&q, &kk, &vv, d, nh, ranges, keep, &mut o)
        }
        None => attention::mha_forward(&q, &k, &v, d, nh, ranges, keep, &mut o),
    };
    let mut y = vec![T::zero(); rows * d];
    linear(&o, rows, d, p.t(li.wo), d, Some(p.t(li.bo)), &mut y);
    add_gated(h, &y, d, n_live, &mref, 2);

    let (a2, rstd2) = layer_norm(h, d);
    let x2 = modulate(&a2, d, n_live, &mref, 3, 4);
    let mut u = vec![T::zero(); rows * md];
    linear(&x2, rows, d, p.t(li.w1), md, Some(p.t(li.b1)), &mut u);
    let m: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
    let mut y2 = vec![T::zero(); rows * d];
    linear(&m, rows, md, p.t(li.w2), d, Some(p.t(li.b2)), &mut y2);
    add_gated(h, &y2, d, n_live, &mref, 5);

    let tape = keep.then(|| LayerTape {
        mods,
        a,
        rstd,
        x,
        q,
        k: k.clone(),
        v: v.clone(),
        probs,
        o,
        y,
        a2,
        rstd2,
        x2,
        u,
        m,
        y2,
    });
    BlockOut { tape, k, v }
}

fn final_layer<T: Real>(p: &ModelParams<T>, h_latent: &[T], silu_c: &[T], shape: (usize, usize)) -> (TokenGrid<T>, [Vec<T>; 4]) {
    let (d, din) = (p.cfg.d_model, p.cfg.token_dim);
    let i = &p.idx;
    let n = h_latent.len() / d;
    let mod_f = modulation(p, silu_c, i.f_mod_w, i.f_mod_b, 2 * d);
    let (af, rstd_f) = layer_norm(h_latent, d);
    let xf = modulate(&af, d, n, &[&mod_f, &mod_f], 0, 1);
    let mut out = vec![T::zero(); n * din];
    linear(&xf, n, d, p.t(i.w_out), din, Some(p.t(i.b_out)), &mut out);
    let grid = TokenGrid {
        h: shape.0,
        w: shape.1,
        d: din,
        data: out,
    };
    (grid, [mod_f, af, rstd_f, xf])
}

pub(crate) fn check_latent<T: Real>(p: &ModelParams<T>, prep: &Prepared<T>, z: &TokenGrid<T>) -> Result<()> {
    if (z.h, z.w) != prep.latent_shape || z.d != p.cfg.token_dim {
        return Err(Error::ShapeMismatch {
            expected: (prep.latent_shape.0, prep.latent_shape.1, p.cfg.token_dim),
            got: z.shape(),
        });
    }
    Ok(())
}

pub(crate) fn run_full<T: Real>(
    p: &ModelParams<T>,
    prep: &Prepared<T>,
    z: &TokenGrid<T>,
    t: T,
    cond: &Conditioning<T>,
    opts: &ForwardOptions<T>,
    mode: Mode,
) -> Result<Outputs<T>> {
    check_latent(p, prep, z)?;
    let d = p.cfg.d_model;
    let rows = prep.total();
    let mut h = embed_inputs(p, z, cond, rows);
    let time_live = time_embed(p, t);
    let time_cond = match opts.condition_t {
        Some(tc) => time_embed(p, tc),
        None => time_embed(p, t),
    };
    let mut layers = Vec::new();
    let mut trace = Vec::new();
    let mut cache = Vec::new();
    for li in &p.idx.layers {
        let mods = [
            modulation(p, &time_live.silu_c, li.mod_w, li.mod_b, 6 * d),
            modulation(p, &time_cond.silu_c, li.mod_w, li.mod_b, 6 * d),
        ];
        let out = block(p, li, &mut h, prep.n_live, mods, &prep.rope, &prep.ranges, None, mode.tape);
        if mode.capture {
            let k = Mat::from_vec(rows, d, out.k);
            let v = Mat::from_vec(rows, d, out.v);
            cache.push(attention::capture_cache(&k, &v, &prep.layout)?);
        }
        if let Some(tp) = out.tape {
            layers.push(tp);
        }
        if mode.trace {
            trace.push(Mat::from_vec(rows, d, h.clone()));
        }
    }
    let (out, [mod_f, af, rstd_f, xf]) = final_layer(p, &h[..prep.n_latent * d], &time_live.silu_c, prep.latent_shape);
    let tape = mode.tape.then_some(Tape {
        time: [time_live, time_cond],
        layers,
        mod_f,
        af,
        rstd_f,
        xf,
    });
    Ok(Outputs {
        out,
        tape,
        trace,
        cache,
    })
}

/// Forward over the live rows only, attending to cached condition keys/values.
pub(crate) fn run_cached<T: Real>(
    p: &ModelParams<T>,
    prep: &Prepared<T>,
    z: &TokenGrid<T>,
    t: T,
    cond_style: &[u32],
    cache: &LayerKVCache<T>,
) -> Result<TokenGrid<T>> {
    check_latent(p, prep, z)?;
    cache.check_layout(&prep.layout)?;
    if cache.num_layers() != p.cfg.n_layers {
        return Err(Error::LayoutMismatch("cache depth differs from model depth"));
    }
    if cond_style.len() != prep.n_style {
        return Err(Error::LayoutMismatch("style length differs from prepared layout"));
    }
    let d = p.cfg.d_model;
    let live = Conditioning {
        style_tokens: cond_style.to_vec(),
        groups: Vec::new(),
    };
    let mut h = embed_inputs(p, z, &live, prep.n_live);
    let time_live = time_embed(p, t);
    let full = 0..prep.total();
    let ranges: Vec<Range<usize>> = (0..prep.n_live).map(|_| full.clone()).collect();
    for (l, li) in p.idx.layers.iter().enumerate() {
        let m = modulation(p, &time_live.silu_c, li.mod_w, li.mod_b, 6 * d);
        block(
            p,
            li,
            &mut h,
            prep.n_live,
            [m, Vec::new()],
            &prep.rope,
            &ranges,
            Some(cache.layer(l)),
            false,
        );
    }
    let (out, _) = final_layer(p, &h[..prep.n_latent * d], &time_live.silu_c, prep.latent_shape);
    Ok(out)
}
