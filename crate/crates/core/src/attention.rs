//! Joint attention over `[latent, style, C_1 .. C_n]` segments.
//!
//! Latent and style rows see every column; each condition segment sees only
//! its own columns. Masking is an additive `-1e9` bias before the softmax, so
//! a masked column contributes an exact zero and skipping it gives identical
//! results. Every visible set is a single contiguous column range, which the
//! model's kernels exploit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::real::{axpy, dot, gemm, Real, View, ViewMut};
use crate::tensor::Mat;

pub const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Latent,
    Style,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub len: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, kind: SegmentKind, len: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            len,
        }
    }
}

/// Ordered, contiguous token segments of one joint sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLayout {
    segments: Vec<Segment>,
    offsets: Vec<usize>,
    total: usize,
}

impl SegmentLayout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let latents = segments.iter().filter(|s| s.kind == SegmentKind::Latent).count();
        let styles = segments.iter().filter(|s| s.kind == SegmentKind::Style).count();
        if latents != 1 {
            return Err(Error::LayoutMismatch("exactly one latent segment required"));
        }
        if styles > 1 {
            return Err(Error::LayoutMismatch("at most one style segment allowed"));
        }
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for s in &segments {
            offsets.push(total);
            total += s.len;
        }
        Ok(Self {
            segments,
            offsets,
            total,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.segments[i].len
    }

    pub fn segment_of(&self, row: usize) -> usize {
        match self.offsets.binary_search(&row) {
            // zero-length segments share an offset with their successor
            Ok(mut i) => {
                while self.segments[i].len == 0 {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        }
    }

    /// Columns visible from `row`.
    pub fn visible_range(&self, row: usize) -> Range<usize> {
        let s = self.segment_of(row);
        match self.segments[s].kind {
            SegmentKind::Condition => self.range(s),
            _ => 0..self.total,
        }
    }

    pub fn len_of(&self, kind: SegmentKind) -> usize {
        self.segments.iter().filter(|s| s.kind == kind).map(|s| s.len).sum()
    }

    /// Number of latent and style tokens.
    pub fn live_len(&self) -> usize {
        self.total - self.len_of(SegmentKind::Condition)
    }

    /// True when every latent/style segment precedes every condition segment.
    pub fn is_live_first(&self) -> bool {
        let first_cond = self
            .segments
            .iter()
            .position(|s| s.kind == SegmentKind::Condition)
            .unwrap_or(self.segments.len());
        self.segments[first_cond..].iter().all(|s| s.kind == SegmentKind::Condition)
    }

    pub fn condition_segments(&self) -> Vec<Segment> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Condition)
            .cloned()
            .collect()
    }
}

/// Boolean `S x S` visibility matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl GroupMask {
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Keeps rows `lo..hi`.
    pub fn rows_slice(&self, lo: usize, hi: usize) -> GroupMask {
        GroupMask {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }
}

pub fn build_group_mask(layout: &SegmentLayout) -> GroupMask {
    let s = layout.total();
    let mut data = vec![false; s * s];
    for r in 0..s {
        for c in layout.visible_range(r) {
            data[r * s + c] = true;
        }
    }
    GroupMask { rows: s, cols: s, data }
}

/// Softmax probabilities of one query row over key rows `cols`.
///
/// `k` is row-major with row stride `stride`; the head's slice starts at `off`
/// and is `q.len()` wide. With `mask`, masked columns receive [`MASK_BIAS`].
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn row_probs<T: Real>(
    q: &[T],
    k: &[T],
    stride: usize,
    off: usize,
    cols: Range<usize>,
    mask: Option<&[bool]>,
    scale: T,
    probs: &mut [T],
) {
    let hd = q.len();
    let bias = T::from_f64(MASK_BIAS);
    let mut max = T::neg_infinity();
    for (p, j) in probs.iter_mut().zip(cols) {
        let mut s = dot(q, &k[j * stride + off..j * stride + off + hd]) * scale;
        if let Some(m) = mask {
            s += if m[j] { T::zero() } else { bias };
        }
        *p = s;
        if s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    let inv = T::one() / sum;
    for p in probs.iter_mut() {
        *p *= inv;
    }
}

/// `out = sum_j probs[j] * v[j]` over value rows `cols`, head slice `off..off + out.len()`.
#[inline]
pub(crate) fn weighted_sum<T: Real>(probs: &[T], v: &[T], stride: usize, off: usize, cols: Range<usize>, out: &mut [T]) {
    let hd = out.len();
    out.fill(T::zero());
    for (&p, j) in probs.iter().zip(cols) {
        axpy(out, p, &v[j * stride + off..j * stride + off + hd]);
    }
}

/// Single-head scaled dot-product attention with a boolean visibility mask.
pub fn masked_attention<T: Real>(q: &Mat<T>, k: &Mat<T>, v: &Mat<T>, mask: &GroupMask) -> Result<Mat<T>> {
    if q.cols != k.cols || k.rows != v.rows {
        return Err(Error::DimensionMismatch("attention operand shapes"));
    }
    if mask.rows != q.rows || mask.cols != k.rows {
        return Err(Error::DimensionMismatch("mask must be rows(Q) x rows(K)"));
    }
    if let Some(r) = (0..mask.rows).find(|&r| !mask.row(r).iter().any(|&b| b)) {
        return Err(Error::FullyMaskedRow(r));
    }
    let scale = T::one() / T::from_f64(q.cols as f64).sqrt();
    let mut out = Mat::zeros(q.rows, v.cols);
    let mut probs = vec![T::zero(); k.rows];
    for r in 0..q.rows {
        row_probs(q.row(r), &k.data, k.cols, 0, 0..k.rows, Some(mask.row(r)), scale, &mut probs);
        weighted_sum(&probs, &v.data, v.cols, 0, 0..k.rows, out.row_mut(r));
    }
    Ok(out)
}

/// Cached key/value rows of the condition tokens for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock<T> {
    k: Mat<T>,
    v: Mat<T>,
}

impl<T: Real> KvBlock<T> {
    pub fn keys(&self) -> &Mat<T> {
        &self.k
    }
    pub fn values(&self) -> &Mat<T> {
        &self.v
    }
    pub fn len(&self) -> usize {
        self.k.rows
    }
    pub fn is_empty(&self) -> bool {
        self.k.rows == 0
    }
}

/// Per-layer condition key/value blocks captured once and then read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKVCache<T> {
    condition_segments: Vec<Segment>,
    blocks: Vec<KvBlock<T>>,
}

impl<T: Real> LayerKVCache<T> {
    pub fn new(layout: &SegmentLayout, blocks: Vec<KvBlock<T>>) -> Result<Self> {
        let n = layout.len_of(SegmentKind::Condition);
        if blocks.iter().any(|b| b.len() != n) {
            return Err(Error::LayoutMismatch("cached block length differs from condition token count"));
        }
        Ok(Self {
            condition_segments: layout.condition_segments(),
            blocks,
        })
    }

    pub fn layer(&self, l: usize) -> &KvBlock<T> {
        &self.blocks[l]
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn condition_segments(&self) -> &[Segment] {
        &self.condition_segments
    }

    pub fn condition_len(&self) -> usize {
        self.condition_segments.iter().map(|s| s.len).sum()
    }

    pub(crate) fn check_layout(&self, layout: &SegmentLayout) -> Result<()> {
        if !layout.is_live_first() {
            return Err(Error::LayoutMismatch("condition segments must follow latent and style"));
        }
        if layout.condition_segments() != self.condition_segments {
            return Err(Error::LayoutMismatch("cache was captured for different condition segments"));
        }
        Ok(())
    }
}

/// Copies the condition rows of a layer's keys and values.
pub fn capture_cache<T: Real>(k: &Mat<T>, v: &Mat<T>, layout: &SegmentLayout) -> Result<KvBlock<T>> {
    if k.rows != layout.total() || v.rows != layout.total() {
        return Err(Error::LayoutMismatch("K/V rows differ from layout length"));
    }
    if !layout.is_live_first() {
        return Err(Error::LayoutMismatch("condition segments must follow latent and style"));
    }
    let lo = layout.live_len();
    Ok(KvBlock {
        k: k.rows_slice(lo, layout.total()),
        v: v.rows_slice(lo, layout.total()),
    })
}

/// Attention of the live (latent + style) rows over `[live || cached]` keys.
pub fn attend_with_cache<T: Real>(
    q_live: &Mat<T>,
    k_live: &Mat<T>,
    v_live: &Mat<T>,
    cache: &KvBlock<T>,
    layout: &SegmentLayout,
) -> Result<Mat<T>> {
    if !layout.is_live_first() {
        return Err(Error::LayoutMismatch("condition segments must follow latent and style"));
    }
    if q_live.rows != layout.live_len() || k_live.rows != layout.live_len() || v_live.rows != layout.live_len() {
        return Err(Error::LayoutMismatch("live rows differ from latent + style length"));
    }
    if cache.len() != layout.len_of(SegmentKind::Condition) {
        return Err(Error::LayoutMismatch("cache length differs from condition token count"));
    }
    let k = k_live.vstack(&cache.k);
    let v = v_live.vstack(&cache.v);
    let mask = build_group_mask(layout).rows_slice(0, layout.live_len());
    masked_attention(q_live, &k, &v, &mask)
}

/// Probabilities retained by [`mha_forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct AttnProbs<T> {
    pub row_offsets: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    pub total: usize,
    pub probs: Vec<T>,
}

fn softmax_rows<T: Real>(p: &mut [T], width: usize) {
    for row in p.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Maximal runs of consecutive rows that see the same key range.
fn runs(ranges: &[Range<usize>]) -> Vec<(Range<usize>, Range<usize>)> {
    let mut out: Vec<(Range<usize>, Range<usize>)> = Vec::new();
    for (r, range) in ranges.iter().enumerate() {
        match out.last_mut() {
            Some((rows, keys)) if keys == range => rows.end = r + 1,
            _ => out.push((r..r + 1, range.clone())),
        }
    }
    out
}

/// Multi-head attention where row `r` of `q` sees key rows `ranges[r]`.
///
/// `q` is `ranges.len() x d`, `k`/`v` are `n_k x d`; heads occupy consecutive
/// `hd`-wide column blocks.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    n_heads: usize,
    ranges: &[Range<usize>],
    keep_probs: bool,
    out: &mut [T],
) -> AttnProbs<T> {
    let hd = d / n_heads;
    let scale = T::one() / T::from_f64(hd as f64).sqrt();
    let mut row_offsets = Vec::with_capacity(ranges.len());
    let mut total = 0;
    for r in ranges {
        row_offsets.push(total);
        total += r.len();
    }
    let runs = runs(ranges);
    let mut probs = if keep_probs { vec![T::zero(); total * n_heads] } else { Vec::new() };
    let mut scratch = if keep_probs {
        Vec::new()
    } else {
        vec![T::zero(); runs.iter().map(|(r, k)| r.len() * k.len()).max().unwrap_or(0)]
    };
    for (rows, keys) in &runs {
        let (m, l) = (rows.len(), keys.len());
        for h in 0..n_heads {
            let off = h * hd;
            let p: &mut [T] = if keep_probs {
                let base = h * total + row_offsets[rows.start];
                &mut probs[base..base + m * l]
            } else {
                &mut scratch[..m * l]
            };
            let qh = View::rows(&q[rows.start * d + off..], d);
            let kh = View::cols(&k[keys.start * d + off..], d);
            gemm((m, hd, l), scale, qh, kh, T::zero(), ViewMut::rows(p, l));
            softmax_rows(p, l);
            let vh = View::rows(&v[keys.start * d + off..], d);
            let oh = ViewMut::rows(&mut out[rows.start * d + off..], d);
            gemm((m, l, hd), T::one(), View::rows(p, l), vh, T::zero(), oh);
        }
    }
    AttnProbs {
        row_offsets,
        ranges: ranges.to_vec(),
        total,
        probs,
    }
}

/// Backward of [`mha_forward`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    n_heads: usize,
    saved: &AttnProbs<T>,
    dout: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let hd = d / n_heads;
    let scale = T::one() / T::from_f64(hd as f64).sqrt();
    let runs = runs(&saved.ranges);
    let mut ds = vec![T::zero(); runs.iter().map(|(r, k)| r.len() * k.len()).max().unwrap_or(0)];
    for (rows, keys) in &runs {
        let (m, l) = (rows.len(), keys.len());
        for h in 0..n_heads {
            let off = h * hd;
            let base = h * saved.total + saved.row_offsets[rows.start];
            let p = &saved.probs[base..base + m * l];
            let ds = &mut ds[..m * l];
            let doh = View::rows(&dout[rows.start * d + off..], d);
            gemm((m, hd, l), T::one(), doh, View::cols(&v[keys.start * d + off..], d), T::zero(), ViewMut::rows(ds, l));
            for (g, pr) in ds.chunks_exact_mut(l).zip(p.chunks_exact(l)) {
                let s = dot(pr, g);
                for (gi, &pi) in g.iter_mut().zip(pr) {
                    *gi = pi * (*gi - s) * scale;
                }
            }
            let kv_rows = keys.start * d + off;
            gemm(
                (m, l, hd),
                T::one(),
                View::rows(ds, l),
                View::rows(&k[kv_rows..], d),
                T::one(),
                ViewMut::rows(&mut dq[rows.start * d + off..], d),
            );
            gemm(
                (l, m, hd),
                T::one(),
                View::cols(ds, l),
                View::rows(&q[rows.start * d + off..], d),
                T::one(),
                ViewMut::rows(&mut dk[kv_rows..], d),
            );
            gemm((l, m, hd), T::one(), View::cols(p, l), doh, T::one(), ViewMut::rows(&mut dv[kv_rows..], d));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(specs: &[(SegmentKind, usize)]) -> SegmentLayout {
        SegmentLayout::new(
            specs
                .iter()
                .enumerate()
                .map(|(i, &(k, n))| Segment::new(alloc::format!("s{i}"), k, n))
                .collect(),
        )
        .unwrap()
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    use SegmentKind::*;

    #[test]
    fn condition_rows_see_only_themselves() {
        let l = layout(&[(Latent, 4), (Style, 2), (Condition, 3)]);
        let m = build_group_mask(&l);
        for r in 0..6 {
            assert!(m.row(r).iter().all(|&b| b));
        }
        for r in 6..9 {
            assert_eq!(m.row(r).iter().filter(|&&b| b).count(), 3);
            assert!((6..9).all(|c| m.get(r, c)));
        }
    }

    #[test]
    fn no_conditions_is_dense() {
        let m = build_group_mask(&layout(&[(Latent, 3), (Style, 2)]));
        assert!(m.data.iter().all(|&b| b));
    }

    #[test]
    fn conditions_do_not_see_each_other() {
        let l = layout(&[(Latent, 2), (Condition, 2), (Condition, 3)]);
        let m = build_group_mask(&l);
        for r in 2..4 {
            for c in 4..7 {
                assert!(!m.get(r, c));
                assert!(!m.get(c, r));
            }
        }
    }

    #[test]
    fn layout_validation() {
        assert!(SegmentLayout::new(vec![Segment::new("c", Condition, 2)]).is_err());
        assert!(SegmentLayout::new(vec![
            Segment::new("z", Latent, 2),
            Segment::new("s", Style, 1),
            Segment::new("s2", Style, 1)
        ])
        .is_err());
        let l = layout(&[(Latent, 2), (Condition, 0), (Condition, 3)]);
        assert_eq!(l.segment_of(2), 2);
        assert_eq!(l.visible_range(4), 2..5);
        assert!(!layout(&[(Condition, 1), (Latent, 2)]).is_live_first());
    }

    #[test]
    fn single_visible_column_copies_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (q, k, v) = (rand_mat(&mut rng, 1, 6), rand_mat(&mut rng, 4, 6), rand_mat(&mut rng, 4, 6));
        let mask = GroupMask {
            rows: 1,
            cols: 4,
            data: vec![false, false, true, false],
        };
        let out = masked_attention(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.row(0), v.row(2));
    }

    #[test]
    fn all_visible_is_softmax_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k) = (rand_mat(&mut rng, 1, 4), rand_mat(&mut rng, 3, 4));
        let mask = GroupMask {
            rows: 1,
            cols: 3,
            data: vec![true; 3],
        };
        let out = masked_attention(&q, &k, &k, &mask).unwrap();
        let logits: Vec<f64> = (0..3).map(|j| dot(q.row(0), k.row(j)) / 2.0).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..4 {
            let want: f64 = (0..3).map(|j| logits[j].exp() / z * k.get(j, c)).sum();
            assert!((out.get(0, c) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_rejected() {
        let m = Mat::<f64>::zeros(2, 3);
        let mask = GroupMask {
            rows: 2,
            cols: 2,
            data: vec![true, false, false, false],
        };
        assert_eq!(masked_attention(&m, &m, &m, &mask), Err(Error::FullyMaskedRow(1)));
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = layout(&[(Latent, 5), (Style, 2), (Condition, 4), (Condition, 3)]);
        let n = l.total();
        let (q, k) = (rand_mat(&mut rng, n, 6), rand_mat(&mut rng, n, 6));
        let ones = Mat::from_vec(n, 6, vec![1.0; n * 6]);
        let out = masked_attention(&q, &k, &ones, &build_group_mask(&l)).unwrap();
        assert!(out.data.iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn cache_matches_explicit_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for conds in [vec![], vec![3], vec![2, 4]] {
            let mut specs = vec![(Latent, 5), (Style, 2)];
            specs.extend(conds.iter().map(|&n| (Condition, n)));
            let l = layout(&specs);
            let n = l.total();
            let (q, k, v) = (rand_mat(&mut rng, n, 6), rand_mat(&mut rng, n, 6), rand_mat(&mut rng, n, 6));
            let mut block = capture_cache(&k, &v, &l).unwrap();
            let live = l.live_len();
            let cached = attend_with_cache(
                &q.rows_slice(0, live),
                &k.rows_slice(0, live),
                &v.rows_slice(0, live),
                &block,
                &l,
            )
            .unwrap();
            let full = masked_attention(&q, &k, &v, &build_group_mask(&l)).unwrap();
            assert_eq!(cached, full.rows_slice(0, live));
            // the block owns its copy
            let before = block.clone();
            let mut k2 = k.clone();
            k2.data.fill(7.0);
            assert_eq!(block, before);
            block = capture_cache(&k2, &v, &l).unwrap();
            assert_eq!(block.len(), n - live);
        }
    }

    #[test]
    fn cache_layout_mismatch_rejected() {
        let l = layout(&[(Latent, 2), (Condition, 2)]);
        let l2 = layout(&[(Latent, 2), (Condition, 3)]);
        let m = Mat::<f64>::zeros(4, 6);
        let block = capture_cache(&m, &m, &l).unwrap();
        let live = Mat::<f64>::zeros(2, 6);
        assert!(attend_with_cache(&live, &live, &live, &block, &l2).is_err());
        assert!(capture_cache(&Mat::<f64>::zeros(5, 6), &m, &l).is_err());
    }

    #[test]
    fn mha_matches_dense_mask_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = layout(&[(Latent, 4), (Style, 1), (Condition, 3), (Condition, 2)]);
        let (n, d, heads) = (l.total(), 12, 2);
        let (q, k, v) = (rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d));
        let ranges: Vec<_> = (0..n).map(|r| l.visible_range(r)).collect();
        let mut out = vec![0.0; n * d];
        mha_forward(&q.data, &k.data, &v.data, d, heads, &ranges, false, &mut out);
        let mask = build_group_mask(&l);
        for h in 0..heads {
            let cols = |m: &Mat<f64>| {
                Mat::from_vec(n, 6, (0..n).flat_map(|r| m.row(r)[h * 6..h * 6 + 6].to_vec()).collect())
            };
            let dense = masked_attention(&cols(&q), &cols(&k), &cols(&v), &mask).unwrap();
            for r in 0..n {
                for (x, y) in out[r * d + h * 6..r * d + h * 6 + 6].iter().zip(dense.row(r)) {
                    assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn mha_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = layout(&[(Latent, 3), (Condition, 2)]);
        let (n, d, heads) = (l.total(), 6, 2);
        let ranges: Vec<_> = (0..n).map(|r| l.visible_range(r)).collect();
        let (q, k, v) = (rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d));
        let w = rand_mat(&mut rng, n, d);
        let loss = |q: &[f64], k: &[f64], v: &[f64]| {
            let mut out = vec![0.0; n * d];
            mha_forward(q, k, v, d, heads, &ranges, false, &mut out);
            out.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut out = vec![0.0; n * d];
        let saved = mha_forward(&q.data, &k.data, &v.data, d, heads, &ranges, true, &mut out);
        let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        mha_backward(&q.data, &k.data, &v.data, d, heads, &saved, &w.data, &mut dq, &mut dk, &mut dv);
        let eps = 1e-6;
        for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
            for i in 0..n * d {
                let mut bufs = [q.data.clone(), k.data.clone(), v.data.clone()];
                bufs[which][i] += eps;
                let lp = loss(&bufs[0], &bufs[1], &bufs[2]);
                bufs[which][i] -= 2.0 * eps;
                let lm = loss(&bufs[0], &bufs[1], &bufs[2]);
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - grad[i]).abs() < 1e-7, "operand {which} idx {i}: {fd} vs {}", grad[i]);
            }
        }
    }
}
