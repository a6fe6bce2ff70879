//! Paired image metrics and rule-based scores on the synthetic task.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::image::{Image, Mask};
use crate::model::PromoDiT;
use crate::pipeline::{generate, CondSettings};
use crate::sampler::SamplerConfig;
use crate::synth::{gen_sample, palette_rgb, Pattern, SynthConfig, TryOnSample, PALETTE_SIZE};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5) and
/// data range 1. Images smaller than the window use a single global window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w, ch) = a.shape();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let g = gaussian_window();
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = a.plane(c).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
        let map = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect() };
        let planes = [map(&|x, _| x), map(&|_, y| y), map(&|x, _| x * x), map(&|_, y| y * y), map(&|x, y| x * y)];
        let stats: Vec<Vec<f64>> = if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
            planes.iter().map(|p| filter(p, h, w, &g).0).collect()
        } else {
            planes.iter().map(|p| vec![p.iter().sum::<f64>() / p.len() as f64]).collect()
        };
        let n = stats[0].len();
        let mut acc = 0.0;
        let [s0, s1, s2, s3, s4] = [&stats[0], &stats[1], &stats[2], &stats[3], &stats[4]];
        for ((((&mx, &my), &sxx), &syy), &sxy) in s0.iter().zip(s1).zip(s2).zip(s3).zip(s4) {
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / ch as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum();
    Ok(s / a.data.len() as f64)
}

/// PSNR in dB for data range 1; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * libm::log10(m)
    }
}

fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Index of the nearest palette color in RGB.
pub fn nearest_palette(rgb: [f32; 3]) -> u8 {
    let mut best = (0u8, f32::INFINITY);
    for c in 0..PALETTE_SIZE as u8 {
        let d = dist2(rgb, palette_rgb(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Majority nearest-palette color over the pixels of `region`.
pub fn dominant_color(img: &Image, region: &Mask) -> Option<u8> {
    let mut votes = [0usize; PALETTE_SIZE];
    for y in 0..region.height {
        for x in 0..region.width {
            if region.get(y, x) {
                votes[nearest_palette(img.pixel(y, x)) as usize] += 1;
            }
        }
    }
    if votes.iter().all(|&v| v == 0) {
        return None;
    }
    let mut best = 0;
    for c in 1..PALETTE_SIZE {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    Some(best as u8)
}

/// Per-slot garment colour check: `(matched, total)`.
pub fn garment_assignment(output: &Image, sample: &TryOnSample) -> Result<(usize, usize)> {
    output.check_same_shape(&sample.target)?;
    let mut matched = 0;
    for (spec, region) in sample.garment_specs.iter().zip(&sample.garment_regions) {
        if dominant_color(output, region) == Some(spec.color_id) {
            matched += 1;
        }
    }
    Ok((matched, sample.garment_specs.len()))
}

pub fn garment_assignment_acc(output: &Image, sample: &TryOnSample) -> Result<f64> {
    let (m, t) = garment_assignment(output, sample)?;
    Ok(m as f64 / t.max(1) as f64)
}

/// Whether the region reads as patterned: more than 10% of the pixels closest
/// to the requested color are nearer its shaded variant.
fn looks_patterned(img: &Image, region: &Mask, color_id: u8) -> bool {
    let base = palette_rgb(color_id);
    let shade = base.map(|v| v * 0.75);
    let (mut on, mut shaded) = (0usize, 0usize);
    for y in 0..region.height {
        for x in 0..region.width {
            if region.get(y, x) {
                let p = img.pixel(y, x);
                if nearest_palette(p) == color_id || dist2(p, shade) < dist2(p, base) {
                    on += 1;
                    shaded += (dist2(p, shade) < dist2(p, base)) as usize;
                }
            }
        }
    }
    on > 0 && shaded * 10 > on
}

/// Per-slot check that solid garments render solid and patterned ones patterned.
pub fn style_compliance(output: &Image, sample: &TryOnSample) -> Result<(usize, usize)> {
    output.check_same_shape(&sample.target)?;
    let mut ok = 0;
    for (spec, region) in sample.garment_specs.iter().zip(&sample.garment_regions) {
        if looks_patterned(output, region, spec.color_id) == (spec.pattern != Pattern::Solid) {
            ok += 1;
        }
    }
    Ok((ok, sample.garment_specs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub seed: u64,
    pub n_garments: usize,
    pub ssim: f64,
    pub mse: f64,
    pub matched: usize,
    pub compliant: usize,
}

impl SampleScore {
    pub fn score(output: &Image, sample: &TryOnSample) -> Result<Self> {
        let (matched, n) = garment_assignment(output, sample)?;
        Ok(Self {
            seed: sample.seed,
            n_garments: n,
            ssim: ssim(output, &sample.target)?,
            mse: mse(output, &sample.target)?,
            matched,
            compliant: style_compliance(output, sample)?.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub ssim: f64,
    /// PSNR of the mean squared error over all samples.
    pub psnr: f64,
    pub garment_assignment_acc: f64,
    pub style_compliance_acc: f64,
    pub n: usize,
}

impl EvalReport {
    /// Slot-level accuracies pooled over samples; `None` for an empty set.
    pub fn from_scores(scores: &[SampleScore]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len();
        let slots: usize = scores.iter().map(|s| s.n_garments).sum::<usize>().max(1);
        Some(Self {
            ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n as f64,
            psnr: psnr_from_mse(scores.iter().map(|s| s.mse).sum::<f64>() / n as f64),
            garment_assignment_acc: scores.iter().map(|s| s.matched).sum::<usize>() as f64 / slots as f64,
            style_compliance_acc: scores.iter().map(|s| s.compliant).sum::<usize>() as f64 / slots as f64,
            n,
        })
    }
}

/// Generates and scores every seed. The sampler seed of each trajectory is
/// `sampler.seed ^ sample seed`.
pub fn evaluate(
    model: &PromoDiT<f32>,
    seeds: impl IntoIterator<Item = u64>,
    synth: &SynthConfig,
    cond: CondSettings,
    null_style: bool,
    sampler: &SamplerConfig,
) -> Result<Vec<SampleScore>> {
    let mut out = Vec::new();
    for seed in seeds {
        let sample = gen_sample(seed, synth)?;
        let sc = SamplerConfig {
            seed: sampler.seed ^ seed,
            ..sampler.clone()
        };
        let img = generate(model, &sample, cond, null_style, &sc)?;
        out.push(SampleScore::score(&img, &sample)?);
    }
    Ok(out)
}
