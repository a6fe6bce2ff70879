//! Procedural synthetic try-on corpus.
//!
//! Every sample is a pure function of `(seed, config)`: a stick-figure person
//! in an original outfit, one or two replacement garments as flat-lay images,
//! the agnostic mask, pose skeleton, body parsing mask, style attributes and
//! the target image with the replacement garments worn.

pub mod render;
pub mod style;

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

use render::{Figure, Pt};
pub use style::{
    palette_rgb, style_to_tokens, tokens_to_style, GarmentSpec, Length, Pattern, Slot, StyleAttrs, Tuck,
    L_TEXT, NULL_TOK, PALETTE_RGB8, PALETTE_SIZE, STYLE_VOCAB,
};

const SKIN_RGB8: [[u8; 3]; 4] = [[232, 196, 164], [204, 156, 120], [160, 112, 80], [112, 76, 56]];
const BACKGROUND_LEVELS: [u8; 4] = [200, 216, 228, 240];
const FLAT_BACKGROUND: f32 = 248.0 / 256.0;

fn rgb8(c: [u8; 3]) -> [f32; 3] {
    [c[0] as f32 / 256.0, c[1] as f32 / 256.0, c[2] as f32 / 256.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub garment_size: usize,
    pub max_garments: usize,
    pub style_null_rate: f64,
    /// Codec patch size the sample is destined for; only used for validation.
    pub patch_size: usize,
    /// Dilation of the garment silhouettes that forms the agnostic mask.
    pub mask_margin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            garment_size: 32,
            max_garments: 2,
            style_null_rate: 0.1,
            patch_size: 4,
            mask_margin: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let p2 = 2 * self.patch_size;
        if self.patch_size == 0 || !self.height.is_multiple_of(p2) || !self.width.is_multiple_of(p2) {
            return Err(Error::InvalidConfig("image height and width must be multiples of 2 * patch_size"));
        }
        if self.garment_size == 0 || !self.garment_size.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidConfig("garment size must be a multiple of patch_size"));
        }
        if self.max_garments == 0 || self.max_garments > Slot::ALL.len() {
            return Err(Error::InvalidConfig("max_garments must be in 1..=2"));
        }
        if !(0.0..=1.0).contains(&self.style_null_rate) {
            return Err(Error::InvalidConfig("style_null_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One labelled training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TryOnSample {
    pub seed: u64,
    pub person: Image,
    /// Flat-lay garment images, ordered by slot.
    pub garments: Vec<Image>,
    /// Attributes of each replacement garment (always present, same order as `garments`).
    pub garment_specs: Vec<GarmentSpec>,
    /// Silhouette of each replacement garment as composited on the target.
    pub garment_silhouettes: Vec<Mask>,
    /// Pixels where each replacement garment is visible in the target.
    pub garment_regions: Vec<Mask>,
    pub agnostic_mask: Mask,
    pub pose_map: Image,
    pub parsing_mask: Mask,
    /// Style prompt; `None` is the null prompt.
    pub style: Option<StyleAttrs>,
    pub target: Image,
}

fn sample_figure<R: Rng>(rng: &mut R, h: usize, w: usize) -> Figure {
    let (hf, wf) = (h as f64, w as f64);
    let s = rng.random_range(0.95..1.0);
    let cx = (0.5 + rng.random_range(-0.12..0.12)) * wf;
    let head_top = 0.03 + rng.random_range(0.0..0.02);
    let head_r = 0.065 * s;
    let head = Pt::new(cx, (head_top + head_r) * hf);
    let neck_y = head_top + 2.0 * head_r + 0.01;
    let shoulder_y = neck_y + 0.02;
    let waist_y = shoulder_y + 0.25 * s;
    let sw = 0.13 * s * wf;
    let hw = 0.09 * s * wf;
    let mut shoulders = [Pt::new(0.0, 0.0); 2];
    let mut elbows = shoulders;
    let mut wrists = shoulders;
    let mut hips = shoulders;
    let mut knees = shoulders;
    let mut ankles = shoulders;
    for (i, side) in [-1.0f64, 1.0].into_iter().enumerate() {
        let deg = PI / 180.0;
        let a = rng.random_range(10.0..35.0) * deg;
        let b = a + rng.random_range(-20.0..20.0) * deg;
        shoulders[i] = Pt::new(cx + side * sw, shoulder_y * hf);
        elbows[i] = Pt::new(
            shoulders[i].x + side * 0.15 * s * libm::sin(a) * wf,
            shoulders[i].y + 0.15 * s * libm::cos(a) * hf,
        );
        wrists[i] = Pt::new(
            elbows[i].x + side * 0.14 * s * libm::sin(b) * wf,
            elbows[i].y + 0.14 * s * libm::cos(b) * hf,
        );
        let g = rng.random_range(0.0..10.0) * deg;
        let d = g + rng.random_range(-5.0..5.0) * deg;
        hips[i] = Pt::new(cx + side * 0.05 * s * wf, waist_y * hf);
        knees[i] = Pt::new(
            hips[i].x + side * 0.25 * s * libm::sin(g) * wf,
            hips[i].y + 0.25 * s * libm::cos(g) * hf,
        );
        ankles[i] = Pt::new(
            knees[i].x + side * 0.24 * s * libm::sin(d) * wf,
            knees[i].y + 0.24 * s * libm::cos(d) * hf,
        );
    }
    Figure {
        head,
        head_radius: head_r * hf,
        neck: Pt::new(cx, neck_y * hf),
        shoulders,
        elbows,
        wrists,
        hips,
        knees,
        ankles,
        limb_radius: 0.028 * hf,
        torso_half_top: sw,
        torso_half_bottom: hw,
    }
}

fn sample_spec<R: Rng>(rng: &mut R, slot: Slot) -> GarmentSpec {
    let color_id = rng.random_range(0..PALETTE_SIZE as u8);
    let pattern = Pattern::ALL[rng.random_range(0..Pattern::ALL.len())];
    let length = Length::ALL[rng.random_range(0..Length::ALL.len())];
    let tuck_draw = Tuck::ALL[rng.random_range(0..Tuck::ALL.len())];
    // long tops hang out unless the bottom is short (see `settle_tuck`)
    let tuck = match (slot, length) {
        (Slot::Upper, Length::Short) => tuck_draw,
        _ => Tuck::Out,
    };
    GarmentSpec {
        slot,
        color_id,
        pattern,
        length,
        tuck,
    }
}

/// A long top worn out would hide short bottoms entirely, so it is tucked in.
fn settle_tuck(specs: &mut [GarmentSpec; 2]) {
    if specs[0].length == Length::Long && specs[1].length == Length::Short {
        specs[0].tuck = Tuck::In;
    }
}

struct Outfit {
    // indexed by slot
    specs: [GarmentSpec; 2],
}

struct Composite {
    image: Image,
    silhouettes: [Mask; 2],
    visible: [Mask; 2],
}

fn compose(fig: &Figure, outfit: &Outfit, skin: [f32; 3], bg: [f32; 3], body: &Mask, h: usize, w: usize) -> Composite {
    let mut image = Image::rgb(h, w);
    let full = Mask::filled(h, w, true);
    render::paint(&mut image, &full, |_, _| bg);
    render::paint(&mut image, body, |_, _| skin);
    let silhouettes = [
        render::worn_garment_mask(fig, Slot::Upper, outfit.specs[0].length, h, w),
        render::worn_garment_mask(fig, Slot::Lower, outfit.specs[1].length, h, w),
    ];
    let order: [usize; 2] = match outfit.specs[0].tuck {
        Tuck::In => [0, 1],
        Tuck::Out => [1, 0],
    };
    for &i in &order {
        let spec = outfit.specs[i];
        let base = palette_rgb(spec.color_id);
        render::paint(&mut image, &silhouettes[i], |y, x| render::garment_color(&spec, base, y, x));
    }
    let mut visible = [silhouettes[0].clone(), silhouettes[1].clone()];
    let (under, over) = (order[0], order[1]);
    for (v, o) in visible[under].data.iter_mut().zip(&silhouettes[over].data) {
        *v &= 1 - *o;
    }
    Composite {
        image,
        silhouettes,
        visible,
    }
}

fn flat_lay(spec: &GarmentSpec, g: usize) -> Image {
    let mut img = Image::filled(g, g, 3, FLAT_BACKGROUND);
    let m = render::flat_garment_mask(spec.slot, spec.length, g);
    let base = palette_rgb(spec.color_id);
    render::paint(&mut img, &m, |y, x| render::garment_color(spec, base, y, x));
    img
}

/// Generates the sample for `seed`. Pure in `(seed, cfg)`.
pub fn gen_sample(seed: u64, cfg: &SynthConfig) -> Result<TryOnSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let fig = sample_figure(&mut rng, h, w);
    let skin = rgb8(SKIN_RGB8[rng.random_range(0..SKIN_RGB8.len())]);
    let level = BACKGROUND_LEVELS[rng.random_range(0..BACKGROUND_LEVELS.len())];
    let bg = rgb8([level, level, level]);

    let n = rng.random_range(1..=cfg.max_garments);
    let slots: Vec<Slot> = if n == Slot::ALL.len() {
        Slot::ALL.to_vec()
    } else {
        alloc::vec![Slot::ALL[rng.random_range(0..Slot::ALL.len())]]
    };
    let new_specs: Vec<GarmentSpec> = slots.iter().map(|&s| sample_spec(&mut rng, s)).collect();

    // original outfit; a replaced slot never keeps its color
    let mut original = [sample_spec(&mut rng, Slot::Upper), sample_spec(&mut rng, Slot::Lower)];
    for spec in &new_specs {
        let o = &mut original[spec.slot.index()];
        o.tuck = Tuck::Out;
        if o.color_id == spec.color_id {
            o.color_id = (o.color_id + 1 + rng.random_range(0..PALETTE_SIZE as u8 - 1)) % PALETTE_SIZE as u8;
        }
    }
    original[0].tuck = Tuck::Out;
    let null_style = rng.random_bool(cfg.style_null_rate);

    let mut target_specs = original;
    for spec in &new_specs {
        target_specs[spec.slot.index()] = *spec;
    }
    settle_tuck(&mut original);
    settle_tuck(&mut target_specs);
    let mut new_specs = new_specs;
    for spec in &mut new_specs {
        *spec = target_specs[spec.slot.index()];
    }

    let body = render::body_mask(&fig, h, w);
    let person = compose(&fig, &Outfit { specs: original }, skin, bg, &body, h, w);
    let target = compose(&fig, &Outfit { specs: target_specs }, skin, bg, &body, h, w);

    let mut agnostic_mask = Mask::new(h, w);
    let mut garment_silhouettes = Vec::new();
    let mut garment_regions = Vec::new();
    for spec in &new_specs {
        let i = spec.slot.index();
        agnostic_mask.union_with(&target.silhouettes[i]);
        garment_silhouettes.push(target.silhouettes[i].clone());
        garment_regions.push(target.visible[i].clone());
    }
    let agnostic_mask = agnostic_mask.dilated(cfg.mask_margin);

    let mut parsing_mask = body;
    for s in person.silhouettes.iter().chain(target.silhouettes.iter()) {
        parsing_mask.union_with(s);
    }

    let style = if null_style {
        None
    } else {
        StyleAttrs::new(new_specs.clone())
    };

    Ok(TryOnSample {
        seed,
        person: person.image,
        garments: new_specs.iter().map(|s| flat_lay(s, cfg.garment_size)).collect(),
        garment_specs: new_specs,
        garment_silhouettes,
        garment_regions,
        agnostic_mask,
        pose_map: render::pose_map(&fig, h, w),
        parsing_mask,
        style,
        target: target.image,
    })
}
