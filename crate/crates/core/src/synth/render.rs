//! Rasterization of the stick-figure body, garments and pose skeleton.

use crate::image::{Image, Mask};

use super::style::{GarmentSpec, Length, Pattern, Slot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

impl Pt {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
    fn lerp(self, o: Pt, t: f64) -> Pt {
        Pt::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

/// Keypoints of the stick figure in pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Figure {
    pub head: Pt,
    pub head_radius: f64,
    pub neck: Pt,
    pub shoulders: [Pt; 2],
    pub elbows: [Pt; 2],
    pub wrists: [Pt; 2],
    pub hips: [Pt; 2],
    pub knees: [Pt; 2],
    pub ankles: [Pt; 2],
    pub limb_radius: f64,
    pub torso_half_top: f64,
    pub torso_half_bottom: f64,
}

impl Figure {
    fn waist_y(&self) -> f64 {
        self.hips[0].y
    }
    fn shoulder_y(&self) -> f64 {
        self.shoulders[0].y
    }
    fn center_x(&self) -> f64 {
        self.neck.x
    }
    fn torso_half_at(&self, y: f64) -> f64 {
        let t = ((y - self.shoulder_y()) / (self.waist_y() - self.shoulder_y())).clamp(0.0, 1.0);
        self.torso_half_top + (self.torso_half_bottom - self.torso_half_top) * t
    }
}

pub fn fill_circle(m: &mut Mask, c: Pt, r: f64) {
    for y in 0..m.height {
        for x in 0..m.width {
            let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
            if dx * dx + dy * dy <= r * r {
                m.set(y, x, true);
            }
        }
    }
}

/// Fills every pixel whose center lies within `r` of segment `a`-`b`.
pub fn fill_capsule(m: &mut Mask, a: Pt, b: Pt, r: f64) {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    for y in 0..m.height {
        for x in 0..m.width {
            let (px, py) = (x as f64 + 0.5 - a.x, y as f64 + 0.5 - a.y);
            let t = if len2 > 0.0 { ((px * vx + py * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (dx, dy) = (px - t * vx, py - t * vy);
            if dx * dx + dy * dy <= r * r {
                m.set(y, x, true);
            }
        }
    }
}

/// Fills the horizontal band `y0..y1` between two x-extents that vary linearly in y.
fn fill_trapezoid(m: &mut Mask, cx: f64, y0: f64, y1: f64, half0: f64, half1: f64) {
    for y in 0..m.height {
        let py = y as f64 + 0.5;
        if py < y0 || py > y1 {
            continue;
        }
        let t = if y1 > y0 { (py - y0) / (y1 - y0) } else { 0.0 };
        let half = half0 + (half1 - half0) * t;
        for x in 0..m.width {
            let px = x as f64 + 0.5;
            if (px - cx).abs() <= half {
                m.set(y, x, true);
            }
        }
    }
}

fn fill_rect(m: &mut Mask, x0: f64, y0: f64, x1: f64, y1: f64) {
    for y in 0..m.height {
        let py = y as f64 + 0.5;
        if py < y0 || py > y1 {
            continue;
        }
        for x in 0..m.width {
            let px = x as f64 + 0.5;
            if px >= x0 && px <= x1 {
                m.set(y, x, true);
            }
        }
    }
}

pub fn body_mask(f: &Figure, h: usize, w: usize) -> Mask {
    let mut m = Mask::new(h, w);
    fill_circle(&mut m, f.head, f.head_radius);
    fill_capsule(&mut m, f.head, f.neck, f.limb_radius);
    fill_trapezoid(
        &mut m,
        f.center_x(),
        f.shoulder_y() - f.limb_radius,
        f.waist_y() + f.limb_radius,
        f.torso_half_top,
        f.torso_half_bottom,
    );
    for s in 0..2 {
        fill_capsule(&mut m, f.shoulders[s], f.elbows[s], f.limb_radius);
        fill_capsule(&mut m, f.elbows[s], f.wrists[s], f.limb_radius);
        fill_capsule(&mut m, f.hips[s], f.knees[s], f.limb_radius * 1.3);
        fill_capsule(&mut m, f.knees[s], f.ankles[s], f.limb_radius * 1.2);
    }
    m
}

/// Silhouette of a garment worn on the figure.
pub fn worn_garment_mask(f: &Figure, slot: Slot, length: Length, h: usize, w: usize) -> Mask {
    let mut m = Mask::new(h, w);
    let hgt = h as f64;
    let pad = f.limb_radius + 0.75;
    match slot {
        Slot::Upper => {
            let top = f.shoulder_y() - f.limb_radius;
            let bottom = match length {
                Length::Short => f.waist_y() + 0.03 * hgt,
                Length::Long => f.waist_y() + 0.26 * hgt,
            };
            let waist_half = f.torso_half_at(f.waist_y()) + 0.75;
            let hem_half = match length {
                Length::Short => waist_half,
                Length::Long => waist_half + 0.06 * hgt,
            };
            fill_trapezoid(&mut m, f.center_x(), top, f.waist_y(), f.torso_half_top + 0.75, waist_half);
            fill_trapezoid(&mut m, f.center_x(), f.waist_y(), bottom, waist_half, hem_half);
            for s in 0..2 {
                match length {
                    Length::Short => {
                        let mid = f.shoulders[s].lerp(f.elbows[s], 0.55);
                        fill_capsule(&mut m, f.shoulders[s], mid, pad);
                    }
                    Length::Long => {
                        fill_capsule(&mut m, f.shoulders[s], f.elbows[s], pad);
                        let cuff = f.elbows[s].lerp(f.wrists[s], 0.85);
                        fill_capsule(&mut m, f.elbows[s], cuff, pad);
                    }
                }
            }
        }
        Slot::Lower => {
            let top = f.waist_y() - 0.02 * hgt;
            let half = f.torso_half_bottom + 0.75;
            fill_trapezoid(&mut m, f.center_x(), top, f.waist_y() + 0.02 * hgt, half, half);
            let lp = f.limb_radius * 1.3 + 0.75;
            for s in 0..2 {
                match length {
                    Length::Short => {
                        let mid = f.hips[s].lerp(f.knees[s], 0.55);
                        fill_capsule(&mut m, f.hips[s], mid, lp);
                    }
                    Length::Long => {
                        fill_capsule(&mut m, f.hips[s], f.knees[s], lp);
                        let cuff = f.knees[s].lerp(f.ankles[s], 0.95);
                        fill_capsule(&mut m, f.knees[s], cuff, lp);
                    }
                }
            }
        }
    }
    m
}

/// Silhouette of a garment laid flat on a square canvas of side `g`.
pub fn flat_garment_mask(slot: Slot, length: Length, g: usize) -> Mask {
    let mut m = Mask::new(g, g);
    let s = g as f64;
    match slot {
        Slot::Upper => {
            let bottom = match length {
                Length::Short => 0.62 * s,
                Length::Long => 0.94 * s,
            };
            fill_rect(&mut m, 0.3 * s, 0.12 * s, 0.7 * s, bottom);
            let sleeve_end = match length {
                Length::Short => 0.34 * s,
                Length::Long => 0.72 * s,
            };
            fill_capsule(&mut m, Pt::new(0.3 * s, 0.16 * s), Pt::new(0.12 * s, sleeve_end), 0.07 * s);
            fill_capsule(&mut m, Pt::new(0.7 * s, 0.16 * s), Pt::new(0.88 * s, sleeve_end), 0.07 * s);
        }
        Slot::Lower => {
            let bottom = match length {
                Length::Short => 0.45 * s,
                Length::Long => 0.95 * s,
            };
            fill_rect(&mut m, 0.28 * s, 0.06 * s, 0.72 * s, 0.16 * s);
            fill_rect(&mut m, 0.28 * s, 0.1 * s, 0.48 * s, bottom);
            fill_rect(&mut m, 0.52 * s, 0.1 * s, 0.72 * s, bottom);
        }
    }
    m
}

/// Garment color at a pixel: the palette color, shaded on pattern cells.
pub fn garment_color(spec: &GarmentSpec, base: [f32; 3], y: usize, x: usize) -> [f32; 3] {
    let shaded = match spec.pattern {
        Pattern::Solid => false,
        Pattern::Stripes => y.is_multiple_of(4),
        Pattern::Checker => (y / 4 + x / 4) % 2 == 1,
    };
    if shaded {
        // 0.75 keeps the value on the dyadic grid and the nearest palette entry unchanged
        [base[0] * 0.75, base[1] * 0.75, base[2] * 0.75]
    } else {
        base
    }
}

pub fn paint(img: &mut Image, m: &Mask, mut color: impl FnMut(usize, usize) -> [f32; 3]) {
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(y, x) {
                img.set_pixel(y, x, color(y, x));
            }
        }
    }
}

/// Limb colors of the pose skeleton; every entry has a nonzero channel.
const LIMB_COLORS: [[f32; 3]; 7] = [
    [1.0, 0.0, 0.0],
    [1.0, 0.5, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.5, 1.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [0.5, 1.0, 0.5],
];
const KEYPOINT_COLOR: [f32; 3] = [1.0, 1.0, 1.0];

fn draw_line(img: &mut Image, a: Pt, b: Pt, color: [f32; 3]) {
    let (mut x0, mut y0) = (libm::floor(a.x) as i64, libm::floor(a.y) as i64);
    let (x1, y1) = (libm::floor(b.x) as i64, libm::floor(b.y) as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < img.width && (y0 as usize) < img.height {
            img.set_pixel(y0 as usize, x0 as usize, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_dot(img: &mut Image, p: Pt, color: [f32; 3]) {
    let (x0, y0) = (libm::floor(p.x) as i64, libm::floor(p.y) as i64);
    for y in y0..y0 + 2 {
        for x in x0..x0 + 2 {
            if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
                img.set_pixel(y as usize, x as usize, color);
            }
        }
    }
}

/// Skeleton rendering: fixed-color one-pixel limbs plus 2x2 keypoint dots on black.
pub fn pose_map(f: &Figure, h: usize, w: usize) -> Image {
    let mut img = Image::rgb(h, w);
    let hip_mid = f.hips[0].lerp(f.hips[1], 0.5);
    draw_line(&mut img, f.head, f.neck, LIMB_COLORS[0]);
    draw_line(&mut img, f.shoulders[0], f.shoulders[1], LIMB_COLORS[1]);
    draw_line(&mut img, f.neck, hip_mid, LIMB_COLORS[1]);
    draw_line(&mut img, f.hips[0], f.hips[1], LIMB_COLORS[4]);
    for s in 0..2 {
        draw_line(&mut img, f.shoulders[s], f.elbows[s], LIMB_COLORS[2]);
        draw_line(&mut img, f.elbows[s], f.wrists[s], LIMB_COLORS[3]);
        draw_line(&mut img, f.hips[s], f.knees[s], LIMB_COLORS[5]);
        draw_line(&mut img, f.knees[s], f.ankles[s], LIMB_COLORS[6]);
    }
    let mut points = alloc::vec![f.head, f.neck];
    for s in 0..2 {
        points.extend([f.shoulders[s], f.elbows[s], f.wrists[s], f.hips[s], f.knees[s], f.ankles[s]]);
    }
    for p in points {
        draw_dot(&mut img, p, KEYPOINT_COLOR);
    }
    img
}
