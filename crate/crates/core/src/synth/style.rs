//! Structured dressing-style attributes and their fixed-length token encoding.

use alloc::vec::Vec;

/// Number of entries in the garment color palette.
pub const PALETTE_SIZE: usize = 6;

/// Garment palette as 8-bit RGB; pixel values are `v / 256` so they sit on a
/// dyadic grid the patch codec round-trips exactly.
pub const PALETTE_RGB8: [[u8; 3]; PALETTE_SIZE] = [
    [220, 40, 40],  // red
    [40, 180, 60],  // green
    [40, 70, 220],  // blue
    [235, 210, 30], // yellow
    [150, 50, 190], // purple
    [30, 190, 200], // cyan
];

pub fn palette_rgb(color_id: u8) -> [f32; 3] {
    let c = PALETTE_RGB8[color_id as usize];
    [c[0] as f32 / 256.0, c[1] as f32 / 256.0, c[2] as f32 / 256.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    Solid,
    Stripes,
    Checker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Length {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tuck {
    In,
    Out,
}

impl Slot {
    pub const ALL: [Slot; 2] = [Slot::Upper, Slot::Lower];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Solid, Pattern::Stripes, Pattern::Checker];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Length {
    pub const ALL: [Length; 2] = [Length::Short, Length::Long];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Tuck {
    pub const ALL: [Tuck; 2] = [Tuck::In, Tuck::Out];
    pub fn index(self) -> usize {
        self as usize
    }
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Attributes of one garment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GarmentSpec {
    pub slot: Slot,
    pub color_id: u8,
    pub pattern: Pattern,
    pub length: Length,
    pub tuck: Tuck,
}

/// Per-garment style records, kept sorted by slot with unique slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StyleAttrs {
    records: Vec<GarmentSpec>,
}

impl StyleAttrs {
    /// Returns `None` when two records share a slot or a color id is out of range.
    pub fn new(mut records: Vec<GarmentSpec>) -> Option<Self> {
        records.sort_by_key(|r| r.slot);
        if records.windows(2).any(|w| w[0].slot == w[1].slot) {
            return None;
        }
        if records.iter().any(|r| r.color_id as usize >= PALETTE_SIZE) {
            return None;
        }
        Some(Self { records })
    }

    pub fn records(&self) -> &[GarmentSpec] {
        &self.records
    }

    pub fn get(&self, slot: Slot) -> Option<&GarmentSpec> {
        self.records.iter().find(|r| r.slot == slot)
    }
}

pub const NULL_TOK: u32 = 0;
const PER_SLOT: usize = 5;
const SLOT_SPAN: u32 = 2 + PALETTE_SIZE as u32 + 3 + 2 + 2;

/// Fixed style sequence length: five tokens per slot.
pub const L_TEXT: usize = PER_SLOT * Slot::ALL.len();
/// Size of the style token vocabulary.
pub const STYLE_VOCAB: usize = 1 + SLOT_SPAN as usize * Slot::ALL.len();

fn slot_base(slot: Slot) -> u32 {
    1 + slot.index() as u32 * SLOT_SPAN
}

// offsets inside a slot's id block
const PRESENT: u32 = 0;
const ABSENT: u32 = 1;
const COLOR0: u32 = 2;
const PATTERN0: u32 = COLOR0 + PALETTE_SIZE as u32;
const LENGTH0: u32 = PATTERN0 + 3;
const TUCK0: u32 = LENGTH0 + 2;

/// Serializes style attributes into `L_TEXT` token ids; `None` is the all-null prompt.
pub fn style_to_tokens(style: Option<&StyleAttrs>) -> [u32; L_TEXT] {
    let mut out = [NULL_TOK; L_TEXT];
    let Some(style) = style else {
        return out;
    };
    for slot in Slot::ALL {
        let base = slot_base(slot);
        let chunk = &mut out[slot.index() * PER_SLOT..(slot.index() + 1) * PER_SLOT];
        match style.get(slot) {
            Some(r) => {
                chunk[0] = base + PRESENT;
                chunk[1] = base + COLOR0 + r.color_id as u32;
                chunk[2] = base + PATTERN0 + r.pattern.index() as u32;
                chunk[3] = base + LENGTH0 + r.length.index() as u32;
                chunk[4] = base + TUCK0 + r.tuck.index() as u32;
            }
            None => chunk.fill(base + ABSENT),
        }
    }
    out
}

/// Inverse of [`style_to_tokens`]. `Some(None)` is the null prompt; `None` means
/// the sequence is not in the image of the encoder.
pub fn tokens_to_style(tokens: &[u32]) -> Option<Option<StyleAttrs>> {
    if tokens.len() != L_TEXT {
        return None;
    }
    if tokens.iter().all(|&t| t == NULL_TOK) {
        return Some(None);
    }
    let mut records = Vec::new();
    for slot in Slot::ALL {
        let base = slot_base(slot);
        let chunk = &tokens[slot.index() * PER_SLOT..(slot.index() + 1) * PER_SLOT];
        let rel = |t: u32, lo: u32, n: u32| -> Option<usize> {
            let r = t.checked_sub(base + lo)?;
            (r < n).then_some(r as usize)
        };
        if chunk.iter().all(|&t| t == base + ABSENT) {
            continue;
        }
        if chunk[0] != base + PRESENT {
            return None;
        }
        records.push(GarmentSpec {
            slot,
            color_id: rel(chunk[1], COLOR0, PALETTE_SIZE as u32)? as u8,
            pattern: Pattern::from_index(rel(chunk[2], PATTERN0, 3)?)?,
            length: Length::from_index(rel(chunk[3], LENGTH0, 2)?)?,
            tuck: Tuck::from_index(rel(chunk[4], TUCK0, 2)?)?,
        });
    }
    StyleAttrs::new(records).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(slot: Slot, color_id: u8) -> GarmentSpec {
        GarmentSpec {
            slot,
            color_id,
            pattern: Pattern::Stripes,
            length: Length::Long,
            tuck: Tuck::Out,
        }
    }

    #[test]
    fn null_style_is_all_null_tokens() {
        assert_eq!(style_to_tokens(None), [NULL_TOK; L_TEXT]);
        assert_eq!(tokens_to_style(&[NULL_TOK; L_TEXT]), Some(None));
    }

    #[test]
    fn duplicate_slots_rejected() {
        assert!(StyleAttrs::new(vec![spec(Slot::Upper, 0), spec(Slot::Upper, 1)]).is_none());
    }

    #[test]
    fn records_are_canonically_ordered() {
        let a = StyleAttrs::new(vec![spec(Slot::Lower, 2), spec(Slot::Upper, 1)]).unwrap();
        let b = StyleAttrs::new(vec![spec(Slot::Upper, 1), spec(Slot::Lower, 2)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records()[0].slot, Slot::Upper);
    }

    #[test]
    fn all_ids_inside_vocab() {
        let s = StyleAttrs::new(vec![spec(Slot::Lower, 5)]).unwrap();
        assert!(style_to_tokens(Some(&s)).iter().all(|&t| (t as usize) < STYLE_VOCAB));
    }

    #[test]
    fn garbage_sequences_decode_to_none() {
        let mut t = style_to_tokens(Some(&StyleAttrs::new(vec![spec(Slot::Upper, 3)]).unwrap()));
        t[1] = t[2];
        assert_eq!(tokens_to_style(&t), None);
        assert_eq!(tokens_to_style(&[1, 2, 3]), None);
    }
}
