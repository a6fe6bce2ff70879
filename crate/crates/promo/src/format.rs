//! Binary containers: `PRMO` sample records and `PRMC` checkpoints.
//!
//! Both are little-endian. Images are stored as channel-major `f32` planes,
//! masks as one byte per pixel.

use std::fs;
use std::io::Write;
use std::path::Path;

use promo_core::image::{Image, Mask};
use promo_core::model::{ModelConfig, ModelParams};
use promo_core::synth::{GarmentSpec, Length, Pattern, Slot, StyleAttrs, Tuck, L_TEXT};
use promo_core::synth::{style_to_tokens, tokens_to_style, TryOnSample};
use promo_core::train::Adam;

use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 4] = b"PRMO";
pub const SAMPLE_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRMC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
    fn image(&mut self, img: &Image) {
        self.f32s(&img.data);
    }
    fn mask(&mut self, m: &Mask) {
        self.bytes(&m.data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn hash(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("non-utf8 name".into()))
    }
    fn image(&mut self, h: usize, w: usize, c: usize) -> Result<Image> {
        Ok(Image::from_data(h, w, c, self.f32s(h * w * c)?)?)
    }
    fn mask(&mut self, h: usize, w: usize) -> Result<Mask> {
        let data = self.take(h * w)?.to_vec();
        if data.iter().any(|&b| b > 1) {
            return Err(Error::Corrupt("mask byte outside {0, 1}".into()));
        }
        Ok(Mask { height: h, width: w, data })
    }
    fn magic(&mut self, magic: &[u8; 4], kind: &'static str, version: u16) -> Result<()> {
        if self.take(4).ok() != Some(&magic[..]) {
            return Err(Error::BadMagic(kind));
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::Version { kind, version: v });
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        Ok(())
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn spec_bytes(s: &GarmentSpec) -> [u8; 5] {
    [s.slot.index() as u8, s.color_id, s.pattern.index() as u8, s.length.index() as u8, s.tuck as u8]
}

fn spec_from(b: &[u8]) -> Result<GarmentSpec> {
    let bad = || Error::Corrupt("garment spec out of range".into());
    Ok(GarmentSpec {
        slot: Slot::from_index(b[0] as usize).ok_or_else(bad)?,
        color_id: b[1],
        pattern: Pattern::from_index(b[2] as usize).ok_or_else(bad)?,
        length: Length::from_index(b[3] as usize).ok_or_else(bad)?,
        tuck: Tuck::from_index(b[4] as usize).ok_or_else(bad)?,
    })
}

/// `PRMO` record:
/// magic, `u16` version, 32-byte config hash, `u64` seed, `u32` H, W, N
/// (garments) and G (garment side); person, target and pose planes (3 x H x
/// W `f32` each); agnostic and parsing masks; per garment its 5 attribute
/// bytes, G x G image planes, silhouette and visible-region masks; then the
/// style record (`u8` present flag and `L_TEXT` `u32` tokens).
pub fn encode_sample(s: &TryOnSample, config_hash: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(SAMPLE_MAGIC);
    w.u16(SAMPLE_VERSION);
    w.bytes(config_hash);
    w.u64(s.seed);
    w.u32(s.target.height);
    w.u32(s.target.width);
    w.u32(s.garments.len());
    w.u32(s.garments.first().map_or(0, |g| g.height));
    w.image(&s.person);
    w.image(&s.target);
    w.image(&s.pose_map);
    w.mask(&s.agnostic_mask);
    w.mask(&s.parsing_mask);
    for i in 0..s.garments.len() {
        w.bytes(&spec_bytes(&s.garment_specs[i]));
        w.image(&s.garments[i]);
        w.mask(&s.garment_silhouettes[i]);
        w.mask(&s.garment_regions[i]);
    }
    w.u8(s.style.is_some() as u8);
    for t in style_to_tokens(s.style.as_ref()) {
        w.u32(t as usize);
    }
    w.buf
}

pub fn decode_sample(bytes: &[u8]) -> Result<(TryOnSample, [u8; 32])> {
    let mut r = Reader::new(bytes);
    r.magic(SAMPLE_MAGIC, "PRMO", SAMPLE_VERSION)?;
    let hash = r.hash()?;
    let seed = r.u64()?;
    let (h, w, n, g) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if h.saturating_mul(w) > 1 << 24 || g.saturating_mul(g) > 1 << 24 || n > 16 {
        return Err(Error::Corrupt("implausible dimensions".into()));
    }
    let person = r.image(h, w, 3)?;
    let target = r.image(h, w, 3)?;
    let pose_map = r.image(h, w, 3)?;
    let agnostic_mask = r.mask(h, w)?;
    let parsing_mask = r.mask(h, w)?;
    let (mut garments, mut specs, mut sil, mut reg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        specs.push(spec_from(r.take(5)?)?);
        garments.push(r.image(g, g, 3)?);
        sil.push(r.mask(h, w)?);
        reg.push(r.mask(h, w)?);
    }
    let present = r.u8()? != 0;
    let mut tokens = [0u32; L_TEXT];
    for t in &mut tokens {
        *t = r.u32()? as u32;
    }
    r.finish()?;
    let style: Option<StyleAttrs> = tokens_to_style(&tokens).ok_or_else(|| Error::Corrupt("style tokens".into()))?;
    if style.is_some() != present {
        return Err(Error::Corrupt("style flag disagrees with tokens".into()));
    }
    let sample = TryOnSample {
        seed,
        person,
        garments,
        garment_specs: specs,
        garment_silhouettes: sil,
        garment_regions: reg,
        agnostic_mask,
        pose_map,
        parsing_mask,
        style,
        target,
    };
    Ok((sample, hash))
}

pub fn write_sample(path: &Path, s: &TryOnSample, config_hash: &[u8; 32]) -> Result<()> {
    write_atomic(path, &encode_sample(s, config_hash))
}

pub fn read_sample(path: &Path) -> Result<(TryOnSample, [u8; 32])> {
    decode_sample(&read_file(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub params: ModelParams<f32>,
    pub adam: Option<Adam>,
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    for v in [c.token_dim, c.d_model, c.n_heads, c.n_layers, c.mlp_ratio, c.time_freq_dim, c.style_vocab] {
        w.u32(v);
    }
    w.f64(c.rope_theta);
    w.u8(c.rope_on_conditions as u8);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let c = ModelConfig {
        token_dim: r.u32()?,
        d_model: r.u32()?,
        n_heads: r.u32()?,
        n_layers: r.u32()?,
        mlp_ratio: r.u32()?,
        time_freq_dim: r.u32()?,
        style_vocab: r.u32()?,
        rope_theta: r.f64()?,
        rope_on_conditions: r.u8()? != 0,
    };
    c.validate()?;
    Ok(c)
}

fn write_tensors(w: &mut Writer, p: &ModelParams<f32>) {
    w.u32(p.params().len());
    for t in p.params() {
        w.str(&t.name);
        w.u32(t.rows);
        w.u32(t.cols);
        w.f32s(&t.data);
    }
}

fn read_tensors(r: &mut Reader, cfg: ModelConfig) -> Result<ModelParams<f32>> {
    let mut p = ModelParams::zeros(cfg)?;
    let n = r.u32()?;
    if n != p.params().len() {
        return Err(Error::Corrupt(format!("expected {} tensors, found {n}", p.params().len())));
    }
    for _ in 0..n {
        let name = r.str()?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let data = r.f32s(rows.saturating_mul(cols))?;
        p.load_tensor(&name, rows, cols, data)?;
    }
    Ok(p)
}

/// `PRMC` checkpoint:
/// magic, `u16` version, 32-byte config hash, `u64` step, hyperparameter
/// block (`u32` token_dim, d_model, n_heads, n_layers, mlp_ratio,
/// time_freq_dim, style_vocab; `f64` rope theta; `u8` condition rope flag),
/// then the tensor list (`u32` count; per tensor `u16`-prefixed name, `u32`
/// rows and cols, `f32` data) and an optional optimizer section (`u8` flag,
/// `u64` update count, first then second moments as tensor lists).
pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.bytes(&c.config_hash);
    w.u64(c.step);
    write_config(&mut w, &c.params.cfg);
    write_tensors(&mut w, &c.params);
    match &c.adam {
        Some(a) => {
            let (m, v, t) = a.state();
            w.u8(1);
            w.u64(t);
            write_tensors(&mut w, m);
            write_tensors(&mut w, v);
        }
        None => w.u8(0),
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC, "PRMC", CHECKPOINT_VERSION)?;
    let config_hash = r.hash()?;
    let step = r.u64()?;
    let cfg = read_config(&mut r)?;
    let params = read_tensors(&mut r, cfg)?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let m = read_tensors(&mut r, cfg)?;
            let v = read_tensors(&mut r, cfg)?;
            Some(Adam::from_state(m, v, t))
        }
        _ => return Err(Error::Corrupt("optimizer flag".into())),
    };
    r.finish()?;
    Ok(Checkpoint {
        config_hash,
        step,
        params,
        adam,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    decode_checkpoint(&read_file(path)?)
}

/// Loads a checkpoint and rejects it unless it was written under `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &[u8; 32]) -> Result<Checkpoint> {
    let c = read_checkpoint(path)?;
    if &c.config_hash != expected {
        return Err(Error::HashMismatch {
            artifact: hex::encode(c.config_hash),
            run: hex::encode(expected),
        });
    }
    Ok(c)
}
