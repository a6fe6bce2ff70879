//! Flat `key=value` run configuration and its content hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use promo_core::codec::token_dim;
use promo_core::model::ModelConfig;
use promo_core::pipeline::CondSettings;
use promo_core::sampler::{SamplerConfig, SamplerMode};
use promo_core::synth::{SynthConfig, L_TEXT};
use promo_core::train::{TrainConfig, HELD_OUT_SEED_BASE};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OUT_ENV: &str = "PROMO_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // dataset
    pub height: usize,
    pub width: usize,
    pub garment_size: usize,
    pub n_max: usize,
    pub patch: usize,
    pub style_dropout: f64,
    pub mask_margin: usize,
    pub eval_seed_start: u64,
    pub eval_seeds: usize,
    // model
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub l_text: usize,
    pub time_freq_dim: usize,
    // training
    pub optimizer: String,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub min_lr_frac: f64,
    pub grad_clip: f64,
    pub lambda: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    // sampler
    pub sampler_steps: usize,
    pub mode: SamplerMode,
    // ablation flags
    pub no_rope_groups: bool,
    pub no_weighted_loss: bool,
    pub no_merge: bool,
    pub no_cache: bool,
    /// `;`-separated rows of `+`-joined flags (`base` for none) run by `ablate`.
    pub ablations: String,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            garment_size: 32,
            n_max: 2,
            patch: 4,
            style_dropout: 0.1,
            mask_margin: 2,
            eval_seed_start: HELD_OUT_SEED_BASE,
            eval_seeds: 100,
            n_layers: 4,
            d_model: 72,
            n_heads: 3,
            mlp_ratio: 2,
            l_text: L_TEXT,
            time_freq_dim: 32,
            optimizer: "adam".into(),
            batch: 4,
            steps: 2000,
            lr: 3e-3,
            warmup: 100,
            min_lr_frac: 0.1,
            grad_clip: 1.0,
            lambda: 0.5,
            seed: 0,
            checkpoint_every: 500,
            sampler_steps: 20,
            mode: SamplerMode::Cached,
            no_rope_groups: false,
            no_weighted_loss: false,
            no_merge: false,
            no_cache: false,
            ablations: "base;no_rope_groups".into(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Keys that only steer sampling, evaluation or output placement; they are
/// left out of the hash so one checkpoint serves every sampler setting.
const UNHASHED: [&str; 8] = [
    "eval_seed_start",
    "eval_seeds",
    "checkpoint_every",
    "sampler_steps",
    "mode",
    "no_cache",
    "ablations",
    "out_dir",
];

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_mode(v: &str) -> Option<SamplerMode> {
    match v {
        "full" => Some(SamplerMode::Full),
        "cached" => Some(SamplerMode::Cached),
        _ => None,
    }
}

pub fn mode_name(m: SamplerMode) -> &'static str {
    match m {
        SamplerMode::Full => "full",
        SamplerMode::Frozen => "frozen",
        SamplerMode::Cached => "cached",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value for {key}: {v:?}"));
        macro_rules! num {
            ($f:expr) => {
                $f = v.parse().map_err(|_| bad())?
            };
        }
        macro_rules! flag {
            ($f:expr) => {
                $f = parse_bool(v).ok_or_else(bad)?
            };
        }
        match key {
            "height" => num!(self.height),
            "width" => num!(self.width),
            "garment_size" => num!(self.garment_size),
            "n_max" => num!(self.n_max),
            "patch" => num!(self.patch),
            "style_dropout" => num!(self.style_dropout),
            "mask_margin" => num!(self.mask_margin),
            "eval_seed_start" => num!(self.eval_seed_start),
            "eval_seeds" => num!(self.eval_seeds),
            "n_layers" => num!(self.n_layers),
            "d_model" => num!(self.d_model),
            "n_heads" => num!(self.n_heads),
            "mlp_ratio" => num!(self.mlp_ratio),
            "l_text" => num!(self.l_text),
            "time_freq_dim" => num!(self.time_freq_dim),
            "optimizer" => self.optimizer = v.to_string(),
            "batch" => num!(self.batch),
            "steps" => num!(self.steps),
            "lr" => num!(self.lr),
            "warmup" => num!(self.warmup),
            "min_lr_frac" => num!(self.min_lr_frac),
            "grad_clip" => num!(self.grad_clip),
            "lambda" => num!(self.lambda),
            "seed" => num!(self.seed),
            "checkpoint_every" => num!(self.checkpoint_every),
            "sampler_steps" => num!(self.sampler_steps),
            "mode" => self.mode = parse_mode(v).ok_or_else(bad)?,
            "no_rope_groups" => flag!(self.no_rope_groups),
            "no_weighted_loss" => flag!(self.no_weighted_loss),
            "no_merge" => flag!(self.no_merge),
            "no_cache" => flag!(self.no_cache),
            "ablations" => self.ablations = v.to_string(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_text != L_TEXT {
            return Err(Error::Config(format!("l_text must be {L_TEXT}")));
        }
        if self.optimizer != "adam" {
            return Err(Error::Config("optimizer must be adam".into()));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must be in [0, 1)".into()));
        }
        if self.sampler_steps == 0 {
            return Err(Error::Config("sampler_steps must be positive".into()));
        }
        self.train_config().validate()?;
        self.ablation_rows()?;
        Ok(())
    }

    /// Canonical `key=value` lines of every hashed key, sorted by key.
    pub fn canonical(&self) -> String {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("height", self.height.to_string());
        put("width", self.width.to_string());
        put("garment_size", self.garment_size.to_string());
        put("n_max", self.n_max.to_string());
        put("patch", self.patch.to_string());
        put("style_dropout", format!("{:?}", self.style_dropout));
        put("mask_margin", self.mask_margin.to_string());
        put("eval_seed_start", self.eval_seed_start.to_string());
        put("eval_seeds", self.eval_seeds.to_string());
        put("n_layers", self.n_layers.to_string());
        put("d_model", self.d_model.to_string());
        put("n_heads", self.n_heads.to_string());
        put("mlp_ratio", self.mlp_ratio.to_string());
        put("l_text", self.l_text.to_string());
        put("time_freq_dim", self.time_freq_dim.to_string());
        put("optimizer", self.optimizer.clone());
        put("batch", self.batch.to_string());
        put("steps", self.steps.to_string());
        put("lr", format!("{:?}", self.lr));
        put("warmup", self.warmup.to_string());
        put("min_lr_frac", format!("{:?}", self.min_lr_frac));
        put("grad_clip", format!("{:?}", self.grad_clip));
        put("lambda", format!("{:?}", self.lambda));
        put("seed", self.seed.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("sampler_steps", self.sampler_steps.to_string());
        put("mode", mode_name(self.mode).to_string());
        put("no_rope_groups", self.no_rope_groups.to_string());
        put("no_weighted_loss", self.no_weighted_loss.to_string());
        put("no_merge", self.no_merge.to_string());
        put("no_cache", self.no_cache.to_string());
        put("ablations", self.ablations.clone());
        put("out_dir", self.out_dir.display().to_string());
        m.into_iter()
            .filter(|(k, _)| !UNHASHED.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> [u8; 32] {
        let mut out = [0; 32];
        out.copy_from_slice(&Sha256::digest(self.canonical().as_bytes()));
        out
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    /// Output directory, overridden by `PROMO_OUT` when set.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            height: self.height,
            width: self.width,
            garment_size: self.garment_size,
            max_garments: self.n_max,
            style_null_rate: self.style_dropout,
            patch_size: self.patch,
            mask_margin: self.mask_margin,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            token_dim: token_dim(self.patch),
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            mlp_ratio: self.mlp_ratio,
            time_freq_dim: self.time_freq_dim,
            rope_on_conditions: !self.no_rope_groups,
            ..ModelConfig::default()
        }
    }

    pub fn cond(&self) -> CondSettings {
        CondSettings {
            patch: self.patch,
            merge: !self.no_merge,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            synth: self.synth(),
            model: self.model(),
            cond: self.cond(),
            batch: self.batch,
            steps: self.steps,
            lr: self.lr,
            warmup: self.warmup,
            min_lr_frac: self.min_lr_frac,
            grad_clip: self.grad_clip,
            lambda: self.lambda,
            weighted_loss: !self.no_weighted_loss,
            seed: self.seed,
        }
    }

    /// Sampler mode after the `no_cache` flag: uncached runs recompute every
    /// token with frozen condition modulation, so they match cached output.
    pub fn effective_mode(&self) -> SamplerMode {
        if self.no_cache && self.mode == SamplerMode::Cached {
            SamplerMode::Frozen
        } else {
            self.mode
        }
    }

    pub fn sampler(&self, seed: u64) -> Result<SamplerConfig> {
        Ok(SamplerConfig::uniform(self.sampler_steps, self.effective_mode(), seed)?)
    }

    pub fn eval_seed_range(&self) -> std::ops::Range<u64> {
        self.eval_seed_start..self.eval_seed_start + self.eval_seeds as u64
    }

    /// Parsed `ablations` rows as `(name, config)` pairs.
    pub fn ablation_rows(&self) -> Result<Vec<(String, RunConfig)>> {
        let mut rows = Vec::new();
        for row in self.ablations.split(';').map(str::trim).filter(|r| !r.is_empty()) {
            let mut c = self.clone();
            c.ablations = String::new();
            for flag in row.split('+').map(str::trim) {
                match flag {
                    "base" => {}
                    "no_rope_groups" => c.no_rope_groups = true,
                    "no_weighted_loss" => c.no_weighted_loss = true,
                    "no_merge" => c.no_merge = true,
                    "no_cache" => c.no_cache = true,
                    other => return Err(Error::Config(format!("unknown ablation flag {other:?}"))),
                }
            }
            rows.push((row.to_string(), c));
        }
        Ok(rows)
    }
}
