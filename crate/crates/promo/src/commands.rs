//! The `train`, `sample`, `eval`, `bench`, `ablate` and `gen` subcommands as
//! library functions. Each writes under the run's output directory and embeds
//! the config hash in every artifact.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use promo_core::image::Image;
use promo_core::metrics::{evaluate, EvalReport, SampleScore};
use promo_core::model::PromoDiT;
use promo_core::pipeline::{build_conditioning, generate};
use promo_core::sampler::SamplerMode;
use promo_core::spatial::{make_agnostic, merge_spatial};
use promo_core::synth::{gen_sample, TryOnSample};
use promo_core::train::Trainer;
use serde_json::json;

use crate::bench::{bench_inference, speedup, BenchRecord, Workload};
use crate::config::{mode_name, RunConfig};
use crate::error::{Error, Result};
use crate::format::{load_checkpoint_for, write_checkpoint, write_sample, Checkpoint};
use crate::raster::{grid, save_png, write_png};

pub const CHECKPOINT_FILE: &str = "checkpoint.prmc";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const EVAL_REPORT: &str = "eval.jsonl";
pub const BENCH_REPORT: &str = "bench.jsonl";
pub const ABLATE_REPORT: &str = "ablate.jsonl";
pub const SAMPLE_DIR: &str = "samples";
pub const DATASET_DIR: &str = "dataset";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    crate::format::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub losses: Vec<f32>,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

impl TrainOutcome {
    /// Mean loss of the first and last `n` steps.
    pub fn window_means(&self, n: usize) -> (f64, f64) {
        let n = n.min(self.losses.len()).max(1);
        let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..n.min(self.losses.len())]), mean(&self.losses[self.losses.len().saturating_sub(n)..]))
    }
}

/// Trains from scratch, or from `resume` when given (its config hash must
/// match). Appends one JSON record per step to the loss log and writes a
/// checkpoint every `checkpoint_every` steps and at the end.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let out = cfg.out_dir();
    create_dir(&out)?;
    let hash = cfg.hash();
    let hash_hex = hex::encode(hash);
    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint_for(path, &hash)?;
            let mut t = Trainer::from_model(cfg.train_config(), PromoDiT::from_params(ck.params));
            if let Some(a) = ck.adam {
                t.adam = a;
            }
            t.step = ck.step as usize;
            t
        }
        None => Trainer::new(cfg.train_config())?,
    };
    let log_path = out.join(LOSS_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let save = |t: &Trainer, path: &Path| {
        write_checkpoint(
            path,
            &Checkpoint {
                config_hash: hash,
                step: t.step as u64,
                params: t.model.params.clone(),
                adam: Some(t.adam.clone()),
            },
        )
    };
    let start = Instant::now();
    let mut losses = Vec::new();
    while trainer.step < cfg.steps {
        let step = trainer.step;
        let lr = cfg.train_config().lr_at(step);
        let loss = trainer.train_step()?;
        losses.push(loss);
        let rec = json!({"step": step, "loss": loss, "lr": lr, "config_hash": hash_hex});
        writeln!(log, "{rec}").map_err(|e| Error::io(&log_path, e))?;
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 && trainer.step < cfg.steps {
            save(&trainer, &out.join(format!("checkpoint_{:06}.prmc", trainer.step)))?;
        }
    }
    let checkpoint = out.join(CHECKPOINT_FILE);
    save(&trainer, &checkpoint)?;
    Ok(TrainOutcome {
        losses,
        checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join(CHECKPOINT_FILE)
}

/// Loads the model a run was trained into; rejects checkpoints from other configs.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PromoDiT<f32>> {
    let path = checkpoint.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
    let ck = load_checkpoint_for(&path, &cfg.hash())?;
    if ck.params.cfg != cfg.model() {
        return Err(Error::Config("checkpoint hyperparameters differ from the config".into()));
    }
    Ok(PromoDiT::from_params(ck.params))
}

/// Visual row for one sample: person, agnostic, pose, garments, output, target.
pub fn comparison_row(sample: &TryOnSample, output: &Image) -> Result<Vec<Image>> {
    let agnostic = make_agnostic(&sample.person, &sample.agnostic_mask)?;
    let mut row = vec![sample.person.clone(), agnostic.clone(), sample.pose_map.clone()];
    row.push(merge_spatial(&agnostic, &sample.pose_map)?);
    row.extend(sample.garments.iter().cloned());
    row.push(output.clone());
    row.push(sample.target.clone());
    Ok(row)
}

/// Samples one image per seed, writes `samples/seed_<n>.png` and
/// `samples/grid.png`, and returns the images.
pub fn cmd_sample(cfg: &RunConfig, checkpoint: Option<&Path>, seeds: &[u64], null_style: bool) -> Result<Vec<Image>> {
    let model = load_model(cfg, checkpoint)?;
    let hash = cfg.hash_hex();
    let dir = cfg.out_dir().join(SAMPLE_DIR);
    create_dir(&dir)?;
    let synth = cfg.synth();
    let mut images = Vec::new();
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for &seed in seeds {
        let sample = gen_sample(seed, &synth)?;
        let img = generate(&model, &sample, cfg.cond(), null_style, &cfg.sampler(seed)?)?;
        save_png(&img, &dir.join(format!("seed_{seed}.png")), &hash)?;
        rows.push(comparison_row(&sample, &img)?);
        meta.push(json!({
            "seed": seed,
            "mode": mode_name(cfg.effective_mode()),
            "steps": cfg.sampler_steps,
            "null_style": null_style,
            "config_hash": hash,
        }));
        images.push(img);
    }
    write_png(&grid(&rows), &dir.join("grid.png"), &hash)?;
    write_lines(&dir.join("samples.jsonl"), &meta)?;
    Ok(images)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub prompted: Vec<SampleScore>,
    pub null: Vec<SampleScore>,
}

fn two_garment(scores: &[SampleScore]) -> Vec<SampleScore> {
    scores.iter().copied().filter(|s| s.n_garments == 2).collect()
}

impl EvalSummary {
    pub fn report(&self) -> Option<EvalReport> {
        EvalReport::from_scores(&self.prompted)
    }
    pub fn report_two_garment(&self) -> Option<EvalReport> {
        EvalReport::from_scores(&two_garment(&self.prompted))
    }
    pub fn report_null(&self) -> Option<EvalReport> {
        EvalReport::from_scores(&self.null)
    }
}

pub fn report_json(name: &str, r: &EvalReport, hash: &str, mode: SamplerMode) -> serde_json::Value {
    json!({
        "row": name,
        "ssim": r.ssim,
        "psnr": if r.psnr.is_finite() { json!(r.psnr) } else { json!("inf") },
        "garment_assignment_acc": r.garment_assignment_acc,
        "style_compliance_acc": r.style_compliance_acc,
        "n": r.n,
        "mode": mode_name(mode),
        "config_hash": hash,
    })
}

fn eval_model(cfg: &RunConfig, model: &PromoDiT<f32>) -> Result<EvalSummary> {
    let sampler = cfg.sampler(0)?;
    let run = |null| evaluate(model, cfg.eval_seed_range(), &cfg.synth(), cfg.cond(), null, &sampler);
    Ok(EvalSummary {
        prompted: run(false)?,
        null: run(true)?,
    })
}

fn summary_lines(s: &EvalSummary, hash: &str, mode: SamplerMode) -> Vec<serde_json::Value> {
    let mut lines = Vec::new();
    let rows = [
        ("prompted", s.report()),
        ("prompted_two_garment", s.report_two_garment()),
        ("null_style", s.report_null()),
        ("null_style_two_garment", EvalReport::from_scores(&two_garment(&s.null))),
    ];
    for (name, r) in rows {
        if let Some(r) = r {
            lines.push(report_json(name, &r, hash, mode));
        }
    }
    lines
}

/// Scores the held-out seeds with and without the style prompt and writes
/// one record per row to `eval.jsonl`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    let model = load_model(cfg, checkpoint)?;
    let summary = eval_model(cfg, &model)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_lines(&out.join(EVAL_REPORT), &summary_lines(&summary, &cfg.hash_hex(), cfg.effective_mode()))?;
    Ok(summary)
}

/// Scores precomputed outputs against their samples.
pub fn eval_outputs(samples: &[TryOnSample], outputs: &[Image]) -> Result<Option<EvalReport>> {
    let scores = samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| SampleScore::score(o, s))
        .collect::<promo_core::Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(&scores))
}

pub const BENCH_RUNS: usize = 20;

/// Benchmarks full against cached sampling on the standard workload. Without
/// a checkpoint the model is freshly initialized with randomized weights.
pub fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>, runs: usize) -> Result<Vec<BenchRecord>> {
    let model = match checkpoint {
        Some(p) => load_model(cfg, Some(p))?,
        None => {
            let mut m = PromoDiT::new(cfg.model(), cfg.seed)?;
            m.params.randomize(cfg.seed, 0.05);
            m
        }
    };
    let records = bench_inference(
        &model,
        &Workload::standard(),
        cfg.sampler_steps,
        runs,
        &[SamplerMode::Full, SamplerMode::Cached],
    )?;
    let hash = cfg.hash_hex();
    let mut lines: Vec<_> = records.iter().map(|r| r.to_json(&hash)).collect();
    if let Some(s) = speedup(&records) {
        lines.push(json!({"speedup_full_over_cached": s, "config_hash": hash}));
    }
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_lines(&out.join(BENCH_REPORT), &lines)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub config_hash: String,
    pub summary: EvalSummary,
}

/// Trains and evaluates one model per `ablations` row, each in
/// `ablate/<row>/`, and writes the combined table to `ablate.jsonl`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let out = cfg.out_dir();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (name, mut row_cfg) in cfg.ablation_rows()? {
        row_cfg.out_dir = out.join("ablate").join(name.replace('+', "_"));
        let model = if row_cfg.steps == 0 {
            PromoDiT::new(row_cfg.model(), row_cfg.seed)?
        } else {
            train_in(&row_cfg)?
        };
        let summary = eval_model(&row_cfg, &model)?;
        let hash = row_cfg.hash_hex();
        for mut l in summary_lines(&summary, &hash, row_cfg.effective_mode()) {
            l["ablation"] = json!(name);
            lines.push(l);
        }
        rows.push(AblationRow {
            name,
            config_hash: hash,
            summary,
        });
    }
    create_dir(&out)?;
    write_lines(&out.join(ABLATE_REPORT), &lines)?;
    Ok(rows)
}

// Trains into `cfg.out_dir` exactly (ignoring the environment override,
// which already applied to the parent directory).
fn train_in(cfg: &RunConfig) -> Result<PromoDiT<f32>> {
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    let mut trainer = Trainer::new(cfg.train_config())?;
    let hash = cfg.hash();
    let hash_hex = hex::encode(hash);
    let mut lines = Vec::new();
    while trainer.step < cfg.steps {
        let step = trainer.step;
        let loss = trainer.train_step()?;
        lines.push(json!({"step": step, "loss": loss, "config_hash": hash_hex}));
    }
    write_lines(&dir.join(LOSS_LOG), &lines)?;
    write_checkpoint(
        &dir.join(CHECKPOINT_FILE),
        &Checkpoint {
            config_hash: hash,
            step: trainer.step as u64,
            params: trainer.model.params.clone(),
            adam: None,
        },
    )?;
    Ok(trainer.model)
}

/// Writes the held-out samples as `PRMO` records to `dataset/<seed>.prmo`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out_dir().join(DATASET_DIR);
    create_dir(&dir)?;
    let hash = cfg.hash();
    let synth = cfg.synth();
    let mut paths = Vec::new();
    for seed in cfg.eval_seed_range() {
        let s = gen_sample(seed, &synth)?;
        build_conditioning(&s, cfg.cond(), false)?;
        let p = dir.join(format!("{seed}.prmo"));
        write_sample(&p, &s, &hash)?;
        paths.push(p);
    }
    Ok(paths)
}
