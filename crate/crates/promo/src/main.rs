use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use promo::commands::{cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_sample, cmd_train, BENCH_RUNS};
use promo::{Error, Result, RunConfig};
use promo_core::sampler::SamplerMode;

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train a model and write checkpoints plus a loss log
    Train,
    /// Generate try-on images for the given seeds
    Sample,
    /// Score held-out seeds with and without style prompts
    Eval,
    /// Time full against cached sampling
    Bench,
    /// Train and evaluate one model per ablation row
    Ablate,
    /// Write held-out samples to the dataset directory
    Gen,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Cached,
}

#[derive(clap::Args)]
struct Flags {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Checkpoint to load (resume for `train`)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Sample seed for `sample` (repeatable); training seed otherwise
    #[arg(long, global = true)]
    seed: Vec<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    no_rope_groups: bool,
    #[arg(long, global = true)]
    no_weighted_loss: bool,
    #[arg(long, global = true)]
    no_merge: bool,
    #[arg(long, global = true)]
    no_cache: bool,
    /// Sample with the style prompt dropped
    #[arg(long, global = true)]
    null_style: bool,
}

#[derive(Parser)]
#[command(name = "promo", about = "Multi-garment virtual try-on harness", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

fn build_config(cmd: Command, f: &Flags) -> Result<RunConfig> {
    let path = f.config.as_ref().ok_or_else(|| Error::Config("--config <file> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = f.mode {
        if matches!(m, Mode::Cached) && f.no_cache {
            return Err(Error::Config("--mode cached conflicts with --no-cache".into()));
        }
        cfg.mode = match m {
            Mode::Full => SamplerMode::Full,
            Mode::Cached => SamplerMode::Cached,
        };
    }
    cfg.no_rope_groups |= f.no_rope_groups;
    cfg.no_weighted_loss |= f.no_weighted_loss;
    cfg.no_merge |= f.no_merge;
    cfg.no_cache |= f.no_cache;
    if cmd != Command::Sample {
        match f.seed.as_slice() {
            [] => {}
            [s] => cfg.seed = *s,
            _ => return Err(Error::Config("--seed may be repeated only for `sample`".into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<()> {
    let f = &args.flags;
    let cfg = build_config(args.command, f)?;
    let ck = f.checkpoint.as_deref();
    match args.command {
        Command::Train => {
            let out = cmd_train(&cfg, ck)?;
            let (first, last) = out.window_means(100);
            println!(
                "trained {} steps in {:.1}s: first-100 mean loss {first:.4}, last-100 {last:.4}; checkpoint {}",
                out.losses.len(),
                out.seconds,
                out.checkpoint.display()
            );
        }
        Command::Sample => {
            let seeds: Vec<u64> = if f.seed.is_empty() {
                cfg.eval_seed_range().take(4).collect()
            } else {
                f.seed.clone()
            };
            let imgs = cmd_sample(&cfg, ck, &seeds, f.null_style)?;
            println!("wrote {} samples to {}", imgs.len(), cfg.out_dir().join("samples").display());
        }
        Command::Eval => {
            let s = cmd_eval(&cfg, ck)?;
            for (name, r) in [
                ("prompted", s.report()),
                ("two-garment", s.report_two_garment()),
                ("null style", s.report_null()),
            ] {
                if let Some(r) = r {
                    println!(
                        "{name:>12}: ssim {:.4} psnr {:.2} garment acc {:.3} style acc {:.3} (n={})",
                        r.ssim, r.psnr, r.garment_assignment_acc, r.style_compliance_acc, r.n
                    );
                }
            }
        }
        Command::Bench => {
            let recs = cmd_bench(&cfg, ck, BENCH_RUNS)?;
            for r in &recs {
                println!(
                    "{:>6}: median {:.2} ms over {} runs, {} attention flops",
                    promo::config::mode_name(r.mode),
                    r.wall_ms_median,
                    r.runs,
                    r.attention_flops
                );
            }
            if let Some(s) = promo::bench::speedup(&recs) {
                println!("speedup {s:.2}x");
            }
        }
        Command::Ablate => {
            for row in cmd_ablate(&cfg)? {
                if let Some(r) = row.summary.report_two_garment() {
                    println!("{:>20}: two-garment acc {:.3} ssim {:.4}", row.name, r.garment_assignment_acc, r.ssim);
                }
            }
        }
        Command::Gen => {
            let paths = cmd_gen(&cfg)?;
            println!("wrote {} samples", paths.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
