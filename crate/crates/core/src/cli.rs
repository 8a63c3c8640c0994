//! Command-line front end.

use crate::ccm::{pretrain_ccm, write_ccm_log};
use crate::checkpoint::Checkpoint;
use crate::config::{MaskStrategy, RunConfig};
use crate::data::io::{load_item, load_mask, save_item, save_mask};
use crate::data::{Corpus, Split};
use crate::domain::{BinaryMask, Category};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, MaskSource, Scorer};
use crate::maskgen::{random_masks, split_iou, synthesize_masks, train_mask_generators, MaskGeneratorState};
use crate::nn::seeded_rng;
use crate::objectives::PerceptualExtractor;
use crate::sam::{export_explanation_json, export_heat_png, mean_correspondence};
use crate::train::{load_ccm, load_generator, train_outfitgan, TrainOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "outfitsynth", version, about = "Compatible outfit synthesis from a single given item")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat JSON config with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root for all outputs; relative input paths are resolved against it.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Override one config field, e.g. `--set train.lr=0.0002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Accept checkpoints whose config hash differs from the resolved config.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerChoice {
    Oracle,
    Ccm,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic outfit corpus.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train the collocation classifier.
    PretrainCcm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the image-to-mask translators.
    PretrainMaskgen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Adversarial training of the outfit generator.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint holding a pretrained collocation classifier.
        #[arg(long)]
        ccm: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Complete an outfit around one given item.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        given: PathBuf,
        #[arg(long)]
        mask_strategy: Option<MaskStrategy>,
        /// One mask per target category, in configured order.
        #[arg(long, num_args = 1..)]
        masks: Vec<PathBuf>,
        #[arg(long)]
        maskgen: Option<PathBuf>,
        /// Corpus whose train split feeds the random strategy.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Metrics on a corpus split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "ccm")]
        scorer: ScorerChoice,
        #[arg(long)]
        mask_strategy: Option<MaskStrategy>,
        #[arg(long)]
        maskgen: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Dump alignment correspondences for a given item and masks.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        given: PathBuf,
        #[arg(long, num_args = 1..)]
        masks: Vec<PathBuf>,
        #[arg(long, default_value_t = crate::sam::DEFAULT_TOP_K)]
        top_k: usize,
        /// Pixels per grid cell in heat maps.
        #[arg(long, default_value_t = 16)]
        cell: usize,
    },
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn resolve_config(c: &Common, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let path = input(c, p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json_str(&text)?
        }
        None => base.unwrap_or_default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
        cfg = cfg.set(k, v)?;
    }
    let cfg = cfg.with_env();
    cfg.validate()?;
    Ok(cfg)
}

fn input(c: &Common, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        c.out_dir.join(p)
    }
}

fn say(c: &Common, msg: impl AsRef<str>) {
    if !c.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn load_corpus(c: &Common, path: &Path, cfg: &RunConfig) -> Result<Corpus> {
    let corpus = Corpus::load(&input(c, path))?;
    if corpus.image_size != cfg.image_size {
        return Err(Error::Config(format!("corpus is {} px but image_size is {}", corpus.image_size, cfg.image_size)));
    }
    Ok(corpus)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json_string())?;
    Ok(())
}

fn every(total: usize) -> usize {
    (total / 20).max(1)
}

/// Reads a checkpoint and resolves the run config on top of the one it carries.
fn checkpoint_config(c: &Common, path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let raw = Checkpoint::load(&input(c, path), None, true)?;
    let cfg = resolve_config(c, Some(raw.config.clone()))?;
    if cfg.hash() != raw.config_hash && !c.force {
        return Err(Error::HashMismatch { expected: cfg.hash(), found: raw.config_hash });
    }
    Ok((raw, cfg))
}

fn user_masks(c: &Common, paths: &[PathBuf], targets: &[Category], size: usize) -> Result<Vec<(Category, BinaryMask)>> {
    if paths.len() != targets.len() {
        return Err(Error::LengthMismatch(format!("{} masks given for {} target items ({:?})", paths.len(), targets.len(), targets)));
    }
    targets
        .iter()
        .zip(paths)
        .map(|(&cat, p)| {
            let m = load_mask(&input(c, p))?;
            if m.size != size {
                return Err(Error::SizeMismatch(format!("mask {} is {} px, expected {size}", p.display(), m.size)));
            }
            Ok((cat, m))
        })
        .collect()
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeDataset { common, n, image_size } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(s) = image_size {
                cfg = cfg.set("image_size", &s.to_string())?;
            }
            let n = n.unwrap_or(cfg.data.n_outfits);
            let corpus = Corpus::generate(n, cfg.seed, cfg.image_size, &common.out_dir)?;
            say(&common, format!("wrote {} outfits to {}", corpus.records.len(), common.out_dir.display()));
        }
        Command::PretrainCcm { common, corpus, epochs } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(e) = epochs {
                cfg = cfg.set("ccm.epochs", &e.to_string())?;
            }
            let corpus = load_corpus(&common, &corpus, &cfg)?;
            let out = pretrain_ccm(&corpus, &cfg, |r| {
                say(&common, format!("epoch {} train {:.4} val {:.4} acc {:.3}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy))
            })?;
            write_config(&common.out_dir, &cfg)?;
            let mut ck = Checkpoint::new(&cfg);
            ck.add_store("ccm", &out.ccm.params);
            ck.meta.insert("best_epoch".into(), out.best_epoch.into());
            ck.save(&common.out_dir.join("ccm.ckpt"))?;
            write_ccm_log(&common.out_dir.join("ccm_log.csv"), &out.log)?;
            let best = &out.log[out.best_epoch - 1];
            let summary = json!({"best_epoch": out.best_epoch, "val_loss": best.val_loss, "val_accuracy": best.val_accuracy, "config_hash": cfg.hash()});
            std::fs::write(common.out_dir.join("ccm_summary.json"), serde_json::to_string_pretty(&summary)?)?;
        }
        Command::PretrainMaskgen { common, corpus, steps } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(s) = steps {
                cfg = cfg.set("maskgen.steps", &s.to_string())?;
            }
            let corpus = load_corpus(&common, &corpus, &cfg)?;
            let k = every(cfg.maskgen.steps);
            let state = train_mask_generators(&corpus, &cfg, |s| {
                if s.step % k == 0 {
                    say(&common, format!("step {} d {:.4} g {:.4}", s.step, s.d_loss, s.g_loss));
                }
            })?;
            write_config(&common.out_dir, &cfg)?;
            state.to_checkpoint(&cfg).save(&common.out_dir.join("maskgen.ckpt"))?;
            let iou = split_iou(&state, &corpus, &cfg, Split::Val)?;
            let per: serde_json::Map<_, _> = state.categories().iter().zip(&iou).map(|(c, v)| (c.to_string(), json!(v))).collect();
            let summary = json!({"val_iou": per, "config_hash": cfg.hash()});
            std::fs::write(common.out_dir.join("maskgen_summary.json"), serde_json::to_string_pretty(&summary)?)?;
            say(&common, format!("val IoU {iou:?}"));
        }
        Command::Train { common, corpus, ccm, iterations } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(i) = iterations {
                cfg = cfg.set("train.iterations", &i.to_string())?;
            }
            let corpus = load_corpus(&common, &corpus, &cfg)?;
            let ck = Checkpoint::load(&input(&common, &ccm), None, true)?;
            let mut ccm_cfg = ck.config.clone();
            ccm_cfg.image_size = cfg.image_size;
            let mut model = crate::ccm::Ccm::<f32>::new(&ccm_cfg);
            ck.restore("ccm", &mut model.params)?;
            model.params.freeze();
            let mut run_cfg = cfg.clone();
            run_cfg.ccm.widths = ccm_cfg.ccm.widths.clone();
            run_cfg.ccm.embed_dim = ccm_cfg.ccm.embed_dim;
            write_config(&common.out_dir, &run_cfg)?;
            let phi = PerceptualExtractor::random(&run_cfg);
            let opts = TrainOptions { checkpoint_dir: Some(common.out_dir.join("checkpoints")) };
            let k = every(run_cfg.train.iterations);
            let out = train_outfitgan(&corpus, &model, &phi, &run_cfg, &opts, |r| {
                if r.iter % k == 0 {
                    say(&common, format!("iter {} l1 {:.4} per {:.4} ccm {:.4} total {:.4}", r.iter, r.l1, r.per, r.ccm, r.total));
                }
            })?;
            out.log.write(&common.out_dir)?;
        }
        Command::Generate { common, checkpoint, given, mask_strategy, masks, maskgen, corpus } => {
            let (ck, mut cfg) = checkpoint_config(&common, &checkpoint)?;
            if let Some(s) = mask_strategy {
                cfg.mask_strategy = s;
            }
            let generator = load_generator(&ck)?;
            let targets = generator.targets();
            let given_img = load_item(&input(&common, &given))?;
            if given_img.size != cfg.image_size {
                return Err(Error::SizeMismatch(format!("given item is {} px, model expects {}", given_img.size, cfg.image_size)));
            }
            let refs = match cfg.mask_strategy {
                MaskStrategy::User => user_masks(&common, &masks, &targets, cfg.image_size)?,
                MaskStrategy::Pix2pix => {
                    let p = maskgen.ok_or_else(|| Error::Config("--maskgen is required for the pix2pix strategy".into()))?;
                    let state = MaskGeneratorState::from_checkpoint(&Checkpoint::load(&input(&common, &p), None, true)?)?;
                    synthesize_masks(&given_img, &state)?
                }
                MaskStrategy::Random => {
                    let p = corpus.ok_or_else(|| Error::Config("--corpus is required for the random strategy".into()))?;
                    let corpus = load_corpus(&common, &p, &cfg)?;
                    random_masks(&targets, &corpus, &mut seeded_rng(cfg.seed, "generate/masks"))?
                }
            };
            let (outfit, _) = generator.generate(&given_img, &refs)?;
            let dir = common.out_dir.join("generated");
            std::fs::create_dir_all(&dir)?;
            for (i, cat) in outfit.categories.iter().enumerate() {
                save_item(&dir.join(format!("{cat}.png")), &outfit.items[i])?;
                save_mask(&dir.join(format!("{cat}_mask.png")), &outfit.masks[i])?;
            }
            write_config(&dir, &cfg)?;
            say(&common, format!("wrote {}", dir.display()));
        }
        Command::Evaluate { common, checkpoint, corpus, scorer, mask_strategy, maskgen, split } => {
            let (ck, mut cfg) = checkpoint_config(&common, &checkpoint)?;
            if let Some(s) = mask_strategy {
                cfg.mask_strategy = s;
            }
            let split = match split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => return Err(Error::Config(format!("unknown split {other:?}"))),
            };
            let corpus = load_corpus(&common, &corpus, &cfg)?;
            let generator = load_generator(&ck)?;
            let ccm = load_ccm(&ck)?;
            let state;
            let source = match cfg.mask_strategy {
                MaskStrategy::User => MaskSource::Truth,
                MaskStrategy::Pix2pix => {
                    let p = maskgen.ok_or_else(|| Error::Config("--maskgen is required for the pix2pix strategy".into()))?;
                    state = MaskGeneratorState::from_checkpoint(&Checkpoint::load(&input(&common, &p), None, true)?)?;
                    MaskSource::Pix2pix(&state)
                }
                MaskStrategy::Random => MaskSource::Random(&corpus),
            };
            let psi = match scorer {
                ScorerChoice::Oracle => Scorer::Oracle,
                ScorerChoice::Ccm => Scorer::Ccm(&ccm),
            };
            let report = evaluate_run(&generator, &corpus, split, &source, &psi, &ccm, &cfg)?;
            report.write(&common.out_dir)?;
            say(&common, report.to_json());
        }
        Command::Explain { common, checkpoint, given, masks, top_k, cell } => {
            let (ck, cfg) = checkpoint_config(&common, &checkpoint)?;
            let generator = load_generator(&ck)?;
            let targets = generator.targets();
            let given_img = load_item(&input(&common, &given))?;
            let refs = user_masks(&common, &masks, &targets, cfg.image_size)?;
            let (_, corr) = generator.generate(&given_img, &refs)?;
            let dir = common.out_dir.join("explain");
            std::fs::create_dir_all(&dir)?;
            for (cat, m) in targets.iter().zip(corr) {
                let m = m.ok_or_else(|| Error::Config("alignment is bypassed (sam.channels = 0); nothing to explain".into()))?;
                let regions: Vec<Vec<(usize, usize)>> = (0..m.h).flat_map(|r| (0..m.w).map(move |c| vec![(r, c)])).collect();
                export_explanation_json(&dir.join(format!("{cat}_correspondence.json")), &m, &regions, top_k)?;
                export_heat_png(&dir.join(format!("{cat}_mean.png")), &mean_correspondence(&m), m.h, m.w, cell)?;
            }
            say(&common, format!("wrote {}", dir.display()));
        }
    }
    Ok(())
}
