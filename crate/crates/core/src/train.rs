//! Adversarial training: discriminator sweep, then one generator step per
//! batch, with the collocation classifier and perceptual extractor frozen.

use crate::ccm::Ccm;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{random_crop_augment, Corpus, Split};
use crate::discriminator::{d_loss, g_adv_loss, MultiScaleDiscriminator};
use crate::domain::{stack_outfits, Category, Outfit};
use crate::error::{Error, Result};
use crate::generator::OutfitGenerator;
use crate::nn::{seeded_rng, Adam};
use crate::objectives::{l1_loss, perceptual_loss, total_generator_loss, PerceptualExtractor};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub d_loss: Vec<f64>,
    pub g_adv: Vec<f64>,
    pub l1: f64,
    pub per: f64,
    pub ccm: f64,
    pub total: f64,
    pub wall_clock: f64,
}

impl TrainRecord {
    /// Everything except the wall clock.
    pub fn losses(&self) -> Vec<f64> {
        let mut v = self.d_loss.clone();
        v.extend(&self.g_adv);
        v.extend([self.l1, self.per, self.ccm, self.total]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub config_hash: String,
    pub categories: Vec<Category>,
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter");
        for c in &self.categories {
            write!(s, ",d_loss_{c}").expect("write to string");
        }
        for c in &self.categories {
            write!(s, ",g_adv_{c}").expect("write to string");
        }
        s.push_str(",l1,per,ccm,total,wall_clock\n");
        for r in &self.records {
            write!(s, "{}", r.iter).expect("write to string");
            for v in r.d_loss.iter().chain(&r.g_adv) {
                write!(s, ",{v}").expect("write to string");
            }
            writeln!(s, ",{},{},{},{},{}", r.l1, r.per, r.ccm, r.total, r.wall_clock).expect("write to string");
        }
        s
    }

    /// One JSON object per record, each stamped with seed and config hash.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["seed"] = self.seed.into();
            v["config_hash"] = self.config_hash.clone().into();
            writeln!(s, "{v}").expect("write to string");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train_log.csv"), self.to_csv())?;
        std::fs::write(dir.join("train_log.jsonl"), self.to_jsonl())?;
        Ok(())
    }
}

/// Where training state goes on disk; nothing is written when `dir` is unset.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
}

/// A stacked training batch.
pub struct Prepared {
    pub given: Tensor<f32>,
    /// Target items, position-major, given item excluded.
    pub real: Vec<Tensor<f32>>,
    pub ref_masks: Vec<Tensor<f32>>,
}

pub struct GeneratorLoss {
    pub adv: Vec<Tensor<f32>>,
    pub l1: Tensor<f32>,
    pub per: Tensor<f32>,
    pub ccm: Tensor<f32>,
    pub total: Tensor<f32>,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub generator: OutfitGenerator<f32>,
    pub discriminators: Vec<MultiScaleDiscriminator<f32>>,
    pub ccm: Ccm<f32>,
    pub phi: PerceptualExtractor<f32>,
    pub log: TrainLog,
    g_opt: Vec<Adam<f32>>,
    d_opt: Vec<Adam<f32>>,
    batch_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    start: Instant,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, mut ccm: Ccm<f32>, mut phi: PerceptualExtractor<f32>) -> Self {
        ccm.params.freeze();
        phi.params.freeze();
        let generator = OutfitGenerator::new(cfg);
        let cats = generator.targets();
        let t = &cfg.train;
        let adam = || Adam::new(t.lr, t.beta1, t.beta2);
        Self {
            cfg: cfg.clone(),
            discriminators: cats.iter().map(|&c| MultiScaleDiscriminator::new(cfg, c)).collect(),
            g_opt: cats.iter().map(|_| adam()).collect(),
            d_opt: cats.iter().map(|_| adam()).collect(),
            log: TrainLog { seed: cfg.seed, config_hash: cfg.hash(), categories: cats, records: Vec::new() },
            generator,
            ccm,
            phi,
            batch_rng: seeded_rng(cfg.seed, "train/batches"),
            augment_rng: seeded_rng(cfg.seed, "train/augment"),
            start: Instant::now(),
        }
    }

    pub fn iteration(&self) -> usize {
        self.log.records.len()
    }

    /// Draws `batch_size` pool positions with replacement.
    pub fn sample(&mut self, pool_len: usize) -> Vec<usize> {
        (0..self.cfg.train.batch_size).map(|_| self.batch_rng.random_range(0..pool_len)).collect()
    }

    /// Augments and stacks a batch; the given item and its reference masks
    /// come from the outfits themselves.
    pub fn prepare(&mut self, batch: &[Outfit]) -> Prepared {
        let cfg = &self.cfg;
        let batch: Vec<Outfit> = if cfg.train.crop_margin > 0.0 {
            batch.iter().map(|o| random_crop_augment(o, cfg.train.crop_margin, &mut self.augment_rng)).collect()
        } else {
            batch.to_vec()
        };
        let (items, masks) = stack_outfits::<f32>(&batch);
        let gi = cfg.given_index;
        let (real, ref_masks) = items.iter().zip(&masks).enumerate().filter(|&(i, _)| i != gi).map(|(_, (x, m))| (x.clone(), m.clone())).unzip();
        Prepared { given: items[gi].clone(), real, ref_masks }
    }

    pub fn synthesize(&self, p: &Prepared) -> Result<Vec<Tensor<f32>>> {
        Ok(self.generator.forward(&p.given, &p.ref_masks)?.into_iter().map(|(y, _)| y).collect())
    }

    /// Updates every discriminator once; generator parameters are untouched.
    pub fn d_step(&mut self, p: &Prepared, fakes: &[Tensor<f32>]) -> Result<Vec<f64>> {
        let iter = self.log.records.len() + 1;
        let mut vals = Vec::with_capacity(fakes.len());
        for (t, d) in self.discriminators.iter_mut().enumerate() {
            let loss = d_loss(d, &p.real[t], &fakes[t]);
            let v = loss.item() as f64;
            if !v.is_finite() {
                return Err(Error::Divergence(format!("discriminator {} loss {v} at iteration {iter}", d.category)));
            }
            self.d_opt[t].step(&mut d.params, &loss.backward());
            vals.push(v);
        }
        Ok(vals)
    }

    /// Generator objective with discriminators, classifier and extractor
    /// frozen: `(per-item adversarial, l1, perceptual, ccm, total)`.
    pub fn generator_loss(&mut self, p: &Prepared, fakes: &[Tensor<f32>]) -> Result<GeneratorLoss> {
        for d in &mut self.discriminators {
            d.params.freeze();
        }
        let adv: Vec<Tensor<f32>> = self.discriminators.iter().zip(fakes).map(|(d, f)| g_adv_loss(d, f)).collect();
        for d in &mut self.discriminators {
            d.params.unfreeze();
        }
        let l1 = l1_loss(fakes, &p.real)?;
        let per = perceptual_loss(fakes, &p.real, &self.phi)?;
        let ccm = if self.cfg.loss.use_ccm {
            let mut seq = fakes.to_vec();
            seq.insert(self.cfg.given_index, p.given.clone());
            self.ccm.loss(&self.ccm.embed_sequence(&seq)?)?
        } else {
            Tensor::scalar(0.0)
        };
        let (l1w, l2w) = self.cfg.lambdas();
        let total = total_generator_loss(&adv, &l1, &per, &ccm, l1w, l2w)?;
        Ok(GeneratorLoss { adv, l1, per, ccm, total })
    }

    /// One generator update; discriminator parameters are untouched.
    pub fn g_step(&mut self, loss: &GeneratorLoss) {
        let grads = loss.total.backward();
        for (g, opt) in self.generator.generators.iter_mut().zip(&mut self.g_opt) {
            opt.step(&mut g.params, &grads);
        }
    }

    /// One discriminator sweep and one generator step on `batch`.
    pub fn step(&mut self, batch: &[Outfit]) -> Result<TrainRecord> {
        let p = self.prepare(batch);
        let fakes = self.synthesize(&p)?;
        let d_vals = self.d_step(&p, &fakes)?;
        let loss = self.generator_loss(&p, &fakes)?;
        self.g_step(&loss);
        let rec = TrainRecord {
            iter: self.log.records.len() + 1,
            d_loss: d_vals,
            g_adv: loss.adv.iter().map(|a| a.item() as f64).collect(),
            l1: loss.l1.item() as f64,
            per: loss.per.item() as f64,
            ccm: loss.ccm.item() as f64,
            total: loss.total.item() as f64,
            wall_clock: self.start.elapsed().as_secs_f64(),
        };
        self.log.records.push(rec.clone());
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.cfg);
        for g in &self.generator.generators {
            ck.add_store(&format!("generator/{}", g.category), &g.params);
        }
        for d in &self.discriminators {
            ck.add_store(&format!("discriminator/{}", d.category), &d.params);
        }
        ck.add_store("ccm", &self.ccm.params);
        ck.meta.insert("iteration".into(), self.iteration().into());
        ck
    }

    /// Runs `iterations` steps over a pool fetched by position; on a
    /// non-finite loss the pre-step state is written as `last_good.ckpt`.
    pub fn run(
        &mut self,
        pool_len: usize,
        fetch: impl Fn(usize) -> Result<Outfit>,
        iterations: usize,
        opts: &TrainOptions,
        mut progress: impl FnMut(&TrainRecord),
    ) -> Result<()> {
        if pool_len == 0 {
            return Err(Error::Corpus("training pool is empty".into()));
        }
        for _ in 0..iterations {
            let idx = self.sample(pool_len);
            let batch = idx.into_iter().map(&fetch).collect::<Result<Vec<_>>>()?;
            let last_good = opts.checkpoint_dir.as_ref().map(|_| self.checkpoint());
            match self.step(&batch) {
                Ok(rec) => progress(&rec),
                Err(e @ Error::Divergence(_)) => {
                    if let (Some(dir), Some(ck)) = (&opts.checkpoint_dir, last_good) {
                        ck.save(&dir.join("last_good.ckpt"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
            let every = self.cfg.train.checkpoint_every;
            if let Some(dir) = &opts.checkpoint_dir {
                if every > 0 && self.iteration() % every == 0 {
                    self.checkpoint().save(&dir.join("latest.ckpt"))?;
                }
            }
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub generator: OutfitGenerator<f32>,
    pub discriminators: Vec<MultiScaleDiscriminator<f32>>,
    pub log: TrainLog,
}

/// Full run over the corpus train split for `cfg.train.iterations` steps.
pub fn train_outfitgan(
    corpus: &Corpus,
    ccm: &Ccm<f32>,
    phi: &PerceptualExtractor<f32>,
    cfg: &RunConfig,
    opts: &TrainOptions,
    progress: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    let pool = corpus.indices(Split::Train);
    let mut trainer = Trainer::new(cfg, ccm.clone(), phi.clone());
    trainer.run(pool.len(), |i| corpus.outfit(pool[i], &cfg.order, cfg.given_index), cfg.train.iterations, opts, progress)?;
    if let Some(dir) = &opts.checkpoint_dir {
        trainer.checkpoint().save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { generator: trainer.generator, discriminators: trainer.discriminators, log: trainer.log })
}

/// Generator (and discriminators when present) restored from a checkpoint.
pub fn load_generator(ck: &Checkpoint) -> Result<OutfitGenerator<f32>> {
    let mut g = OutfitGenerator::<f32>::new(&ck.config);
    for item in &mut g.generators {
        ck.restore(&format!("generator/{}", item.category), &mut item.params)?;
    }
    Ok(g)
}

pub fn load_ccm(ck: &Checkpoint) -> Result<Ccm<f32>> {
    let mut c = Ccm::<f32>::new(&ck.config);
    ck.restore("ccm", &mut c.params)?;
    c.params.freeze();
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_outfit_seeded;
    use crate::data::random_token;

    pub(crate) fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.image_size = 32;
        c.generator.widths = vec![4, 4, 8, 8];
        c.generator.res_blocks = 1;
        c.sam.channels = 4;
        c.discriminator.widths = vec![4, 8, 8, 8];
        c.ccm.widths = vec![4, 4, 4, 4];
        c.ccm.embed_dim = 8;
        c.perceptual.widths = vec![4, 4, 4, 4];
        c.train.batch_size = 2;
        c.train.crop_margin = 0.0;
        c
    }

    fn pool(cfg: &RunConfig) -> Vec<Outfit> {
        let mut rng = seeded_rng(1, "pool");
        (0..4).map(|i| render_outfit_seeded(&random_token(&mut rng), i, cfg.image_size)).collect()
    }

    fn trainer(cfg: &RunConfig) -> Trainer {
        Trainer::new(cfg, Ccm::new(cfg), PerceptualExtractor::random(cfg))
    }

    #[test]
    fn frozen_modules_stay_put_and_log_is_reproducible() {
        let cfg = tiny();
        let p = pool(&cfg);
        let mut a = trainer(&cfg);
        let ccm_before = a.ccm.params.fingerprint();
        let phi_before = a.phi.params.fingerprint();
        a.run(p.len(), |i| Ok(p[i].clone()), 3, &TrainOptions::default(), |_| {}).unwrap();
        assert_eq!(a.ccm.params.fingerprint(), ccm_before);
        assert_eq!(a.phi.params.fingerprint(), phi_before);
        let mut b = trainer(&cfg);
        b.run(p.len(), |i| Ok(p[i].clone()), 3, &TrainOptions::default(), |_| {}).unwrap();
        let seq = |t: &Trainer| t.log.records.iter().map(TrainRecord::losses).collect::<Vec<_>>();
        assert_eq!(seq(&a), seq(&b));
        assert!(a.log.records.iter().all(|r| r.losses().iter().all(|v| v.is_finite())));
        assert_eq!(a.log.to_csv().lines().count(), 4);
    }

    #[test]
    fn checkpoint_restores_generator() {
        let cfg = tiny();
        let p = pool(&cfg);
        let mut t = trainer(&cfg);
        t.run(p.len(), |i| Ok(p[i].clone()), 1, &TrainOptions::default(), |_| {}).unwrap();
        let ck = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let g = load_generator(&ck).unwrap();
        for (x, y) in g.generators.iter().zip(&t.generator.generators) {
            assert_eq!(x.params.fingerprint(), y.params.fingerprint());
        }
        assert_eq!(load_ccm(&ck).unwrap().params.fingerprint(), t.ccm.params.fingerprint());
    }
}
