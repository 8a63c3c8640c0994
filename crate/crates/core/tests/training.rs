mod common;

use common::tiny_config;
use outfitsynth::ccm::Ccm;
use outfitsynth::checkpoint::Checkpoint;
use outfitsynth::config::RunConfig;
use outfitsynth::data::{Corpus, Split};
use outfitsynth::domain::{stack_outfits, Category, ItemImage};
use outfitsynth::eval::{embed_for_fid, evaluate_run, fid, MaskSource, Scorer};
use outfitsynth::generator::ItemGenerator;
use outfitsynth::maskgen::{random_mask_sources, random_masks, synthesize_masks, train_mask_generators, MaskGeneratorState};
use outfitsynth::nn::{seeded_rng, Adam};
use outfitsynth::objectives::{l1_loss, PerceptualExtractor};
use outfitsynth::tensor::Tensor;
use outfitsynth::train::{load_generator, train_outfitgan, TrainOptions, Trainer};
use std::sync::OnceLock;

fn corpus() -> &'static Corpus {
    static DIR: OnceLock<(tempfile::TempDir, Corpus)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::generate(60, 5, 32, dir.path()).unwrap();
        (dir, c)
    })
    .1
}

fn trainer(cfg: &RunConfig) -> Trainer {
    Trainer::new(cfg, Ccm::new(cfg), PerceptualExtractor::random(cfg))
}

fn batch(cfg: &RunConfig, t: &mut Trainer) -> Vec<outfitsynth::domain::Outfit> {
    let pool = corpus().indices(Split::Train);
    t.sample(pool.len()).into_iter().map(|i| corpus().outfit(pool[i], &cfg.order, cfg.given_index).unwrap()).collect()
}

fn fingerprints(t: &Trainer) -> (Vec<String>, Vec<String>) {
    (
        t.generator.generators.iter().map(|g| g.params.fingerprint()).collect(),
        t.discriminators.iter().map(|d| d.params.fingerprint()).collect(),
    )
}

#[test]
fn each_phase_leaves_the_other_network_alone() {
    let cfg = tiny_config();
    let mut t = trainer(&cfg);
    for _ in 0..3 {
        let b = batch(&cfg, &mut t);
        let p = t.prepare(&b);
        let fakes = t.synthesize(&p).unwrap();
        let (g0, d0) = fingerprints(&t);
        t.d_step(&p, &fakes).unwrap();
        let (g1, d1) = fingerprints(&t);
        assert_eq!(g0, g1, "discriminator step moved the generator");
        assert!(d0.iter().zip(&d1).all(|(a, b)| a != b));
        let loss = t.generator_loss(&p, &fakes).unwrap();
        t.g_step(&loss);
        let (g2, d2) = fingerprints(&t);
        assert_eq!(d1, d2, "generator step moved a discriminator");
        assert!(g1.iter().zip(&g2).all(|(a, b)| a != b));
    }
}

#[test]
fn collocation_loss_reaches_the_generator_but_not_the_classifier() {
    let cfg = tiny_config();
    let mut t = trainer(&cfg);
    let ccm_before = t.ccm.params.fingerprint();
    let b = batch(&cfg, &mut t);
    let p = t.prepare(&b);
    let fakes = t.synthesize(&p).unwrap();
    let loss = t.generator_loss(&p, &fakes).unwrap();
    let grads = loss.ccm.backward();
    for g in &t.generator.generators {
        assert!(g.params.grad_norm(&grads) > 0.0, "no parameter gradient for {}", g.category);
    }
    assert_eq!(t.ccm.params.grad_norm(&grads), 0.0);
    t.g_step(&loss);
    assert_eq!(t.ccm.params.fingerprint(), ccm_before);
}

#[test]
fn disabling_the_classifier_zeroes_its_term() {
    let mut cfg = tiny_config();
    cfg.loss.use_ccm = false;
    let mut t = trainer(&cfg);
    let b = batch(&cfg, &mut t);
    let rec = t.step(&b).unwrap();
    assert_eq!(rec.ccm, 0.0);
}

#[test]
fn logged_losses_stay_finite() {
    let mut cfg = tiny_config();
    cfg.train.iterations = 60;
    let ccm = Ccm::new(&cfg);
    let out = train_outfitgan(corpus(), &ccm, &PerceptualExtractor::random(&cfg), &cfg, &TrainOptions::default(), |_| {}).unwrap();
    assert_eq!(out.log.records.len(), 60);
    assert!(out.log.records.iter().all(|r| r.losses().iter().all(|v| v.is_finite())));
    let csv = out.log.to_csv();
    assert!(csv.starts_with("iter,d_loss_bag,d_loss_lower,d_loss_shoes,g_adv_bag"));
    assert_eq!(out.log.to_jsonl().lines().count(), 60);
}

#[test]
fn single_triple_overfits() {
    let mut cfg = tiny_config();
    cfg.generator.widths = vec![16, 32, 32, 32];
    cfg.generator.res_blocks = 2;
    let g = ItemGenerator::<f32>::new(&cfg, Category::Bag);
    let o = corpus().outfit(corpus().indices(Split::Train)[0], &cfg.order, cfg.given_index).unwrap();
    let (items, masks) = stack_outfits::<f32>(std::slice::from_ref(&o));
    let (given, target, mask) = (&items[0], &items[1], &masks[1]);
    let mut g = g;
    let mut opt = Adam::new(2e-3, 0.5, 0.999);
    let l1 = |g: &ItemGenerator<f32>| l1_loss(&[g.forward(given, mask).unwrap().0], std::slice::from_ref(target)).unwrap();
    let start = l1(&g).item();
    for _ in 0..500 {
        let loss = l1(&g).scale(100.0);
        let grads = loss.backward();
        opt.step(&mut g.params, &grads);
    }
    let end = l1(&g).item();
    assert!(end < 0.05, "L1 {start} -> {end}");
}

#[test]
fn checkpoint_restores_identical_outputs() {
    let mut cfg = tiny_config();
    cfg.train.iterations = 5;
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()) };
    let out = train_outfitgan(corpus(), &Ccm::new(&cfg), &PerceptualExtractor::random(&cfg), &cfg, &opts, |_| {}).unwrap();
    let ck = Checkpoint::load(&dir.path().join("final.ckpt"), Some(&cfg), false).unwrap();
    let back = load_generator(&ck).unwrap();
    let given = Tensor::<f32>::from_vec((0..3 * 32 * 32).map(|i| (i % 17) as f32 / 8.5 - 1.0).collect(), &[1, 3, 32, 32]);
    let masks: Vec<Tensor<f32>> = (0..3).map(|_| Tensor::full(1.0, &[1, 1, 32, 32])).collect();
    let a = out.generator.forward(&given, &masks).unwrap();
    let b = back.forward(&given, &masks).unwrap();
    for ((x, _), (y, _)) in a.iter().zip(&b) {
        assert_eq!(x.data(), y.data());
    }
    let mut other = cfg.clone();
    other.generator.widths = vec![4, 4, 8, 16];
    assert!(Checkpoint::load(&dir.path().join("final.ckpt"), Some(&other), false).is_err());
}

#[test]
fn random_mask_selection_is_uniform() {
    let cats = [Category::Bag, Category::Lower, Category::Shoes];
    let train = corpus().indices(Split::Train);
    let pools: Vec<Vec<usize>> =
        cats.iter().map(|c| train.iter().copied().filter(|&i| corpus().records[i].entry.categories.contains(c)).collect()).collect();
    let mut rng = seeded_rng(1, "uniformity");
    let draws = 1000;
    let mut counts = vec![vec![0usize; corpus().records.len()]; cats.len()];
    for _ in 0..draws {
        for (c, i) in random_mask_sources(&cats, corpus(), &mut rng).unwrap().into_iter().enumerate() {
            assert!(pools[c].contains(&i), "source {i} is not a train outfit with {}", cats[c]);
            counts[c][i] += 1;
        }
    }
    // Pearson statistic within 3σ of its chi-square expectation.
    for (per_cat, pool) in counts.iter().zip(&pools) {
        let expected = draws as f64 / pool.len() as f64;
        let stat: f64 = pool.iter().map(|&i| (per_cat[i] as f64 - expected).powi(2) / expected).sum();
        let df = (pool.len() - 1) as f64;
        assert!(stat <= df + 3.0 * (2.0 * df).sqrt(), "chi-square {stat} with {df} dof");
    }
    let masks = random_masks(&cats, corpus(), &mut rng).unwrap();
    assert!(masks.iter().all(|(_, m)| m.size == 32 && m.check().is_ok()));
}

#[test]
fn mask_generators_are_reproducible_and_binary() {
    let mut cfg = tiny_config();
    cfg.maskgen.steps = 4;
    let a = train_mask_generators(corpus(), &cfg, |_| {}).unwrap();
    let b = train_mask_generators(corpus(), &cfg, |_| {}).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), MaskGeneratorState::new(&cfg).fingerprint());
    let back = MaskGeneratorState::from_checkpoint(&a.to_checkpoint(&cfg)).unwrap();
    assert_eq!(back.fingerprint(), a.fingerprint());
    let o = corpus().outfit(corpus().indices(Split::Val)[0], &cfg.order, cfg.given_index).unwrap();
    let masks = synthesize_masks(o.given(), &a).unwrap();
    assert_eq!(masks.iter().map(|(c, _)| *c).collect::<Vec<_>>(), cfg.target_categories());
    assert!(masks.iter().all(|(_, m)| m.size == 32 && m.check().is_ok()));
}

#[test]
fn evaluation_reports_follow_the_mask_strategy() {
    let cfg = tiny_config();
    let t = trainer(&cfg);
    let ccm = Ccm::<f32>::new(&cfg);
    let real = evaluate_run(&t.generator, corpus(), Split::Val, &MaskSource::Truth, &Scorer::Oracle, &ccm, &cfg).unwrap();
    assert_eq!(real.ssim.as_ref().unwrap().len(), 3);
    assert!((0.0..=1.0).contains(&real.fcts));
    let random = evaluate_run(&t.generator, corpus(), Split::Val, &MaskSource::Random(corpus()), &Scorer::Ccm(&ccm), &ccm, &cfg).unwrap();
    assert!(random.ssim.is_none());
    assert_eq!(random.fid.len(), 3);
    assert_eq!(random.config_hash, cfg.hash());
}

#[test]
fn real_halves_are_closer_than_untrained_output() {
    let cfg = tiny_config();
    let ccm = Ccm::<f32>::new(&cfg);
    let outfits = corpus().outfits(Split::Train, &cfg.order, cfg.given_index).unwrap();
    let bags: Vec<&ItemImage> = outfits.iter().map(|o| o.item(Category::Bag).unwrap()).collect();
    let (left, right) = bags.split_at(bags.len() / 2);
    let t = trainer(&cfg);
    let g = t.generator.generator(Category::Bag).unwrap();
    let synth: Vec<ItemImage> = outfits[..right.len()]
        .iter()
        .map(|o| {
            let given = ItemImage::batch::<f32>(&[o.given()]);
            let m = outfitsynth::domain::BinaryMask::batch::<f32>(&[o.mask(Category::Bag).unwrap()]);
            ItemImage::from_tensor(&g.forward(&given, &m).unwrap().0, 0)
        })
        .collect();
    let synth: Vec<&ItemImage> = synth.iter().collect();
    let real_real = fid(&embed_for_fid(left, &ccm, "a").unwrap(), &embed_for_fid(right, &ccm, "b").unwrap()).unwrap();
    let real_fake = fid(&embed_for_fid(left, &ccm, "a").unwrap(), &embed_for_fid(&synth, &ccm, "g").unwrap()).unwrap();
    assert!(real_real < real_fake, "{real_real} vs {real_fake}");
}
