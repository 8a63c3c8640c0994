//! Reconstruction, perceptual and combined generator objectives.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Builder, ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

fn check_pairs<T: Float>(synth: &[Tensor<T>], target: &[Tensor<T>]) -> Result<()> {
    if synth.len() != target.len() || synth.is_empty() {
        return Err(Error::LengthMismatch(format!("{} synthesized items against {} targets", synth.len(), target.len())));
    }
    for (s, t) in synth.iter().zip(target) {
        if s.shape() != t.shape() {
            return Err(Error::SizeMismatch(format!("{:?} vs {:?}", s.shape(), t.shape())));
        }
    }
    Ok(())
}

/// Mean absolute difference per item, averaged over items.
pub fn l1_loss<T: Float>(synth: &[Tensor<T>], target: &[Tensor<T>]) -> Result<Tensor<T>> {
    check_pairs(synth, target)?;
    let sum = synth.iter().zip(target).map(|(s, t)| s.sub(t).abs().mean_all()).reduce(|a, b| a.add(&b)).expect("nonempty");
    Ok(sum.scale(1.0 / synth.len() as f64))
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    Random { layers: Vec<(ParamId, ParamId)> },
}

/// Frozen feature map with one tap per layer.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor<T: Float> {
    pub params: ParamStore<T>,
    kind: Kind,
}

impl<T: Float> PerceptualExtractor<T> {
    /// Random conv stack (4×4 stride-2 convolutions, He-normal weights, ReLU,
    /// no normalization) tapped after every block.
    pub fn random(cfg: &RunConfig) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, "perceptual");
        let mut b = Builder::new(&mut params, &mut rng);
        let mut c_in = 3;
        let mut layers = Vec::new();
        for (i, &c) in cfg.perceptual.widths.iter().enumerate() {
            let std = (2.0 / (c_in * 16) as f64).sqrt();
            let w = b.normal(&format!("{i}.weight"), &[c, c_in, 4, 4], std);
            let bias = b.zeros(&format!("{i}.bias"), &[c]);
            layers.push((w, bias));
            c_in = c;
        }
        params.freeze();
        Self { params, kind: Kind::Random { layers } }
    }

    /// The single tap is the input itself.
    pub fn identity() -> Self {
        Self { params: ParamStore::new(), kind: Kind::Identity }
    }

    pub fn num_taps(&self) -> usize {
        match &self.kind {
            Kind::Identity => 1,
            Kind::Random { layers } => layers.len(),
        }
    }

    pub fn features(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        match &self.kind {
            Kind::Identity => vec![x.clone()],
            Kind::Random { layers } => {
                let mut h = x.clone();
                layers
                    .iter()
                    .map(|&(w, b)| {
                        h = h.conv2d(self.params.get(w), Some(self.params.get(b)), 2, 1).relu();
                        h.clone()
                    })
                    .collect()
            }
        }
    }

    pub fn cast<U: Float>(&self) -> PerceptualExtractor<U> {
        PerceptualExtractor { params: self.params.cast(), kind: self.kind.clone() }
    }
}

/// Sum over taps of the mean absolute feature difference, averaged over items.
pub fn perceptual_loss<T: Float>(synth: &[Tensor<T>], target: &[Tensor<T>], phi: &PerceptualExtractor<T>) -> Result<Tensor<T>> {
    check_pairs(synth, target)?;
    let sum = synth
        .iter()
        .zip(target)
        .flat_map(|(s, t)| {
            let ft = phi.features(&t.detach());
            phi.features(s).into_iter().zip(ft).map(|(a, b)| a.sub(&b).abs().mean_all()).collect::<Vec<_>>()
        })
        .reduce(|a, b| a.add(&b))
        .expect("nonempty");
    Ok(sum.scale(1.0 / synth.len() as f64))
}

/// `mean(adv) + λ₁·l1 + λ₂·per + ccm`; any non-finite component is an error.
pub fn total_generator_loss<T: Float>(
    adv: &[Tensor<T>],
    l1: &Tensor<T>,
    per: &Tensor<T>,
    ccm: &Tensor<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Tensor<T>> {
    if adv.is_empty() {
        return Err(Error::LengthMismatch("no adversarial terms".into()));
    }
    let named = adv.iter().map(|a| ("adversarial", a)).chain([("l1", l1), ("perceptual", per), ("ccm", ccm)]);
    for (name, t) in named {
        if !t.all_finite() {
            return Err(Error::Divergence(format!("{name} loss is not finite")));
        }
    }
    let adv_mean = adv.iter().cloned().reduce(|a, b| a.add(&b)).expect("nonempty").scale(1.0 / adv.len() as f64);
    Ok(adv_mean.add(&l1.scale(lambda1)).add(&per.scale(lambda2)).add(ccm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn weighted_sum() {
        let t = total_generator_loss(&[s(1.0), s(1.0), s(1.0)], &s(2.0), &s(3.0), &s(4.0), 100.0, 10.0).unwrap();
        assert_eq!(t.item(), 235.0);
        let z = total_generator_loss(&[s(0.0)], &s(5.0), &s(7.0), &s(0.0), 0.0, 0.0).unwrap();
        assert_eq!(z.item(), 0.0);
        assert!(total_generator_loss(&[s(f64::NAN)], &s(0.0), &s(0.0), &s(0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn identity_perceptual_is_l1() {
        let a = vec![Tensor::<f64>::from_f64(&[0.1, -0.4, 0.9, 0.2], &[1, 1, 2, 2])];
        let b = vec![Tensor::from_f64(&[0.3, 0.4, -0.9, 0.2], &[1, 1, 2, 2])];
        let phi = PerceptualExtractor::<f64>::identity();
        assert_eq!(perceptual_loss(&a, &b, &phi).unwrap().item(), l1_loss(&a, &b).unwrap().item());
    }

    #[test]
    fn random_extractor_is_frozen_and_tapped() {
        let mut cfg = RunConfig::default();
        cfg.perceptual.widths = vec![4, 4, 4, 4];
        let phi = PerceptualExtractor::<f32>::random(&cfg);
        assert!(phi.params.is_frozen());
        let f = phi.features(&Tensor::full(0.5, &[1, 3, 32, 32]));
        assert_eq!(f.len(), 4);
        assert_eq!(f[3].shape(), &[1, 4, 2, 2]);
    }
}
