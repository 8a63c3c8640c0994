//! Run configuration. On disk it is a flat JSON object with dotted keys
//! (`"loss.lambda1": 100`); every key has a default and unknown keys are
//! rejected.

use crate::domain::Category;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const DETERMINISM_ENV: &str = "OUTFITSYNTH_DETERMINISTIC";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    User,
    Pix2pix,
    Random,
}

impl std::str::FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Self::User),
            "pix2pix" => Ok(Self::Pix2pix),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown mask strategy {other:?}"))),
        }
    }
}

/// What the item branch of the alignment module looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamItemInput {
    Image,
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamConfig {
    /// Branch output channels; 0 disables alignment.
    pub channels: usize,
    /// Sum `F_src(u)` instead of `F_src(v)` (degenerates to identity).
    pub literal_alignment: bool,
    pub item_input: SamItemInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub widths: Vec<usize>,
    pub res_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Coefficients used when the run targets generated reference masks.
    pub lambda1_generated: f64,
    pub lambda2_generated: f64,
    pub use_ccm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub crop_margin: f64,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcmConfig {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualConfig {
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskgenConfig {
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    pub disc_widths: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_outfits: usize,
    pub background_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub image_size: usize,
    pub order: Vec<Category>,
    pub given_index: usize,
    pub seed: u64,
    pub mask_strategy: MaskStrategy,
    pub deterministic: bool,
    pub sam: SamConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub ccm: CcmConfig,
    pub perceptual: PerceptualConfig,
    pub maskgen: MaskgenConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            order: Category::ALL.to_vec(),
            given_index: 0,
            seed: 0,
            mask_strategy: MaskStrategy::User,
            deterministic: false,
            sam: SamConfig { channels: 64, literal_alignment: false, item_input: SamItemInput::Image },
            generator: GeneratorConfig { widths: vec![32, 64, 128, 256], res_blocks: 3 },
            discriminator: DiscriminatorConfig { widths: vec![32, 64, 128, 256] },
            loss: LossConfig { lambda1: 100.0, lambda2: 10.0, lambda1_generated: 10.0, lambda2_generated: 10.0, use_ccm: true },
            train: TrainConfig {
                batch_size: 4,
                iterations: 200_000,
                lr: 1e-4,
                beta1: 0.0,
                beta2: 0.99,
                crop_margin: 0.05,
                checkpoint_every: 10_000,
            },
            ccm: CcmConfig {
                embed_dim: 512,
                widths: vec![32, 64, 128, 256],
                lr: 0.2,
                momentum: 0.9,
                epochs: 20,
                batch_size: 16,
                clip_norm: 0.0,
            },
            perceptual: PerceptualConfig { widths: vec![16, 32, 64, 128] },
            maskgen: MaskgenConfig {
                widths: vec![16, 32, 64],
                res_blocks: 3,
                disc_widths: vec![32, 64, 128],
                steps: 10_000,
                batch_size: 4,
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
                lambda_l1: 100.0,
            },
            data: DataConfig { n_outfits: 2000, background_tol: 0.05 },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config keys do not overlap");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    /// Dotted-key view of every field.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    pub fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        serde_json::from_value(unflatten(flat)).map_err(|e| Error::Config(e.to_string()))
    }

    /// Overrides fields from a flat object; unknown keys are an error.
    pub fn merge(&self, overrides: &Map<String, Value>) -> Result<Self> {
        let mut flat = self.to_flat();
        for (k, v) in overrides {
            match flat.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        let cfg = Self::from_flat(&flat)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key from its textual form (JSON, or a bare string).
    pub fn set(&self, key: &str, raw: &str) -> Result<Self> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut m = Map::new();
        m.insert(key.to_string(), value);
        self.merge(&m)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let map = v.as_object().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        Self::default().merge(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("config serializes")
    }

    /// Turns on determinism mode when the environment asks for it.
    pub fn with_env(mut self) -> Self {
        if std::env::var(DETERMINISM_ENV).is_ok_and(|v| v == "1") {
            self.deterministic = true;
        }
        self
    }

    pub fn n_items(&self) -> usize {
        self.order.len()
    }

    pub fn given_category(&self) -> Category {
        self.order[self.given_index]
    }

    /// Categories that get a generator, in configured order.
    pub fn target_categories(&self) -> Vec<Category> {
        self.order.iter().enumerate().filter(|&(i, _)| i != self.given_index).map(|(_, &c)| c).collect()
    }

    /// `(λ₁, λ₂)` for the configured mask strategy.
    pub fn lambdas(&self) -> (f64, f64) {
        match self.mask_strategy {
            MaskStrategy::User => (self.loss.lambda1, self.loss.lambda2),
            _ => (self.loss.lambda1_generated, self.loss.lambda2_generated),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return bad(format!("image_size must be a power of two >= 32, got {}", self.image_size));
        }
        if self.order.len() < 2 {
            return bad("order needs at least 2 categories".into());
        }
        for (i, c) in self.order.iter().enumerate() {
            if self.order[..i].contains(c) {
                return bad(format!("category {c} repeated in order"));
            }
        }
        if self.given_index >= self.order.len() {
            return bad(format!("given_index {} out of range", self.given_index));
        }
        let (l1, l2) = (self.loss.lambda1.min(self.loss.lambda1_generated), self.loss.lambda2.min(self.loss.lambda2_generated));
        if !(l1 >= 0.0 && l2 >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.train.batch_size == 0 || self.train.iterations == 0 {
            return bad("train.batch_size and train.iterations must be positive".into());
        }
        if !(0.0..0.5).contains(&self.data.background_tol) {
            return bad("data.background_tol must lie in [0, 0.5)".into());
        }
        if !(0.0..=0.08).contains(&self.train.crop_margin) {
            return bad("train.crop_margin must lie in [0, 0.08]".into());
        }
        if self.generator.widths.len() != 4 || self.ccm.widths.len() != 4 || self.perceptual.widths.is_empty() {
            return bad("generator.widths and ccm.widths need 4 entries, perceptual.widths at least 1".into());
        }
        if self.discriminator.widths.len() != 4 {
            return bad("discriminator.widths needs 4 entries".into());
        }
        if self.maskgen.widths.is_empty() || self.maskgen.disc_widths.is_empty() {
            return bad("maskgen widths must be nonempty".into());
        }
        let all_widths = [&self.generator.widths, &self.discriminator.widths, &self.ccm.widths, &self.perceptual.widths, &self.maskgen.widths, &self.maskgen.disc_widths];
        if all_widths.iter().any(|w| w.contains(&0)) || self.ccm.embed_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.ccm.batch_size == 0 || self.maskgen.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        Ok(())
    }

    /// Fields that determine parameter shapes and data layout.
    fn model_subset(&self) -> BTreeMap<String, Value> {
        const MODEL_KEYS: [&str; 8] = ["image_size", "order", "given_index", "sam.", "generator.", "discriminator.", "perceptual.", "maskgen."];
        self.to_flat()
            .into_iter()
            .filter(|(k, _)| {
                MODEL_KEYS.iter().any(|p| if p.ends_with('.') { k.starts_with(p) } else { k == p })
                    || k == "ccm.embed_dim"
                    || k == "ccm.widths"
            })
            .filter(|(k, _)| !matches!(k.as_str(), "maskgen.steps" | "maskgen.batch_size" | "maskgen.lr" | "maskgen.beta1" | "maskgen.beta2" | "maskgen.lambda_l1"))
            .collect()
    }

    /// SHA-256 over the model-defining fields; stamped into every artifact.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.model_subset()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lambdas(), (100.0, 10.0));
        assert_eq!(c.target_categories(), vec![Category::Bag, Category::Lower, Category::Shoes]);
    }

    #[test]
    fn flat_round_trip_and_overrides() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_flat(&c.to_flat()).unwrap(), c);
        let c2 = RunConfig::from_json_str(r#"{"loss.lambda1": 10, "sam.channels": 8, "order": ["bag", "upper", "lower", "shoes"]}"#).unwrap();
        assert_eq!(c2.loss.lambda1, 10.0);
        assert_eq!(c2.sam.channels, 8);
        assert_eq!(c2.given_category(), Category::Bag);
        assert!(matches!(RunConfig::from_json_str(r#"{"loss.lambda9": 1}"#), Err(Error::Config(_))));
        assert!(RunConfig::default().set("train.batch_size", "0").is_err());
        assert_eq!(RunConfig::default().set("mask_strategy", "random").unwrap().lambdas(), (10.0, 10.0));
    }

    #[test]
    fn hash_tracks_model_fields_only() {
        let c = RunConfig::default();
        assert_eq!(c.hash(), c.set("seed", "9").unwrap().hash());
        assert_eq!(c.hash(), c.set("train.iterations", "5").unwrap().hash());
        assert_ne!(c.hash(), c.set("image_size", "128").unwrap().hash());
        assert_ne!(c.hash(), c.set("sam.channels", "16").unwrap().hash());
    }
}
