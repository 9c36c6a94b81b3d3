//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! output = "runs/desk"
//! eyes = ["left"]
//!
//! [dataset]
//! kind = "periocular"
//! synthetic = { n_subjects = 20 }     # or: path = "/data/polyu"
//!
//! [translator]
//! directions = ["vis2nir"]
//! epochs = 20
//! ngf = 8
//! ndf = 8
//!
//! [identifier]
//! epochs = 15
//! width = 8
//!
//! [verifier]
//! variants = ["triplet"]
//! epochs = 20
//!
//! [baselines]
//! systems = ["pixel_eucl", "lbp_chi2", "hog_eucl", "sift"]
//! protocols = ["cnn:gray-nir"]
//! ```
//!
//! Every section except `dataset` has defaults. Stage seeds are derived from
//! the top-level `seed`; the per-section networks never carry their own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ocular_core::baselines::{BaselineSystem, DescriptorConfig, Metric, SystemKind};
use ocular_core::dataset::{DatasetKind, Eye, Jitter, SyntheticSpec, MAX_SAMPLES_PER_EYE};
use ocular_nets::identifier::IdentifierConfig;
use ocular_nets::translator::{Direction, TranslatorConfig};
use ocular_nets::verifier::{HeadConfig, Pairing, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::protocol::ProtocolSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run directory; relative paths resolve against the config file.
    pub output: PathBuf,
    #[serde(default = "both_eyes")]
    pub eyes: Vec<Eye>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub translator: TranslatorSection,
    #[serde(default)]
    pub identifier: IdentifierSection,
    #[serde(default)]
    pub verifier: VerifierSection,
    #[serde(default)]
    pub baselines: BaselineSection,
}

fn both_eyes() -> Vec<Eye> {
    Eye::BOTH.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Root of a dataset in the documented layout.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_subjects: u32,
    #[serde(default = "max_samples")]
    pub samples_per_eye: u8,
    #[serde(default)]
    pub jitter: Jitter,
}

fn max_samples() -> u8 {
    MAX_SAMPLES_PER_EYE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorSection {
    pub directions: Vec<Direction>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: f64,
    pub learn_rate: f64,
    pub adam_beta1: f64,
    pub ngf: i64,
    pub ndf: i64,
    /// Existing checkpoints to use instead of training, keyed `<direction>-<eye>`.
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl Default for TranslatorSection {
    fn default() -> Self {
        let t = TranslatorConfig::new(Direction::Vis2Nir, 200);
        TranslatorSection {
            directions: vec![Direction::Vis2Nir],
            epochs: t.epochs,
            batch_size: t.batch_size,
            lambda_l1: t.lambda_l1,
            learn_rate: t.learn_rate,
            adam_beta1: t.adam_beta1,
            ngf: t.ngf,
            ndf: t.ndf,
            checkpoints: BTreeMap::new(),
        }
    }
}

impl TranslatorSection {
    pub fn network(&self, direction: Direction, seed: u64) -> TranslatorConfig {
        TranslatorConfig {
            direction,
            lambda_l1: self.lambda_l1,
            learn_rate: self.learn_rate,
            adam_beta1: self.adam_beta1,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ngf: self.ngf,
            ndf: self.ndf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifierSection {
    pub epochs: usize,
    pub width: i64,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub weight_decay: f64,
    /// Natural-image weights for initialization.
    pub pretrained: Option<PathBuf>,
    /// Also report identifiers trained on translated images in the accuracy table.
    pub train_on_fake: bool,
}

impl Default for IdentifierSection {
    fn default() -> Self {
        let c = IdentifierConfig::new(30);
        IdentifierSection {
            epochs: c.epochs,
            width: c.width,
            batch_size: c.batch_size,
            learn_rate: c.learn_rate,
            weight_decay: c.weight_decay,
            pretrained: None,
            train_on_fake: false,
        }
    }
}

impl IdentifierSection {
    pub fn network(&self, seed: u64) -> IdentifierConfig {
        IdentifierConfig {
            width: self.width,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learn_rate: self.learn_rate,
            weight_decay: self.weight_decay,
            seed,
            pretrained: self.pretrained.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSection {
    pub variants: Vec<Variant>,
    /// Softmax-head pairings to train.
    pub pairings: Vec<Pairing>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub alpha: f64,
}

impl Default for VerifierSection {
    fn default() -> Self {
        let h = HeadConfig::new(30);
        VerifierSection {
            variants: vec![Variant::Triplet, Variant::Softmax],
            pairings: vec![Pairing::RealFake],
            epochs: h.epochs,
            batch_size: h.batch_size,
            learn_rate: h.learn_rate,
            alpha: h.alpha,
        }
    }
}

impl VerifierSection {
    pub fn head(&self, seed: u64) -> HeadConfig {
        HeadConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learn_rate: self.learn_rate,
            alpha: self.alpha,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// `pixel_eucl`, `lbp_chi2`, `lbp_eucl`, `hog_eucl`, `sift`, ...
    pub systems: Vec<String>,
    pub protocols: Vec<String>,
    /// Groups of systems fused per protocol.
    pub fusion: Vec<Vec<String>>,
    pub descriptors: DescriptorConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            systems: ["lbp_eucl", "lbp_chi2", "hog_eucl", "sift"].map(String::from).to_vec(),
            protocols: ["baseline:nir-nir", "baseline:gray-nir", "baseline:fnir-nir"]
                .map(String::from)
                .to_vec(),
            fusion: vec![
                ["lbp_eucl", "hog_eucl", "sift"].map(String::from).to_vec(),
                ["lbp_chi2", "hog_eucl", "sift"].map(String::from).to_vec(),
            ],
            descriptors: DescriptorConfig::default(),
        }
    }
}

/// `lbp_chi2`, `hog` (euclidean), `sift`, `pixel_eucl`, ...
pub fn parse_system(s: &str) -> Result<BaselineSystem> {
    let (kind, metric) = s.split_once('_').unwrap_or((s, "eucl"));
    let kind: SystemKind = kind.parse()?;
    let metric: Metric = metric.parse()?;
    Ok(BaselineSystem::new(kind, metric))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        if let Some(p) = self.dataset.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.identifier.pretrained.as_mut() {
            fix(p);
        }
        for p in self.translator.checkpoints.values_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => bail!("dataset: give either `path` or `synthetic`, not both"),
            (None, None) => bail!("dataset: one of `path` or `synthetic` is required"),
            _ => {}
        }
        if self.eyes.is_empty() {
            bail!("eyes: at least one eye is required");
        }
        if self.translator.directions.is_empty() {
            bail!("translator.directions: at least one direction is required");
        }
        for d in &self.translator.directions {
            self.translator.network(*d, 0).validate()?;
        }
        for key in self.translator.checkpoints.keys() {
            let known = self
                .translator
                .directions
                .iter()
                .flat_map(|d| Eye::BOTH.map(|e| format!("{d}-{e}")))
                .any(|k| &k == key);
            if !known {
                bail!("translator.checkpoints: {key:?} is not <direction>-<eye> of a configured direction");
            }
        }
        if self.verifier.variants.contains(&Variant::Softmax) && self.verifier.pairings.is_empty() {
            bail!("verifier.pairings: softmax heads need at least one pairing");
        }
        for s in &self.baselines.systems {
            parse_system(s).with_context(|| format!("baselines.systems: {s:?}"))?;
        }
        for group in &self.baselines.fusion {
            if group.len() < 2 {
                bail!("baselines.fusion: groups need at least two systems");
            }
            for s in group {
                if !self.baselines.systems.contains(s) {
                    bail!("baselines.fusion: {s:?} is not listed in baselines.systems");
                }
            }
        }
        for p in &self.baselines.protocols {
            let spec: ProtocolSpec = p.parse().with_context(|| format!("baselines.protocols: {p:?}"))?;
            for side in [spec.a, spec.b] {
                if side.fake && !self.translator.directions.iter().any(|d| d.target() == side.spectrum) {
                    bail!("baselines.protocols: {p:?} needs fake {} images but no direction produces them", side.spectrum);
                }
            }
        }
        Ok(())
    }

    /// Referenced files that must exist before any stage runs.
    pub fn check_prerequisites(&self) -> Result<()> {
        for (key, path) in &self.translator.checkpoints {
            if !path.is_file() {
                bail!(
                    "missing prerequisite for stage translator-{key}: checkpoint {} does not exist",
                    path.display()
                );
            }
        }
        if let Some(p) = &self.identifier.pretrained {
            if !p.is_file() {
                bail!("missing prerequisite for identifier stages: pretrained weights {} do not exist", p.display());
            }
        }
        if let Some(p) = &self.dataset.path {
            if !p.is_dir() {
                bail!("missing prerequisite for stage prepare: dataset root {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        self.dataset.synthetic.as_ref().map(|s| SyntheticSpec {
            n_subjects: s.n_subjects,
            samples_per_eye: s.samples_per_eye,
            seed: self.seed,
            kind: self.dataset.kind,
            jitter: s.jitter,
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Seed of one stochastic stage, derived from the top-level seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        let d = h.finalize();
        // Kept below 2^63 so it survives the signed torch seed.
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) >> 1
    }
}
