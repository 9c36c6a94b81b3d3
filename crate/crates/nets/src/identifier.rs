//! Closed-set identification backbone (ResNet-50 layout) and the
//! real-vs-translated accuracy-drop table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ocular_core::dataset::{Eye, Spectrum};
use ocular_core::Raster;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, ModuleT, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::convert::stack_u8;
use crate::error::{NetError, Result};

/// Bottleneck blocks per stage.
pub const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const EXPANSION: i64 = 4;
pub const INPUT_SIDE: i64 = 224;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Pooled embedding length for base width `width` (2048 at 64).
pub fn embedding_dim(width: i64) -> i64 {
    8 * width * EXPANSION
}

fn conv(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        c_in,
        c_out,
        k,
        nn::ConvConfig {
            stride,
            padding,
            bias: false,
            ..Default::default()
        },
    )
}

fn bn(p: nn::Path, c: i64) -> nn::BatchNorm {
    nn::batch_norm2d(p, c, Default::default())
}

#[derive(Debug)]
struct Bottleneck {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    conv2: nn::Conv2D,
    bn2: nn::BatchNorm,
    conv3: nn::Conv2D,
    bn3: nn::BatchNorm,
    downsample: Option<(nn::Conv2D, nn::BatchNorm)>,
}

impl Bottleneck {
    fn new(p: nn::Path, c_in: i64, planes: i64, stride: i64) -> Self {
        let out = planes * EXPANSION;
        let downsample = (stride != 1 || c_in != out)
            .then(|| (conv(&p / "downsample" / "0", c_in, out, 1, stride, 0), bn(&p / "downsample" / "1", out)));
        Bottleneck {
            conv1: conv(&p / "conv1", c_in, planes, 1, 1, 0),
            bn1: bn(&p / "bn1", planes),
            conv2: conv(&p / "conv2", planes, planes, 3, stride, 1),
            bn2: bn(&p / "bn2", planes),
            conv3: conv(&p / "conv3", planes, out, 1, 1, 0),
            bn3: bn(&p / "bn3", out),
            downsample,
        }
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        let h = x.apply(&self.conv1).apply_t(&self.bn1, train).relu();
        let h = h.apply(&self.conv2).apply_t(&self.bn2, train).relu();
        let h = h.apply(&self.conv3).apply_t(&self.bn3, train);
        let skip = match &self.downsample {
            Some((c, b)) => x.apply(c).apply_t(b, train),
            None => x.shallow_clone(),
        };
        (h + skip).relu()
    }
}

/// Parameter names follow the common `conv1`, `layerN.i.convK`, `fc` layout,
/// so natural-image weights exported under those names load directly.
#[derive(Debug)]
pub struct ResNet50 {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    layers: Vec<Vec<Bottleneck>>,
    fc: nn::Linear,
}

impl ResNet50 {
    pub fn new(p: &nn::Path, width: i64, classes: i64) -> Self {
        let mut c_in = width;
        let mut layers = Vec::new();
        for (i, &n) in RESNET50_BLOCKS.iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let lp = p / format!("layer{}", i + 1);
            let blocks = (0..n)
                .map(|b| {
                    let blk = Bottleneck::new(&lp / b.to_string(), c_in, planes, if b == 0 { stride } else { 1 });
                    c_in = planes * EXPANSION;
                    blk
                })
                .collect();
            layers.push(blocks);
        }
        ResNet50 {
            conv1: conv(p / "conv1", 3, width, 7, 2, 3),
            bn1: bn(p / "bn1", width),
            layers,
            fc: nn::linear(p / "fc", c_in, classes, Default::default()),
        }
    }

    /// Global-average-pooled activation before the classifier.
    pub fn embed(&self, x: &Tensor, train: bool) -> Tensor {
        let mut h = x
            .apply(&self.conv1)
            .apply_t(&self.bn1, train)
            .relu()
            .max_pool2d([3, 3], [2, 2], [1, 1], [1, 1], false);
        for layer in &self.layers {
            for b in layer {
                h = b.forward_t(&h, train);
            }
        }
        h.adaptive_avg_pool2d([1, 1]).flatten(1, -1)
    }
}

impl ModuleT for ResNet50 {
    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        self.embed(x, train).apply(&self.fc)
    }
}

/// Which images a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modality {
    pub spectrum: Spectrum,
    /// Translated rather than captured.
    pub fake: bool,
    pub eye: Eye,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", if self.fake { "fake" } else { "real" }, self.spectrum, self.eye)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierConfig {
    /// Base width; 64 is the standard ResNet-50.
    #[serde(default = "default_width")]
    pub width: i64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learn_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Natural-image weights (`.ot`/`.safetensors`) loaded where names and shapes match.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
}

fn default_width() -> i64 {
    64
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-3
}

impl IdentifierConfig {
    pub fn new(epochs: usize) -> Self {
        IdentifierConfig {
            width: default_width(),
            epochs,
            batch_size: default_batch(),
            learn_rate: default_lr(),
            weight_decay: 0.0,
            seed: 0,
            pretrained: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 1 || self.epochs == 0 || self.batch_size == 0 || !(self.learn_rate > 0.0) {
            return Err(NetError::Config(format!("invalid identifier config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdEpoch {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn percent(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }
}

#[derive(Serialize, Deserialize)]
struct IdMeta {
    config: IdentifierConfig,
    modality: Modality,
    labels: Vec<u32>,
    train_accuracy: Option<Accuracy>,
}

pub struct Identifier {
    pub config: IdentifierConfig,
    pub modality: Modality,
    /// Subject id of each class index.
    pub labels: Vec<u32>,
    pub history: Vec<IdEpoch>,
    /// Eval-mode accuracy on the training images after the last epoch.
    pub train_accuracy: Option<Accuracy>,
    vs: nn::VarStore,
    net: ResNet50,
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identifier")
            .field("modality", &self.modality)
            .field("classes", &self.labels.len())
            .field("width", &self.config.width)
            .finish()
    }
}

/// Center crop of a 256 canvas to 224, gray replicated to three channels,
/// per-channel natural-image normalization.
fn prepare(u8_batch: &Tensor) -> Result<Tensor> {
    let size = u8_batch.size();
    let (c, h, w) = (size[1], size[2], size[3]);
    if h < INPUT_SIDE || w < INPUT_SIDE || !(c == 1 || c == 3) {
        return Err(NetError::Shape(format!("identifier input {size:?}")));
    }
    let (oy, ox) = ((h - INPUT_SIDE) / 2, (w - INPUT_SIDE) / 2);
    let x = u8_batch
        .narrow(2, oy, INPUT_SIDE)
        .narrow(3, ox, INPUT_SIDE)
        .to_kind(Kind::Float)
        / 255.0;
    let x = if c == 1 { x.expand([-1, 3, -1, -1], false) } else { x };
    let mean = Tensor::from_slice(&IMAGENET_MEAN).to_kind(Kind::Float).view([1, 3, 1, 1]);
    let std = Tensor::from_slice(&IMAGENET_STD).to_kind(Kind::Float).view([1, 3, 1, 1]);
    Ok((x - mean) / std)
}

const EVAL_CHUNK: usize = 16;

impl Identifier {
    /// Untrained model with `labels.len()` classes.
    pub fn new(config: IdentifierConfig, modality: Modality, labels: Vec<u32>) -> Result<Self> {
        config.validate()?;
        if labels.len() < 2 {
            return Err(NetError::SingleClass(labels.len()));
        }
        tch::manual_seed(config.seed as i64);
        let mut vs = nn::VarStore::new(Device::Cpu);
        let net = ResNet50::new(&vs.root(), config.width, labels.len() as i64);
        if let Some(p) = &config.pretrained {
            let missing = vs.load_partial(p)?;
            log::info!("pretrained weights from {}: {} tensors not found", p.display(), missing.len());
        }
        Ok(Identifier {
            config,
            modality,
            labels,
            history: Vec::new(),
            train_accuracy: None,
            vs,
            net,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        embedding_dim(self.config.width) as usize
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    /// Stops gradient tracking for every parameter.
    pub fn freeze(&mut self) {
        self.vs.freeze();
    }

    pub fn is_frozen(&self) -> bool {
        self.vs.trainable_variables().iter().all(|t| !t.requires_grad())
    }

    /// Raw bytes of every parameter and buffer, keyed by name.
    pub fn parameter_bytes(&self) -> BTreeMap<String, Vec<u8>> {
        self.vs
            .variables()
            .into_iter()
            .map(|(k, t)| {
                let t = t.detach().contiguous().view([-1]);
                let mut buf = vec![0u8; t.numel() * t.kind().elt_size_in_bytes()];
                t.copy_data_u8(&mut buf, t.numel());
                (k, buf)
            })
            .collect()
    }

    fn class_of(&self) -> BTreeMap<u32, i64> {
        self.labels.iter().enumerate().map(|(i, &s)| (s, i as i64)).collect()
    }

    fn logits(&self, imgs: &[&Raster]) -> Result<Tensor> {
        let mut out = Vec::new();
        for chunk in imgs.chunks(EVAL_CHUNK) {
            let x = prepare(&stack_u8(chunk)?)?;
            out.push(tch::no_grad(|| self.net.forward_t(&x, false)));
        }
        Ok(Tensor::cat(&out, 0))
    }

    /// `[N, D]` pooled embeddings, eval mode.
    pub fn embed_batch(&self, imgs: &[&Raster]) -> Result<Tensor> {
        if imgs.is_empty() {
            return Ok(Tensor::zeros([0, self.embedding_dim() as i64], (Kind::Float, Device::Cpu)));
        }
        let mut out = Vec::new();
        for chunk in imgs.chunks(EVAL_CHUNK) {
            let x = prepare(&stack_u8(chunk)?)?;
            out.push(tch::no_grad(|| self.net.embed(&x, false)));
        }
        Ok(Tensor::cat(&out, 0))
    }

    pub fn extract_embedding(&self, img: &Raster) -> Result<Vec<f32>> {
        Ok(Vec::<f32>::try_from(self.embed_batch(&[img])?.view([-1]))?)
    }

    /// Predicted subject id per image.
    pub fn predict(&self, imgs: &[&Raster]) -> Result<Vec<u32>> {
        if imgs.is_empty() {
            return Ok(Vec::new());
        }
        let idx = Vec::<i64>::try_from(self.logits(imgs)?.argmax(1, false))?;
        Ok(idx.into_iter().map(|i| self.labels[i as usize]).collect())
    }

    /// Top-1 accuracy; every label must belong to the model's label space.
    pub fn evaluate(&self, imgs: &[&Raster], labels: &[u32]) -> Result<Accuracy> {
        if imgs.len() != labels.len() {
            return Err(NetError::LabelCount {
                images: imgs.len(),
                labels: labels.len(),
            });
        }
        if imgs.is_empty() {
            return Err(NetError::EmptyDataset("no test images".into()));
        }
        let classes = self.class_of();
        if let Some(&bad) = labels.iter().find(|l| !classes.contains_key(l)) {
            return Err(NetError::UnknownLabel(bad));
        }
        let pred = self.predict(imgs)?;
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(Accuracy {
            correct,
            total: labels.len(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ArchiveWriter::new();
        w.json(
            "config.json",
            &IdMeta {
                config: self.config.clone(),
                modality: self.modality,
                labels: self.labels.clone(),
                train_accuracy: self.train_accuracy,
            },
        )?;
        w.json("history.json", &self.history)?;
        w.vars("model.ot", &self.vs)?;
        w.write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = ArchiveReader::open(path.as_ref())?;
        let meta: IdMeta = r.json("config.json")?;
        let config = IdentifierConfig {
            pretrained: None,
            ..meta.config.clone()
        };
        let mut id = Identifier::new(config, meta.modality, meta.labels)?;
        id.config = meta.config;
        id.train_accuracy = meta.train_accuracy;
        id.history = r.json("history.json")?;
        r.load_vars("model.ot", &mut id.vs)?;
        Ok(id)
    }
}

/// Softmax cross-entropy over subjects with Adam; classes are the sorted
/// distinct labels.
pub fn train_identifier(
    imgs: &[&Raster],
    labels: &[u32],
    modality: Modality,
    config: &IdentifierConfig,
) -> Result<Identifier> {
    if imgs.len() != labels.len() {
        return Err(NetError::LabelCount {
            images: imgs.len(),
            labels: labels.len(),
        });
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut id = Identifier::new(config.clone(), modality, classes)?;
    let class_of = id.class_of();
    let data = stack_u8(imgs)?;
    let targets = Tensor::from_slice(&labels.iter().map(|l| class_of[l]).collect::<Vec<i64>>());
    let adam = nn::Adam {
        wd: config.weight_decay,
        ..Default::default()
    };
    let mut opt = adam.build(&id.vs, config.learn_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<i64> = (0..imgs.len() as i64).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut n) = (0.0, 0usize);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            // A single-sample batch cannot be batch-normalized in training mode.
            if idx.len() < 2 {
                continue;
            }
            let idx = Tensor::from_slice(idx);
            let x = prepare(&data.index_select(0, &idx))?;
            let y = targets.index_select(0, &idx);
            let loss = id.net.forward_t(&x, true).cross_entropy_for_logits(&y);
            opt.backward_step(&loss);
            let v = loss.double_value(&[]);
            if !v.is_finite() {
                return Err(NetError::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!("cross-entropy {v}"),
                });
            }
            total += v * idx.size()[0] as f64;
            n += idx.size()[0] as usize;
        }
        let loss = total / n.max(1) as f64;
        log::info!("identifier {modality} epoch {epoch}/{}: loss {loss:.4}", config.epochs);
        id.history.push(IdEpoch { epoch, loss });
    }
    id.train_accuracy = Some(id.evaluate(imgs, labels)?);
    Ok(id)
}

/// One line of the real-vs-translated identification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyDropRow {
    pub train_modality: String,
    pub test_real_acc: f64,
    pub test_fake_acc: f64,
    /// `test_fake_acc - test_real_acc`, signed.
    pub difference: f64,
    pub mean: f64,
}

pub fn accuracy_drop_report(rows: &[(String, f64, f64)]) -> Result<Vec<AccuracyDropRow>> {
    rows.iter()
        .map(|(m, real, fake)| {
            for v in [*real, *fake] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(NetError::Percent(v));
                }
            }
            Ok(AccuracyDropRow {
                train_modality: m.clone(),
                test_real_acc: *real,
                test_fake_acc: *fake,
                difference: fake - real,
                mean: (real + fake) / 2.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag() -> Modality {
        Modality {
            spectrum: Spectrum::Nir,
            fake: false,
            eye: Eye::Left,
        }
    }

    #[test]
    fn drop_rows() {
        let r = accuracy_drop_report(&[("real NIR left".into(), 99.7, 94.1), ("x".into(), 80.0, 80.0)]).unwrap();
        assert!((r[0].difference + 5.6).abs() < 1e-9);
        assert!((r[0].mean - 96.9).abs() < 1e-9);
        assert_eq!((r[1].difference, r[1].mean), (0.0, 80.0));
        let r = accuracy_drop_report(&[("fake VIS left".into(), 98.6, 97.3)]).unwrap();
        assert!((r[0].difference + 1.3).abs() < 1e-9);
        assert!(matches!(accuracy_drop_report(&[("x".into(), 101.0, 3.0)]), Err(NetError::Percent(_))));
    }

    #[test]
    fn embedding_width() {
        assert_eq!(embedding_dim(64), 2048);
        let id = Identifier::new(
            IdentifierConfig {
                width: 2,
                ..IdentifierConfig::new(1)
            },
            tag(),
            vec![1, 2],
        )
        .unwrap();
        let e = id.extract_embedding(&Raster::filled(256, 256, 1, 9)).unwrap();
        assert_eq!(e.len(), id.embedding_dim());
        assert_eq!(e, id.extract_embedding(&Raster::filled(256, 256, 1, 9)).unwrap());
    }

    #[test]
    fn standard_layout_names() {
        let vs = nn::VarStore::new(Device::Cpu);
        let _net = ResNet50::new(&vs.root(), 2, 5);
        let names = vs.variables();
        for n in ["conv1.weight", "layer1.0.downsample.0.weight", "layer4.2.bn3.running_var", "fc.bias"] {
            assert!(names.contains_key(n), "{n}");
        }
        let convs = names.keys().filter(|k| k.ends_with(".weight") && k.contains("conv")).count();
        let downs = names.keys().filter(|k| k.ends_with("downsample.0.weight")).count();
        // 1 stem + 16 blocks x 3 + 4 projections + fc = 50 weighted layers.
        assert_eq!(convs + downs + 1, 1 + 16 * 3 + 4 + 1);
    }

    #[test]
    fn rejects_bad_labels() {
        let cfg = IdentifierConfig {
            width: 2,
            ..IdentifierConfig::new(1)
        };
        let img = Raster::zeros(256, 256, 1);
        assert!(matches!(
            train_identifier(&[&img, &img], &[4, 4], tag(), &cfg),
            Err(NetError::SingleClass(1))
        ));
        assert!(matches!(
            train_identifier(&[&img], &[4, 5], tag(), &cfg),
            Err(NetError::LabelCount { .. })
        ));
        let id = Identifier::new(cfg, tag(), vec![1, 2]).unwrap();
        assert!(matches!(id.evaluate(&[&img], &[3]), Err(NetError::UnknownLabel(3))));
    }
}
