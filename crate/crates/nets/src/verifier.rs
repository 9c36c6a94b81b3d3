//! Verification heads over frozen identifier embeddings: a triplet-trained
//! projection scored by Euclidean distance, and a two-branch softmax head.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ocular_core::dataset::SampleKey;
use ocular_core::metrics::Label;
use ocular_core::Raster;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{NetError, Result};
use crate::identifier::{Identifier, Modality};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const HIDDEN: i64 = 256;
/// Output length of the triplet projection.
pub const TRIPLET_DIM: i64 = 128;
/// Keeps the distance gradient finite when two embeddings coincide.
const DIST_EPS: f64 = 1e-12;

fn check_distance(d: f64) -> Result<()> {
    if d >= 0.0 {
        Ok(())
    } else {
        Err(NetError::NegativeDistance(d))
    }
}

/// `max(0, d_ap - (d_an + d_pn) / 2 + alpha)`.
pub fn improved_triplet_loss(d_ap: f64, d_an: f64, d_pn: f64, alpha: f64) -> Result<f64> {
    for d in [d_ap, d_an, d_pn] {
        check_distance(d)?;
    }
    if !(alpha > 0.0) {
        return Err(NetError::Config(format!("margin must be positive, got {alpha}")));
    }
    Ok((d_ap - (d_an + d_pn) / 2.0 + alpha).max(0.0))
}

/// Partial derivatives with respect to `(d_ap, d_an, d_pn)`; zero on the
/// inactive side of the hinge, including the kink itself.
pub fn improved_triplet_grad(d_ap: f64, d_an: f64, d_pn: f64, alpha: f64) -> Result<[f64; 3]> {
    if improved_triplet_loss(d_ap, d_an, d_pn, alpha)? > 0.0 {
        Ok([1.0, -0.5, -0.5])
    } else {
        Ok([0.0; 3])
    }
}

fn pair_distance(a: &Tensor, b: &Tensor) -> Tensor {
    ((a - b).square().sum_dim_intlist(-1, false, a.kind()) + DIST_EPS).sqrt()
}

/// Batch mean of the improved triplet loss on embedding rows.
pub fn triplet_loss_tensor(a: &Tensor, p: &Tensor, n: &Tensor, alpha: f64) -> Tensor {
    let hinge = pair_distance(a, p) - (pair_distance(a, n) + pair_distance(p, n)) * 0.5 + alpha;
    hinge.relu().mean(a.kind())
}

/// A sample reference; `fake` marks a translated image, whose key carries the
/// spectrum it was rendered into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripletSample {
    pub key: SampleKey,
    pub fake: bool,
}

impl fmt::Display for TripletSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.fake { "fake:" } else { "" }, self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: TripletSample,
    pub positive: TripletSample,
    pub negative: TripletSample,
}

impl Triplet {
    pub fn new(anchor: TripletSample, positive: TripletSample, negative: TripletSample) -> Result<Self> {
        let bad = |why: &str| Err(NetError::Triplet(format!("{anchor} / {positive} / {negative}: {why}")));
        if anchor.fake {
            return bad("anchor must be a real image");
        }
        if !positive.fake || !negative.fake {
            return bad("positive and negative must be translated images");
        }
        if positive.key.spectrum != negative.key.spectrum || positive.key.eye != negative.key.eye {
            return bad("positive and negative must share a modality");
        }
        if anchor.key.subject != positive.key.subject {
            return bad("anchor and positive subjects differ");
        }
        if anchor.key.subject == negative.key.subject {
            return bad("negative has the anchor's subject");
        }
        Ok(Triplet {
            anchor,
            positive,
            negative,
        })
    }
}

/// Every anchor paired with every same-subject positive, each given one
/// uniformly drawn negative.
pub fn sample_triplets(samples: &[TripletSample], rng: &mut ChaCha8Rng) -> Result<Vec<Triplet>> {
    let fakes: Vec<&TripletSample> = samples.iter().filter(|s| s.fake).collect();
    let mut out = Vec::new();
    for a in samples.iter().filter(|s| !s.fake) {
        for p in fakes.iter().filter(|p| p.key.subject == a.key.subject) {
            let negs: Vec<&&TripletSample> = fakes
                .iter()
                .filter(|n| {
                    n.key.subject != a.key.subject && n.key.spectrum == p.key.spectrum && n.key.eye == p.key.eye
                })
                .collect();
            if let Some(n) = negs.choose(rng) {
                out.push(Triplet::new(*a, **p, ***n)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Softmax,
    Triplet,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Softmax => "softmax",
            Variant::Triplet => "triplet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Variant::Softmax),
            "triplet" => Ok(Variant::Triplet),
            _ => Err(NetError::Config(format!("unknown verifier variant {s:?}"))),
        }
    }
}

/// What the two sides of a softmax-head pair are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Captured images in both spectra.
    RealReal,
    /// Captured image against a translated one.
    RealFake,
}

impl Pairing {
    pub fn as_str(self) -> &'static str {
        match self {
            Pairing::RealReal => "real-real",
            Pairing::RealFake => "real-fake",
        }
    }
}

impl FromStr for Pairing {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real-real" => Ok(Pairing::RealReal),
            "real-fake" => Ok(Pairing::RealFake),
            _ => Err(NetError::Config(format!("unknown pairing {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learn_rate: f64,
    /// Triplet margin.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl HeadConfig {
    pub fn new(epochs: usize) -> Self {
        HeadConfig {
            epochs,
            batch_size: default_batch(),
            learn_rate: default_lr(),
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learn_rate > 0.0) || !(self.alpha > 0.0) {
            return Err(NetError::Config(format!("invalid head config {self:?}")));
        }
        Ok(())
    }
}

fn mlp(p: &nn::Path, d_in: i64, d_out: i64) -> nn::Sequential {
    nn::seq()
        .add(nn::linear(p / "fc1", d_in, HIDDEN, Default::default()))
        .add_fn(|x| x.relu())
        .add(nn::linear(p / "fc2", HIDDEN, d_out, Default::default()))
}

fn require_frozen(b: &Identifier) -> Result<()> {
    if b.is_frozen() {
        Ok(())
    } else {
        Err(NetError::Config(format!("backbone {} must be frozen first", b.modality)))
    }
}

fn check_loss(v: f64, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NetError::NonFiniteLoss {
            epoch,
            batch,
            detail: format!("{what} {v}"),
        })
    }
}

/// Frozen-backbone embeddings for a set of samples, one row each.
#[derive(Debug)]
pub struct EmbeddingTable {
    rows: BTreeMap<TripletSample, i64>,
    pub embeddings: Tensor,
}

impl EmbeddingTable {
    pub fn build(backbone: &Identifier, samples: &[(TripletSample, &Raster)]) -> Result<Self> {
        let imgs: Vec<&Raster> = samples.iter().map(|(_, r)| *r).collect();
        let embeddings = backbone.embed_batch(&imgs)?;
        let keys: Vec<TripletSample> = samples.iter().map(|(s, _)| *s).collect();
        Self::from_rows(&keys, embeddings)
    }

    /// Row `i` of `embeddings` belongs to `samples[i]`.
    pub fn from_rows(samples: &[TripletSample], embeddings: Tensor) -> Result<Self> {
        let size = embeddings.size();
        if size.len() != 2 || size[0] as usize != samples.len() {
            return Err(NetError::Shape(format!("{} samples, embeddings {size:?}", samples.len())));
        }
        let rows: BTreeMap<TripletSample, i64> =
            samples.iter().enumerate().map(|(i, s)| (*s, i as i64)).collect();
        if rows.len() != samples.len() {
            return Err(NetError::Triplet("duplicate samples in embedding table".into()));
        }
        Ok(EmbeddingTable { rows, embeddings })
    }

    pub fn row(&self, s: &TripletSample) -> Result<i64> {
        self.rows
            .get(s)
            .copied()
            .ok_or_else(|| NetError::Triplet(format!("{s} has no embedding")))
    }

    pub fn samples(&self) -> Vec<TripletSample> {
        self.rows.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Binary training accuracy, softmax head only.
    pub accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    variant: Variant,
    config: HeadConfig,
    input_dims: Vec<i64>,
    modalities: Vec<Modality>,
    pairing: Option<Pairing>,
}

/// Shared-weight projection trained with the improved triplet loss.
pub struct TripletHead {
    pub config: HeadConfig,
    pub backbone: Modality,
    pub history: Vec<HeadEpoch>,
    input_dim: i64,
    vs: nn::VarStore,
    net: nn::Sequential,
}

impl fmt::Debug for TripletHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TripletHead")
            .field("backbone", &self.backbone)
            .field("alpha", &self.config.alpha)
            .finish()
    }
}

impl TripletHead {
    fn new(config: HeadConfig, backbone: Modality, input_dim: i64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = mlp(&vs.root(), input_dim, TRIPLET_DIM);
        TripletHead {
            config,
            backbone,
            history: Vec::new(),
            input_dim,
            vs,
            net,
        }
    }

    /// Projects backbone embedding rows `[N, D]` to `[N, 128]`.
    pub fn project(&self, emb: &Tensor) -> Result<Tensor> {
        let size = emb.size();
        if size.len() != 2 || size[1] != self.input_dim {
            return Err(NetError::Shape(format!("head expects [N, {}], got {size:?}", self.input_dim)));
        }
        Ok(tch::no_grad(|| self.net.forward(emb)))
    }

    /// `-||h(a) - h(b)||` for backbone embeddings.
    pub fn score_embeddings(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let (pa, pb) = (self.project(&a.view([1, -1]))?, self.project(&b.view([1, -1]))?);
        Ok(-(pa - pb).square().sum(Kind::Double).sqrt().double_value(&[]))
    }

    pub fn score(&self, backbone: &Identifier, a: &Raster, b: &Raster) -> Result<f64> {
        let e = backbone.embed_batch(&[a, b])?;
        self.score_embeddings(&e.get(0), &e.get(1))
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ArchiveWriter::new();
        w.json(
            "config.json",
            &HeadMeta {
                variant: Variant::Triplet,
                config: self.config.clone(),
                input_dims: vec![self.input_dim],
                modalities: vec![self.backbone],
                pairing: None,
            },
        )?;
        w.json("history.json", &self.history)?;
        w.vars("head.ot", &self.vs)?;
        w.write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = ArchiveReader::open(path.as_ref())?;
        let meta: HeadMeta = r.json("config.json")?;
        if meta.variant != Variant::Triplet || meta.input_dims.len() != 1 || meta.modalities.len() != 1 {
            return Err(NetError::Archive {
                path: path.as_ref().to_path_buf(),
                reason: "not a triplet head".into(),
            });
        }
        let mut h = TripletHead::new(meta.config, meta.modalities[0], meta.input_dims[0]);
        h.history = r.json("history.json")?;
        r.load_vars("head.ot", &mut h.vs)?;
        Ok(h)
    }
}

/// How triplets are chosen each epoch.
#[derive(Debug, Clone)]
pub enum Mining {
    /// [`sample_triplets`] over the table, redrawn every epoch.
    RandomNegative,
    Fixed(Vec<Triplet>),
}

/// Trains the projection on cached backbone embeddings.
pub fn fit_triplet_head(
    table: &EmbeddingTable,
    backbone: Modality,
    mining: &Mining,
    config: &HeadConfig,
) -> Result<TripletHead> {
    config.validate()?;
    tch::manual_seed(config.seed as i64);
    let head = TripletHead::new(config.clone(), backbone, table.embeddings.size()[1]);
    let mut opt = nn::Adam::default().build(&head.vs, config.learn_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = table.samples();
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        let mut triplets = match mining {
            Mining::RandomNegative => sample_triplets(&samples, &mut rng)?,
            Mining::Fixed(t) => t.clone(),
        };
        if triplets.is_empty() {
            return Err(NetError::EmptyDataset("no triplets".into()));
        }
        triplets.shuffle(&mut rng);
        let (mut total, mut n) = (0.0, 0usize);
        for (batch, chunk) in triplets.chunks(config.batch_size).enumerate() {
            let idx = |f: fn(&Triplet) -> TripletSample| -> Result<Tensor> {
                let rows = chunk.iter().map(|t| table.row(&f(t))).collect::<Result<Vec<_>>>()?;
                Ok(Tensor::from_slice(&rows))
            };
            let pick = |i: Tensor| head.net.forward(&table.embeddings.index_select(0, &i));
            let (a, p, ng) = (
                pick(idx(|t| t.anchor)?),
                pick(idx(|t| t.positive)?),
                pick(idx(|t| t.negative)?),
            );
            let loss = triplet_loss_tensor(&a, &p, &ng, config.alpha);
            opt.backward_step(&loss);
            let v = loss.double_value(&[]);
            check_loss(v, epoch, batch, "triplet loss")?;
            total += v * chunk.len() as f64;
            n += chunk.len();
        }
        let loss = total / n as f64;
        log::info!("triplet head epoch {epoch}/{}: loss {loss:.4}", config.epochs);
        history.push(HeadEpoch {
            epoch,
            loss,
            accuracy: None,
        });
    }
    let mut head = head;
    head.history = history;
    Ok(head)
}

/// Embeds `samples` with the frozen backbone and trains a triplet head.
pub fn train_triplet(
    backbone: &Identifier,
    samples: &[(TripletSample, &Raster)],
    mining: &Mining,
    config: &HeadConfig,
) -> Result<TripletHead> {
    require_frozen(backbone)?;
    if samples.is_empty() {
        return Err(NetError::EmptyDataset("no triplet samples".into()));
    }
    if let Mining::Fixed(t) = mining {
        if t.is_empty() {
            return Err(NetError::EmptyDataset("no triplets".into()));
        }
    }
    let table = EmbeddingTable::build(backbone, samples)?;
    fit_triplet_head(&table, backbone.modality, mining, config)
}

/// Fully connected head over `[e(a), e(b)]` with a two-way softmax; class 1
/// is genuine.
pub struct SiameseHead {
    pub config: HeadConfig,
    pub modalities: [Modality; 2],
    pub pairing: Pairing,
    pub history: Vec<HeadEpoch>,
    dims: [i64; 2],
    vs: nn::VarStore,
    net: nn::Sequential,
}

impl fmt::Debug for SiameseHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SiameseHead")
            .field("modalities", &self.modalities)
            .field("pairing", &self.pairing)
            .finish()
    }
}

impl SiameseHead {
    fn new(config: HeadConfig, modalities: [Modality; 2], pairing: Pairing, dims: [i64; 2]) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = mlp(&vs.root(), dims[0] + dims[1], 2);
        SiameseHead {
            config,
            modalities,
            pairing,
            history: Vec::new(),
            dims,
            vs,
            net,
        }
    }

    /// `[N, 2]` class probabilities (impostor, genuine).
    pub fn probabilities(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.size(), b.size());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] || sa[1] != self.dims[0] || sb[1] != self.dims[1] {
            return Err(NetError::Shape(format!(
                "head expects [N, {}] and [N, {}], got {sa:?} and {sb:?}",
                self.dims[0], self.dims[1]
            )));
        }
        Ok(tch::no_grad(|| self.net.forward(&Tensor::cat(&[a, b], 1)).softmax(-1, Kind::Float)))
    }

    /// Genuine-class probability for one embedding pair.
    pub fn score_embeddings(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        Ok(self
            .probabilities(&a.view([1, -1]), &b.view([1, -1]))?
            .double_value(&[0, 1]))
    }

    pub fn score(&self, branches: [&Identifier; 2], a: &Raster, b: &Raster) -> Result<f64> {
        let ea = branches[0].embed_batch(&[a])?;
        let eb = branches[1].embed_batch(&[b])?;
        self.score_embeddings(&ea, &eb)
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ArchiveWriter::new();
        w.json(
            "config.json",
            &HeadMeta {
                variant: Variant::Softmax,
                config: self.config.clone(),
                input_dims: self.dims.to_vec(),
                modalities: self.modalities.to_vec(),
                pairing: Some(self.pairing),
            },
        )?;
        w.json("history.json", &self.history)?;
        w.vars("head.ot", &self.vs)?;
        w.write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = ArchiveReader::open(path.as_ref())?;
        let meta: HeadMeta = r.json("config.json")?;
        let malformed = || NetError::Archive {
            path: path.as_ref().to_path_buf(),
            reason: "not a softmax head".into(),
        };
        if meta.variant != Variant::Softmax || meta.input_dims.len() != 2 || meta.modalities.len() != 2 {
            return Err(malformed());
        }
        let mut h = SiameseHead::new(
            meta.config,
            [meta.modalities[0], meta.modalities[1]],
            meta.pairing.ok_or_else(malformed)?,
            [meta.input_dims[0], meta.input_dims[1]],
        );
        h.history = r.json("history.json")?;
        r.load_vars("head.ot", &mut h.vs)?;
        Ok(h)
    }
}

/// Trains on embedding rows `a[i]`, `b[i]` with `labels[i]`. Each epoch uses
/// every genuine pair and an equal number of randomly drawn impostor pairs.
pub fn fit_siamese_head(
    a: &Tensor,
    b: &Tensor,
    labels: &[Label],
    modalities: [Modality; 2],
    pairing: Pairing,
    config: &HeadConfig,
) -> Result<SiameseHead> {
    config.validate()?;
    let n = labels.len();
    if a.size()[0] as usize != n || b.size()[0] as usize != n {
        return Err(NetError::LabelCount {
            images: a.size()[0] as usize,
            labels: n,
        });
    }
    let genuine: Vec<i64> = (0..n as i64).filter(|&i| labels[i as usize].is_genuine()).collect();
    let impostor: Vec<i64> = (0..n as i64).filter(|&i| !labels[i as usize].is_genuine()).collect();
    if genuine.is_empty() || impostor.is_empty() {
        return Err(NetError::SingleClass(if genuine.is_empty() && impostor.is_empty() { 0 } else { 1 }));
    }
    tch::manual_seed(config.seed as i64);
    let head = SiameseHead::new(config.clone(), modalities, pairing, [a.size()[1], b.size()[1]]);
    let mut opt = nn::Adam::default().build(&head.vs, config.learn_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let targets = Tensor::from_slice(&labels.iter().map(|l| l.is_genuine() as i64).collect::<Vec<_>>());
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        let mut rows = genuine.clone();
        rows.extend(impostor.choose_multiple(&mut rng, genuine.len().min(impostor.len())));
        rows.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0i64);
        for (batch, chunk) in rows.chunks(config.batch_size).enumerate() {
            let idx = Tensor::from_slice(chunk);
            let x = Tensor::cat(&[a.index_select(0, &idx), b.index_select(0, &idx)], 1);
            let y = targets.index_select(0, &idx);
            let logits = head.net.forward(&x);
            let loss = logits.cross_entropy_for_logits(&y);
            opt.backward_step(&loss);
            let v = loss.double_value(&[]);
            check_loss(v, epoch, batch, "cross-entropy")?;
            total += v * chunk.len() as f64;
            correct += logits.argmax(1, false).eq_tensor(&y).sum(Kind::Int64).int64_value(&[]);
        }
        let loss = total / rows.len() as f64;
        let accuracy = 100.0 * correct as f64 / rows.len() as f64;
        log::info!("softmax head epoch {epoch}/{}: loss {loss:.4}, accuracy {accuracy:.1}%", config.epochs);
        history.push(HeadEpoch {
            epoch,
            loss,
            accuracy: Some(accuracy),
        });
    }
    let mut head = head;
    head.history = history;
    Ok(head)
}

/// Embeds both sides with their frozen branches and trains the softmax head.
pub fn train_siamese_softmax(
    branches: [&Identifier; 2],
    pairs: &[(&Raster, &Raster, Label)],
    pairing: Pairing,
    config: &HeadConfig,
) -> Result<SiameseHead> {
    for b in branches {
        require_frozen(b)?;
    }
    if pairs.is_empty() {
        return Err(NetError::EmptyDataset("no training pairs".into()));
    }
    let left: Vec<&Raster> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<&Raster> = pairs.iter().map(|p| p.1).collect();
    let labels: Vec<Label> = pairs.iter().map(|p| p.2).collect();
    let (ea, eb) = (branches[0].embed_batch(&left)?, branches[1].embed_batch(&right)?);
    fit_siamese_head(
        &ea,
        &eb,
        &labels,
        [branches[0].modality, branches[1].modality],
        pairing,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ocular_core::dataset::{Eye, Spectrum};

    fn sample(subject: u32, index: u8, fake: bool) -> TripletSample {
        TripletSample {
            key: SampleKey::new(subject, Eye::Left, Spectrum::Nir, index).unwrap(),
            fake,
        }
    }

    #[test]
    fn loss_hand_values() {
        assert_eq!(improved_triplet_loss(2.0, 4.0, 4.0, 1.0).unwrap(), 0.0);
        assert_eq!(improved_triplet_loss(3.0, 2.0, 2.0, 0.5).unwrap(), 1.5);
        for d in [0.0, 0.3, 7.0, 1e6] {
            assert_eq!(improved_triplet_loss(d, d, d, 0.25).unwrap(), 0.25);
        }
        assert!(matches!(
            improved_triplet_loss(-0.1, 1.0, 1.0, 1.0),
            Err(NetError::NegativeDistance(_))
        ));
        assert!(improved_triplet_loss(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn grad_sides() {
        assert_eq!(improved_triplet_grad(3.0, 2.0, 2.0, 0.5).unwrap(), [1.0, -0.5, -0.5]);
        assert_eq!(improved_triplet_grad(2.0, 4.0, 4.0, 1.0).unwrap(), [0.0; 3]);
    }

    #[test]
    fn tensor_loss_agrees() {
        let a = Tensor::from_slice(&[0.0f32, 0.0, 3.0, 0.0]).view([2, 2]);
        let p = Tensor::from_slice(&[3.0f32, 0.0, 0.0, 0.0]).view([2, 2]);
        let n = Tensor::from_slice(&[0.0f32, 1.0, 3.0, 10.0]).view([2, 2]);
        // Row 0: d_ap 3, d_an 1, d_pn sqrt(10). Row 1 is past the margin.
        let want = improved_triplet_loss(3.0, 1.0, 10f64.sqrt(), 1.0).unwrap() / 2.0;
        let v = triplet_loss_tensor(&a, &p, &n, 1.0).double_value(&[]);
        assert!((v - want).abs() < 1e-5, "{v} vs {want}");
    }

    #[test]
    fn triplet_validation() {
        assert!(Triplet::new(sample(1, 1, false), sample(1, 2, true), sample(2, 1, true)).is_ok());
        for (a, p, n) in [
            (sample(1, 1, true), sample(1, 2, true), sample(2, 1, true)),
            (sample(1, 1, false), sample(2, 2, true), sample(3, 1, true)),
            (sample(1, 1, false), sample(1, 2, true), sample(1, 3, true)),
            (sample(1, 1, false), sample(1, 2, false), sample(2, 1, true)),
        ] {
            assert!(matches!(Triplet::new(a, p, n), Err(NetError::Triplet(_))));
        }
        let mut vis = sample(2, 1, true);
        vis.key.spectrum = Spectrum::Vis;
        assert!(Triplet::new(sample(1, 1, false), sample(1, 2, true), vis).is_err());
    }

    #[test]
    fn sampling_covers_positives() {
        let samples: Vec<_> = (1..=3)
            .flat_map(|s| (1..=2).flat_map(move |i| [sample(s, i, false), sample(s, i, true)]))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = sample_triplets(&samples, &mut rng).unwrap();
        // 6 anchors x 2 same-subject fakes.
        assert_eq!(t.len(), 12);
        assert!(t.iter().all(|t| t.negative.key.subject != t.anchor.key.subject));
    }

    #[test]
    fn variants_parse() {
        assert_eq!("triplet".parse::<Variant>().unwrap(), Variant::Triplet);
        assert_eq!("real-fake".parse::<Pairing>().unwrap(), Pairing::RealFake);
        assert!("siamese".parse::<Variant>().is_err());
    }
}
