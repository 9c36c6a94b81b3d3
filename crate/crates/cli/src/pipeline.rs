//! The experiment as a chain of cached stages.
//!
//! ```text
//! prepare ─ translator-<dir>-<eye> ─ translate-<dir>-<eye> ─┬─ identifier-<side>-<eye> ─ eval-id
//!                                                            ├─ triplet / softmax heads ─ score-<system>-<protocol>
//!                                                            └─ baseline-<system>-<protocol> ─ fuse-<group>-<protocol>
//! ```
//!
//! Every stage lives in `<output>/stages/`; `evaluate` and `report` write
//! `<output>/report/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ocular_core::baselines::{fit_llr_fusion, BaselineSystem, DescriptorConfig, Features};
use ocular_core::dataset::{generate_synthetic, ingest, DatasetIndex, DatasetKind, Eye, SampleKey, Spectrum, Split};
use ocular_core::metrics::{combine_eyes, psnr, ssim, Comparison, QualityStats, ScoreEntry, ScoreSet, SsimParams};
use ocular_core::preprocess::{to_canvas, to_gray};
use ocular_core::Raster;
use ocular_nets::identifier::{accuracy_drop_report, train_identifier, AccuracyDropRow, Identifier, Modality};
use ocular_nets::translator::{train_translator, Direction, EpochStats, Translator};
use ocular_nets::verifier::{
    fit_siamese_head, train_triplet, Mining, Pairing, SiameseHead, TripletHead, TripletSample, Variant,
};
use serde::Serialize;
use serde_json::json;
use tch::Tensor;

use crate::config::{parse_system, ExperimentConfig};
use crate::protocol::{Family, ProtocolSpec, Side};
use crate::report::{self, QualityRow, SummaryRow, QUALITY_HEADER, TABLE2_HEADER};
use crate::stage::{dir_files, file_digest, Stage, StageCtx, StageRunner};
use crate::store::{filter_eyes, ImageStore};

const PREPARE_V: u32 = 1;
const TRANSLATOR_V: u32 = 1;
const TRANSLATE_V: u32 = 1;
const IDENTIFIER_V: u32 = 1;
const EVAL_ID_V: u32 = 1;
const HEAD_V: u32 = 1;
const SCORE_V: u32 = 1;
const BASELINE_V: u32 = 1;
const FUSE_V: u32 = 1;

/// A trained verification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeadRef {
    pub variant: Variant,
    /// Softmax heads only.
    pub pairing: Option<Pairing>,
    pub direction: Direction,
}

impl HeadRef {
    pub fn triplet(direction: Direction) -> Self {
        HeadRef {
            variant: Variant::Triplet,
            pairing: None,
            direction,
        }
    }

    pub fn softmax(pairing: Pairing, direction: Direction) -> Self {
        HeadRef {
            variant: Variant::Softmax,
            pairing: Some(pairing),
            direction,
        }
    }

    /// `triplet-vis2nir`, `softmax-real-fake-vis2nir`.
    pub fn system(&self) -> String {
        match self.pairing {
            Some(p) => format!("{}-{}-{}", self.variant.as_str(), p.as_str(), self.direction),
            None => format!("{}-{}", self.variant.as_str(), self.direction),
        }
    }

    /// Image sides of the two branches.
    pub fn sides(&self) -> [Side; 2] {
        let (s, t) = (self.direction.source(), self.direction.target());
        match self.pairing {
            Some(Pairing::RealReal) => [Side::real(s), Side::real(t)],
            _ => [Side::real(t), Side::fake(t)],
        }
    }

    /// The protocol this head is evaluated on.
    pub fn protocol(&self) -> ProtocolSpec {
        let [a, b] = self.sides();
        ProtocolSpec::new(Family::Cnn, a, b)
    }
}

/// Paths and numbers of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report_dir: PathBuf,
    pub stages: BTreeMap<String, Stage>,
    pub summary: Vec<SummaryRow>,
    pub quality: Vec<QualityRow>,
    pub accuracy: Vec<AccuracyDropRow>,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub runner: StageRunner,
    stages: BTreeMap<String, Stage>,
}

fn eye_label(eyes: &[Eye]) -> String {
    if eyes.len() == Eye::BOTH.len() {
        "both".into()
    } else {
        eyes.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("+")
    }
}

fn gray_to_rgb(img: &Raster) -> Raster {
    let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
    Raster::from_vec(img.width(), img.height(), 3, data).expect("3x gray length")
}

/// `img` brought to `channels` (gray replicated, or color to luma).
fn match_channels(img: &Raster, channels: usize) -> Raster {
    match (img.channels(), channels) {
        (a, b) if a == b => img.clone(),
        (1, 3) => gray_to_rgb(img),
        _ => to_gray(img),
    }
}

fn stage_tag(s: &str) -> String {
    s.replace([':', '/', ' '], "_")
}

/// Canvas-sized copy of a raw dataset, restricted to `eyes`, with its manifest.
pub fn prepare_dataset(raw: &DatasetIndex, eyes: &[Eye], out: &Path) -> Result<DatasetIndex> {
    let mut index = DatasetIndex::new(out, raw.kind());
    for (k, e) in raw.iter().filter(|(k, _)| eyes.contains(&k.eye)) {
        let img = raw.load(k).with_context(|| format!("loading {k}"))?;
        let canvas = to_canvas(&img, raw.kind()).with_context(|| format!("preprocessing {k}"))?;
        let rel = k.relative_path();
        let path = out.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        canvas.save_png(&path)?;
        index.insert(*k, rel, e.split)?;
    }
    if index.is_empty() {
        bail!("no images for eyes {eyes:?}");
    }
    index.write_manifest()?;
    Ok(index)
}

/// Row embeddings of `keys` seen from `side`; row order follows `keys`.
fn embed_keys(id: &Identifier, store: &ImageStore, side: Side, keys: &[SampleKey]) -> Result<Tensor> {
    let mut rows = Vec::new();
    for chunk in keys.chunks(32) {
        let imgs = chunk.iter().map(|k| store.load(side, k)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Raster> = imgs.iter().collect();
        rows.push(id.embed_batch(&refs)?);
    }
    Ok(Tensor::cat(&rows, 0))
}

fn unique_keys<'a>(keys: impl Iterator<Item = &'a SampleKey>) -> (Vec<SampleKey>, BTreeMap<SampleKey, i64>) {
    let mut map = BTreeMap::new();
    for k in keys {
        let n = map.len() as i64;
        map.entry(*k).or_insert(n);
    }
    let mut v: Vec<(SampleKey, i64)> = map.iter().map(|(k, i)| (*k, *i)).collect();
    v.sort_by_key(|(_, i)| *i);
    (v.into_iter().map(|(k, _)| k).collect(), map)
}

/// Per-epoch translator history as CSV rows.
fn history_rows(h: &[EpochStats]) -> Vec<Vec<String>> {
    h.iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.d_loss.to_string(),
                e.g_adversarial.to_string(),
                e.g_l1.to_string(),
                e.heldout_l1.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "d_loss", "g_adversarial", "g_l1", "heldout_l1"];
pub const PAIR_QUALITY_HEADER: [&str; 5] = ["sample", "psnr_translated", "ssim_translated", "psnr_source", "ssim_source"];

/// Per held-out pair: PSNR/SSIM of the translated image and of the untranslated source.
#[derive(Debug, Clone, PartialEq)]
pub struct PairQuality {
    pub sample: String,
    pub psnr_translated: f64,
    pub ssim_translated: f64,
    pub psnr_source: f64,
    pub ssim_source: f64,
}

pub fn read_pair_quality(path: &Path) -> Result<Vec<PairQuality>> {
    let (_, header, rows) = crate::stage::read_csv(path)?;
    if header != PAIR_QUALITY_HEADER {
        bail!("{}: not a pair quality table", path.display());
    }
    rows.iter()
        .map(|r| {
            Ok(PairQuality {
                sample: r[0].clone(),
                psnr_translated: r[1].parse()?,
                ssim_translated: r[2].parse()?,
                psnr_source: r[3].parse()?,
                ssim_source: r[4].parse()?,
            })
        })
        .collect()
}

/// Held-out L1 per epoch from a translator `history.csv`.
pub fn read_heldout_l1(path: &Path) -> Result<Vec<f64>> {
    let (_, header, rows) = crate::stage::read_csv(path)?;
    if header != HISTORY_HEADER {
        bail!("{}: not a translator history", path.display());
    }
    rows.iter()
        .map(|r| r[4].parse::<f64>().with_context(|| format!("{}: held-out L1 missing", path.display())))
        .collect()
}

#[derive(Serialize)]
struct PrepareParams<'a> {
    kind: DatasetKind,
    eyes: &'a [Eye],
    synthetic: Option<ocular_core::dataset::SyntheticSpec>,
    raw_digest: Option<String>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        cfg.check_prerequisites()?;
        let runner = StageRunner::new(&cfg.output, cfg.hash(), cfg.seed, force);
        Ok(Pipeline {
            cfg,
            runner,
            stages: BTreeMap::new(),
        })
    }

    fn record(&mut self, s: Stage) -> Stage {
        self.stages.insert(s.name.clone(), s.clone());
        s
    }

    pub fn stages(&self) -> &BTreeMap<String, Stage> {
        &self.stages
    }

    pub fn provenance(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".into(), self.cfg.hash()),
            ("seed".into(), self.cfg.seed.to_string()),
        ]
    }

    fn kind(&self) -> DatasetKind {
        self.cfg.dataset.kind
    }

    pub fn prepare(&mut self) -> Result<Stage> {
        let cfg = &self.cfg;
        let synthetic = cfg.synthetic_spec();
        let raw_digest = match &cfg.dataset.path {
            Some(p) => {
                let files = dir_files(p).with_context(|| format!("stage prepare: reading {}", p.display()))?;
                Some(crate::stage::sha256_hex(serde_json::to_string(&files)?.as_bytes()))
            }
            None => None,
        };
        let params = PrepareParams {
            kind: cfg.dataset.kind,
            eyes: &cfg.eyes,
            synthetic: synthetic.clone(),
            raw_digest,
        };
        let (path, eyes, kind) = (cfg.dataset.path.clone(), cfg.eyes.clone(), cfg.dataset.kind);
        let s = self.runner.run("prepare", PREPARE_V, &params, &[], |ctx| {
            let raw = match (&synthetic, &path) {
                (Some(spec), _) => generate_synthetic(spec, ctx.path("raw"))?,
                (None, Some(p)) => ingest(p, kind)?,
                (None, None) => bail!("no dataset source"),
            };
            prepare_dataset(&raw, &eyes, &ctx.path("data"))?;
            if synthetic.is_some() {
                fs::remove_dir_all(ctx.path("raw"))?;
            }
            Ok(())
        })?;
        Ok(self.record(s))
    }

    /// Prepared images (no translated images attached).
    pub fn base_store(&mut self) -> Result<ImageStore> {
        let s = self.prepare()?;
        let index = DatasetIndex::read_manifest(s.path("data"), self.kind())?;
        Ok(ImageStore::new(filter_eyes(&index, &self.cfg.eyes)?))
    }

    fn direction_for(&self, target: Spectrum) -> Result<Direction> {
        self.cfg
            .translator
            .directions
            .iter()
            .copied()
            .find(|d| d.target() == target)
            .ok_or_else(|| anyhow!("no configured direction produces {target} images"))
    }

    pub fn translator(&mut self, direction: Direction, eye: Eye) -> Result<Stage> {
        let name = format!("translator-{direction}-{eye}");
        let prep = self.prepare()?;
        let store = self.base_store()?;
        let seed = self.cfg.stage_seed(&name);
        let net = self.cfg.translator.network(direction, seed);
        let given = self.cfg.translator.checkpoints.get(&format!("{direction}-{eye}")).cloned();
        let params = match &given {
            Some(p) => json!({ "checkpoint": file_digest(p).with_context(|| format!("stage {name}"))? }),
            None => json!({ "network": net, "eye": eye }),
        };
        let s = self.runner.run(&name, TRANSLATOR_V, &params, &[&prep], |ctx| {
            let t = match &given {
                Some(p) => {
                    let t = Translator::load(p)?;
                    if t.config.direction != direction {
                        bail!("checkpoint {} translates {}, expected {direction}", p.display(), t.config.direction);
                    }
                    t
                }
                None => {
                    let pairs = |split| -> Result<Vec<(Raster, Raster)>> {
                        store
                            .keys(eye, split)
                            .iter()
                            .map(|k| {
                                Ok((
                                    store.load(Side::real(direction.source()), k)?,
                                    store.load(Side::real(direction.target()), k)?,
                                ))
                            })
                            .collect()
                    };
                    let (train, test) = (pairs(Split::Train)?, pairs(Split::Test)?);
                    log::info!("{name}: {} training pairs, {} held out", train.len(), test.len());
                    train_translator(&train, &test, &net)?
                }
            };
            t.save(ctx.path("model.ckpt"))?;
            ctx.write_csv("history.csv", &HISTORY_HEADER, &history_rows(&t.history))?;
            Ok(())
        })?;
        Ok(self.record(s))
    }

    pub fn translate(&mut self, direction: Direction, eye: Eye) -> Result<Stage> {
        let name = format!("translate-{direction}-{eye}");
        let prep = self.prepare()?;
        let model = self.translator(direction, eye)?;
        let store = self.base_store()?;
        let s = self.runner.run(&name, TRANSLATE_V, &json!({ "eye": eye }), &[&prep, &model], |ctx| {
            let t = Translator::load(model.path("model.ckpt"))?;
            let (src, tgt) = (Side::real(direction.source()), Side::real(direction.target()));
            fs::create_dir_all(ctx.path("fake"))?;
            let params = SsimParams::default();
            let mut rows = Vec::new();
            let (mut pt, mut st, mut ps, mut ss) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for split in [Split::Train, Split::Test] {
                for k in store.keys(eye, split) {
                    let x = store.load(src, &k)?;
                    let fake = t.translate(&x, direction.source())?;
                    let out = k.with_spectrum(direction.target());
                    fake.save_png(ctx.path("fake").join(out.file_name()))?;
                    if split == Split::Test {
                        let y = store.load(tgt, &k)?;
                        let plain = match_channels(&x, y.channels());
                        let q = [psnr(&fake, &y, 255.0)?, ssim(&fake, &y, &params)?, psnr(&plain, &y, 255.0)?, ssim(&plain, &y, &params)?];
                        pt.push(q[0]);
                        st.push(q[1]);
                        ps.push(q[2]);
                        ss.push(q[3]);
                        let mut r = vec![out.id()];
                        r.extend(q.iter().map(f64::to_string));
                        rows.push(r);
                    }
                }
            }
            ctx.write_csv("quality.csv", &PAIR_QUALITY_HEADER, &rows)?;
            let summary = [("translated", QualityStats::from_values(&pt, &st)?), ("source", QualityStats::from_values(&ps, &ss)?)]
                .map(|(images, q)| {
                    QualityRow {
                        direction: direction.to_string(),
                        eye: eye.to_string(),
                        images: images.to_string(),
                        psnr_mean: q.psnr_mean,
                        psnr_std: q.psnr_std,
                        ssim_mean: q.ssim_mean,
                        ssim_std: q.ssim_std,
                        count: q.count,
                    }
                    .record()
                });
            ctx.write_csv("quality_summary.csv", &QUALITY_HEADER, &summary)?;
            Ok(())
        })?;
        Ok(self.record(s))
    }

    /// Prepared images plus every configured translation.
    pub fn store(&mut self) -> Result<ImageStore> {
        let mut store = self.base_store()?;
        for d in self.cfg.translator.directions.clone() {
            for eye in self.cfg.eyes.clone() {
                let s = self.translate(d, eye)?;
                store.add_fakes(d.target(), eye, s.path("fake"));
            }
        }
        Ok(store)
    }

    /// Stages an image side depends on beyond `prepare`.
    fn side_inputs(&mut self, side: Side, eye: Eye) -> Result<Vec<Stage>> {
        let mut v = vec![self.prepare()?];
        if side.fake {
            let d = self.direction_for(side.spectrum)?;
            v.push(self.translate(d, eye)?);
        }
        Ok(v)
    }

    pub fn identifier(&mut self, side: Side, eye: Eye) -> Result<Stage> {
        let name = format!("identifier-{side}-{eye}");
        let inputs = self.side_inputs(side, eye)?;
        let store = self.store()?;
        let net = self.cfg.identifier.network(self.cfg.stage_seed(&name));
        let params = json!({ "network": net, "side": side.tag(), "eye": eye });
        let refs: Vec<&Stage> = inputs.iter().collect();
        let s = self.runner.run(&name, IDENTIFIER_V, &params, &refs, |ctx| {
            let keys = store.keys(eye, Split::Train);
            let imgs = keys.iter().map(|k| store.load(side, k)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Raster> = imgs.iter().collect();
            let labels: Vec<u32> = keys.iter().map(|k| k.subject).collect();
            let modality = Modality {
                spectrum: side.spectrum,
                fake: side.fake,
                eye,
            };
            let id = train_identifier(&refs, &labels, modality, &net)?;
            id.save(ctx.path("model.ckpt"))?;
            let rows: Vec<Vec<String>> = id.history.iter().map(|h| vec![h.epoch.to_string(), h.loss.to_string()]).collect();
            ctx.write_csv("history.csv", &["epoch", "loss"], &rows)?;
            Ok(())
        })?;
        Ok(self.record(s))
    }

    fn load_identifier(&mut self, side: Side, eye: Eye) -> Result<(Stage, Identifier)> {
        let s = self.identifier(side, eye)?;
        let mut id = Identifier::load(s.path("model.ckpt"))?;
        id.freeze();
        Ok((s, id))
    }

    /// Identifiers trained on each direction's target spectrum, tested on real
    /// and translated test images.
    pub fn eval_id(&mut self) -> Result<Stage> {
        let mut plan = Vec::new();
        let mut inputs = Vec::new();
        for d in self.cfg.translator.directions.clone() {
            for eye in self.cfg.eyes.clone() {
                inputs.push(self.translate(d, eye)?);
                let mut sides = vec![Side::real(d.target())];
                if self.cfg.identifier.train_on_fake {
                    sides.push(Side::fake(d.target()));
                }
                for side in sides {
                    inputs.push(self.identifier(side, eye)?);
                    plan.push((d, eye, side));
                }
            }
        }
        let store = self.store()?;
        let refs: Vec<&Stage> = inputs.iter().collect();
        let by_name: BTreeMap<String, Stage> = inputs.iter().map(|s| (s.name.clone(), s.clone())).collect();
        let s = self.runner.run("eval-id", EVAL_ID_V, &json!({}), &refs, |ctx| {
            let mut raw = Vec::new();
            for (d, eye, side) in &plan {
                let st = &by_name[&format!("identifier-{side}-{eye}")];
                let id = Identifier::load(st.path("model.ckpt"))?;
                let keys = store.keys(*eye, Split::Test);
                let labels: Vec<u32> = keys.iter().map(|k| k.subject).collect();
                let mut acc = [0.0; 2];
                for (i, test) in [Side::real(d.target()), Side::fake(d.target())].into_iter().enumerate() {
                    let imgs = keys.iter().map(|k| store.load(test, k)).collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&Raster> = imgs.iter().collect();
                    acc[i] = id.evaluate(&refs, &labels)?.percent();
                }
                raw.push((id.modality.to_string(), acc[0], acc[1]));
            }
            let rows = accuracy_drop_report(&raw)?;
            ctx.write_csv("table2.csv", &TABLE2_HEADER, &report::table2_records(&rows))?;
            Ok(())
        })?;
        Ok(self.record(s))
    }

    pub fn head(&mut self, head: HeadRef, eye: Eye) -> Result<Stage> {
        let name = format!("head-{}-{eye}", head.system());
        let sides = head.sides();
        let mut inputs = self.side_inputs(sides[1], eye)?;
        let (ids, branches): (Vec<Stage>, Vec<Identifier>) = match head.variant {
            Variant::Triplet => {
                let (s, id) = self.load_identifier(sides[0], eye)?;
                (vec![s], vec![id])
            }
            Variant::Softmax => {
                let (sa, a) = self.load_identifier(sides[0], eye)?;
                let (sb, b) = self.load_identifier(sides[1], eye)?;
                (vec![sa, sb], vec![a, b])
            }
        };
        inputs.extend(ids);
        let store = self.store()?;
        let cfg = self.cfg.verifier.head(self.cfg.stage_seed(&name));
        let params = json!({ "head": cfg, "system": head.system(), "eye": eye, "mining": "random-negative" });
        let refs: Vec<&Stage> = inputs.iter().collect();
        let s = self.runner.run(&name, HEAD_V, &params, &refs, |ctx| {
            let keys = store.keys(eye, Split::Train);
            let rows: Vec<Vec<String>> = match head.variant {
                Variant::Triplet => {
                    let mut pool = Vec::new();
                    for k in &keys {
                        for side in sides {
                            let sample = TripletSample {
                                key: k.with_spectrum(side.spectrum),
                                fake: side.fake,
                            };
                            pool.push((sample, store.load(side, k)?));
                        }
                    }
                    let refs: Vec<(TripletSample, &Raster)> = pool.iter().map(|(s, r)| (*s, r)).collect();
                    let h = train_triplet(&branches[0], &refs, &Mining::RandomNegative, &cfg)?;
                    h.save(ctx.path("head.ckpt"))?;
                    h.history.iter().map(|e| vec![e.epoch.to_string(), e.loss.to_string(), String::new()]).collect()
                }
                Variant::Softmax => {
                    let pairing = head.pairing.expect("softmax heads carry a pairing");
                    let ea = embed_keys(&branches[0], &store, sides[0], &keys)?;
                    let eb = embed_keys(&branches[1], &store, sides[1], &keys)?;
                    // Genuine: every A x B pair of one subject. Impostor: same
                    // sample index, different subject.
                    let (mut ia, mut ib, mut labels) = (Vec::new(), Vec::new(), Vec::new());
                    for (i, a) in keys.iter().enumerate() {
                        for (j, b) in keys.iter().enumerate() {
                            let genuine = a.subject == b.subject;
                            if genuine || a.index == b.index {
                                ia.push(i as i64);
                                ib.push(j as i64);
                                labels.push(if genuine {
                                    ocular_core::metrics::Label::Genuine
                                } else {
                                    ocular_core::metrics::Label::Impostor
                                });
                            }
                        }
                    }
                    let a = ea.index_select(0, &Tensor::from_slice(&ia));
                    let b = eb.index_select(0, &Tensor::from_slice(&ib));
                    let modalities = [branches[0].modality, branches[1].modality];
                    let h = fit_siamese_head(&a, &b, &labels, modalities, pairing, &cfg)?;
                    h.save(ctx.path("head.ckpt"))?;
                    h.history
                        .iter()
                        .map(|e| {
                            vec![
                                e.epoch.to_string(),
                                e.loss.to_string(),
                                e.accuracy.map(|v| v.to_string()).unwrap_or_default(),
                            ]
                        })
                        .collect()
                }
            };
            ctx.write_csv("history.csv", &["epoch", "loss", "accuracy"], &rows)?;
            Ok(())
        })?;
        Ok(self.record(s))
    }

    /// Scores `protocol` with a trained head, per configured eye plus the
    /// combined set when both eyes run.
    pub fn score(&mut self, head: HeadRef, protocol: ProtocolSpec) -> Result<Stage> {
        if protocol.family != Family::Cnn {
            bail!("{protocol}: learned heads are per eye; use a cnn protocol");
        }
        let name = format!("score-{}-{}", head.system(), stage_tag(&protocol.to_string()));
        let eyes = self.cfg.eyes.clone();
        let mut inputs = Vec::new();
        let mut per_eye = Vec::new();
        for &eye in &eyes {
            let h = self.head(head, eye)?;
            let sides = head.sides();
            let ids: Vec<Identifier> = match head.variant {
                Variant::Triplet => vec![self.load_identifier(sides[0], eye)?.1],
                Variant::Softmax => vec![self.load_identifier(sides[0], eye)?.1, self.load_identifier(sides[1], eye)?.1],
            };
            for side in protocol.sides() {
                inputs.extend(self.side_inputs(side, eye)?);
            }
            inputs.push(h.clone());
            per_eye.push((eye, h, ids));
        }
        inputs.sort_by(|a, b| a.name.cmp(&b.name));
        inputs.dedup_by(|a, b| a.name == b.name);
        let store = self.store()?;
        let system = head.system();
        let test = store.index.split().1;
        let refs: Vec<&Stage> = inputs.iter().collect();
        let s = self.runner.run(&name, SCORE_V, &json!({ "protocol": protocol.to_string() }), &refs, |ctx| {
            let mut sets = Vec::new();
            for (eye, h, ids) in &per_eye {
                let comps = protocol.comparisons_for(&test, *eye)?;
                let (ka, ma) = unique_keys(comps.iter().map(|c| &c.a));
                let (kb, mb) = unique_keys(comps.iter().map(|c| &c.b));
                let branch_b = ids.last().expect("one or two branches");
                let ea = embed_keys(&ids[0], &store, protocol.a, &ka)?;
                let eb = embed_keys(branch_b, &store, protocol.b, &kb)?;
                let score: Box<dyn Fn(&Tensor, &Tensor) -> Result<f64>> = match head.variant {
                    Variant::Triplet => {
                        let t = TripletHead::load(h.path("head.ckpt"))?;
                        Box::new(move |a, b| Ok(t.score_embeddings(a, b)?))
                    }
                    Variant::Softmax => {
                        let t = SiameseHead::load(h.path("head.ckpt"))?;
                        Box::new(move |a, b| Ok(t.score_embeddings(a, b)?))
                    }
                };
                let entries = comps
                    .iter()
                    .map(|c| {
                        Ok(ScoreEntry {
                            pair_id: protocol.pair_id(c),
                            label: c.label,
                            score: score(&ea.get(ma[&c.a]), &eb.get(mb[&c.b]))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let set = ScoreSet::new(protocol.to_string(), entries)?;
                write_scores(ctx, &set, &system, eye.as_str())?;
                sets.push(set);
            }
            if let [l, r] = sets.as_slice() {
                write_scores(ctx, &combine_eyes(l, r)?, &system, "both")?;
            }
            Ok(())
        })?;
        Ok(self.record(s))
    }

    pub fn baseline(&mut self, system: BaselineSystem, protocol: ProtocolSpec) -> Result<Stage> {
        let name = format!("baseline-{system}-{}", stage_tag(&protocol.to_string()));
        let eyes = self.cfg.eyes.clone();
        let mut inputs = Vec::new();
        for &eye in &eyes {
            for side in protocol.sides() {
                inputs.extend(self.side_inputs(side, eye)?);
            }
        }
        inputs.sort_by(|a, b| a.name.cmp(&b.name));
        inputs.dedup_by(|a, b| a.name == b.name);
        let store = self.store()?;
        let descriptors = self.cfg.baselines.descriptors;
        let params = json!({ "system": system, "protocol": protocol.to_string(), "descriptors": descriptors });
        let refs: Vec<&Stage> = inputs.iter().collect();
        let s = self.runner.run(&name, BASELINE_V, &params, &refs, |ctx| {
            let test = store.index.split().1;
            let tag = system.to_string();
            let mut cache = FeatureCache::new(&store, system, descriptors);
            match protocol.family {
                Family::Baseline => {
                    let set = cache.score(&protocol, &protocol.comparisons(&test)?)?;
                    write_scores(ctx, &set, &tag, &eye_label(&eyes))?;
                }
                Family::Cnn => {
                    let mut sets = Vec::new();
                    for &eye in &eyes {
                        let set = cache.score(&protocol, &protocol.comparisons_for(&test, eye)?)?;
                        write_scores(ctx, &set, &tag, eye.as_str())?;
                        sets.push(set);
                    }
                    if let [l, r] = sets.as_slice() {
                        write_scores(ctx, &combine_eyes(l, r)?, &tag, "both")?;
                    }
                }
            }
            Ok(())
        })?;
        Ok(self.record(s))
    }

    /// Logistic-regression fusion of baseline systems on one protocol.
    pub fn fuse(&mut self, systems: &[String], protocol: ProtocolSpec) -> Result<Stage> {
        let label = systems.join("+");
        let name = format!("fuse-{label}-{}", stage_tag(&protocol.to_string()));
        let mut inputs = Vec::new();
        for s in systems {
            inputs.push(self.baseline(parse_system(s)?, protocol)?);
        }
        let refs: Vec<&Stage> = inputs.iter().collect();
        let system = format!("fusion({label})");
        let s = self.runner.run(&name, FUSE_V, &json!({ "systems": systems }), &refs, |ctx| {
            for file in score_files(&inputs[0].dir)? {
                let fname = file.file_name().expect("file").to_owned();
                let sets = inputs
                    .iter()
                    .map(|st| Ok(ScoreSet::read_csv(st.dir.join(&fname))?))
                    .collect::<Result<Vec<_>>>()?;
                let model = fit_llr_fusion(&sets)?;
                let fused = model.fuse_sets(&sets, &protocol.to_string())?;
                let eye = file.file_stem().expect("stem").to_string_lossy().into_owned();
                let mut prov = ctx.provenance.clone();
                prov.push(("system".into(), system.clone()));
                prov.push(("eye".into(), eye));
                prov.push(("weights".into(), format!("{:?}", model)));
                fused.write_csv(ctx.path(&fname), &prov)?;
            }
            Ok(())
        })?;
        Ok(self.record(s))
    }

    /// Heads configured for training.
    pub fn heads(&self) -> Vec<HeadRef> {
        let mut out = Vec::new();
        for &d in &self.cfg.translator.directions {
            for &v in &self.cfg.verifier.variants {
                match v {
                    Variant::Triplet => out.push(HeadRef::triplet(d)),
                    Variant::Softmax => out.extend(self.cfg.verifier.pairings.iter().map(|&p| HeadRef::softmax(p, d))),
                }
            }
        }
        out
    }

    /// All stages, then `evaluate` and `report` into `<output>/report`.
    pub fn run(&mut self) -> Result<RunOutcome> {
        let mut score_stages = Vec::new();
        for d in self.cfg.translator.directions.clone() {
            for eye in self.cfg.eyes.clone() {
                self.translate(d, eye)?;
            }
        }
        let table2 = self.eval_id()?;
        for h in self.heads() {
            score_stages.push(self.score(h, h.protocol())?);
        }
        let protocols: Vec<ProtocolSpec> = self
            .cfg
            .baselines
            .protocols
            .iter()
            .map(|p| p.parse())
            .collect::<Result<_>>()?;
        for p in &protocols {
            for s in self.cfg.baselines.systems.clone() {
                score_stages.push(self.baseline(parse_system(&s)?, *p)?);
            }
            for group in self.cfg.baselines.fusion.clone() {
                score_stages.push(self.fuse(&group, *p)?);
            }
        }

        let report_dir = self.cfg.output.join("report");
        if report_dir.exists() {
            fs::remove_dir_all(&report_dir)?;
        }
        let prov = self.provenance();
        let mut files = Vec::new();
        for s in &score_stages {
            files.extend(score_files(&s.dir)?);
        }
        let summary = report::evaluate(&files, &report_dir, &prov).context("stage evaluate")?;
        let mut quality = Vec::new();
        for (name, s) in &self.stages {
            if name.starts_with("translate-") {
                quality.extend(report::read_quality(&s.path("quality_summary.csv"))?);
            }
        }
        let accuracy = report::read_table2(&table2.path("table2.csv"))?;
        report::write_report(&report_dir, &summary, &quality, &accuracy, &prov).context("stage report")?;
        Ok(RunOutcome {
            report_dir,
            stages: self.stages.clone(),
            summary,
            quality,
            accuracy,
        })
    }
}

/// Score CSVs of a stage directory, sorted.
pub fn score_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| {
        p.extension().is_some_and(|e| e == "csv")
            && p.file_stem().is_some_and(|s| {
                let s = s.to_string_lossy();
                s == "both" || s.parse::<Eye>().is_ok()
            })
    });
    v.sort();
    Ok(v)
}

fn write_scores(ctx: &StageCtx, set: &ScoreSet, system: &str, eye: &str) -> Result<()> {
    let mut prov = ctx.provenance.clone();
    prov.push(("system".into(), system.to_string()));
    prov.push(("eye".into(), eye.to_string()));
    set.write_csv(ctx.path(format!("{eye}.csv")), &prov)?;
    Ok(())
}

/// Descriptors computed once per (side, sample).
pub struct FeatureCache<'a> {
    store: &'a ImageStore,
    system: BaselineSystem,
    cfg: DescriptorConfig,
    cache: BTreeMap<(Side, SampleKey), Features>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(store: &'a ImageStore, system: BaselineSystem, cfg: DescriptorConfig) -> Self {
        FeatureCache {
            store,
            system,
            cfg,
            cache: BTreeMap::new(),
        }
    }

    fn ensure(&mut self, side: Side, key: &SampleKey) -> Result<()> {
        let k = (side, key.with_spectrum(side.spectrum));
        if !self.cache.contains_key(&k) {
            let img = self.store.load_gray(side, key)?;
            let f = self.system.extract(&img, &self.cfg).with_context(|| format!("{} on {side} {key}", self.system))?;
            self.cache.insert(k, f);
        }
        Ok(())
    }

    pub fn score(&mut self, protocol: &ProtocolSpec, comps: &[Comparison]) -> Result<ScoreSet> {
        let mut entries = Vec::with_capacity(comps.len());
        for c in comps {
            self.ensure(protocol.a, &c.a)?;
            self.ensure(protocol.b, &c.b)?;
            let fa = &self.cache[&(protocol.a, c.a.with_spectrum(protocol.a.spectrum))];
            let fb = &self.cache[&(protocol.b, c.b.with_spectrum(protocol.b.spectrum))];
            entries.push(ScoreEntry {
                pair_id: protocol.pair_id(c),
                label: c.label,
                score: self.system.compare(fa, fb, &self.cfg)?,
            });
        }
        Ok(ScoreSet::new(protocol.to_string(), entries)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_sides_and_protocols() {
        let t = HeadRef::triplet(Direction::Vis2Nir);
        assert_eq!(t.system(), "triplet-vis2nir");
        assert_eq!(t.protocol().to_string(), "cnn:nir-fnir");
        let s = HeadRef::softmax(Pairing::RealReal, Direction::Nir2Vis);
        assert_eq!(s.system(), "softmax-real-real-nir2vis");
        assert_eq!(s.protocol().to_string(), "cnn:nir-vis");
        assert_eq!(HeadRef::softmax(Pairing::RealFake, Direction::Nir2Gray).protocol().to_string(), "cnn:gray-fgray");
    }

    #[test]
    fn channel_matching() {
        let g = Raster::filled(2, 2, 1, 7);
        assert_eq!(match_channels(&g, 3).data(), &[7; 12]);
        let c = Raster::from_vec(1, 1, 3, vec![0, 0, 255]).unwrap();
        assert_eq!(match_channels(&c, 1).data(), &[29]);
        assert_eq!(match_channels(&c, 3), c);
    }

    #[test]
    fn unique_key_rows() {
        let k = |i| SampleKey::new(1, Eye::Left, Spectrum::Nir, i).unwrap();
        let keys = [k(3), k(1), k(3), k(2)];
        let (u, m) = unique_keys(keys.iter());
        assert_eq!(u, vec![k(3), k(1), k(2)]);
        assert_eq!(m[&k(2)], 2);
    }
}
