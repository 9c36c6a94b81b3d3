//! Sample catalog, train/test split and the synthetic paired-spectrum generator.
//!
//! On-disk layout (both ingested and generated datasets):
//!
//! ```text
//! root/
//!   manifest.csv                 subject,eye,spectrum,index,split,path
//!   nir/<subject:03>_<eye>_<index:02>.png
//!   vis/<subject:03>_<eye>_<index:02>.png
//! ```
//!
//! `eye` is `left` or `right`. NIR images are 8-bit gray, VIS images 8-bit RGB,
//! and the two spectra of one key are pixel-aligned. GRAY images are never stored
//! here; they are derived from VIS by [`crate::preprocess::to_gray`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const MAX_SAMPLES_PER_EYE: u8 = 15;
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::Left, Eye::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Eye {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Eye::Left),
            "right" | "r" => Ok(Eye::Right),
            _ => Err(Error::InvalidInput(format!("unknown eye {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    Nir,
    Vis,
    Gray,
}

impl Spectrum {
    pub fn as_str(self) -> &'static str {
        match self {
            Spectrum::Nir => "nir",
            Spectrum::Vis => "vis",
            Spectrum::Gray => "gray",
        }
    }

    /// Stored channel count: VIS is RGB, NIR and GRAY are single-channel.
    pub fn channels(self) -> usize {
        match self {
            Spectrum::Vis => 3,
            Spectrum::Nir | Spectrum::Gray => 1,
        }
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

impl FromStr for Spectrum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nir" => Ok(Spectrum::Nir),
            "vis" => Ok(Spectrum::Vis),
            "gray" | "grey" => Ok(Spectrum::Gray),
            _ => Err(Error::InvalidInput(format!("unknown spectrum {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidInput(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Periocular,
    Iris,
}

impl DatasetKind {
    /// `(width, height)` of a source image of this kind as stored in a real dataset.
    pub fn source_dims(self) -> (usize, usize) {
        match self {
            DatasetKind::Periocular => (640, 480),
            DatasetKind::Iris => (512, 64),
        }
    }

    /// `(width, height)` of generated synthetic images.
    pub fn synthetic_dims(self) -> (usize, usize) {
        match self {
            DatasetKind::Periocular => (256, 256),
            DatasetKind::Iris => (512, 64),
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "periocular" => Ok(DatasetKind::Periocular),
            "iris" => Ok(DatasetKind::Iris),
            _ => Err(Error::InvalidInput(format!("unknown dataset kind {s:?}"))),
        }
    }
}

/// Identifies one image: subject, eye, spectrum and 1-based sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub subject: u32,
    pub eye: Eye,
    pub spectrum: Spectrum,
    pub index: u8,
}

impl SampleKey {
    pub fn new(subject: u32, eye: Eye, spectrum: Spectrum, index: u8) -> Result<Self> {
        if subject == 0 {
            return Err(Error::InvalidInput("subject ids start at 1".into()));
        }
        if index == 0 || index > MAX_SAMPLES_PER_EYE {
            return Err(Error::InvalidInput(format!(
                "sample index {index} outside [1, {MAX_SAMPLES_PER_EYE}]"
            )));
        }
        Ok(SampleKey {
            subject,
            eye,
            spectrum,
            index,
        })
    }

    pub fn with_spectrum(self, spectrum: Spectrum) -> Self {
        SampleKey { spectrum, ..self }
    }

    /// `<subject:03>_<eye>_<index:02>.png`
    pub fn file_name(&self) -> String {
        format!("{:03}_{}_{:02}.png", self.subject, self.eye, self.index)
    }

    /// Path relative to a dataset root.
    pub fn relative_path(&self) -> PathBuf {
        Path::new(self.spectrum.as_str()).join(self.file_name())
    }

    /// Compact identifier used in score files, e.g. `003_left_nir_07`.
    pub fn id(&self) -> String {
        format!(
            "{:03}_{}_{}_{:02}",
            self.subject,
            self.eye,
            self.spectrum.as_str(),
            self.index
        )
    }

    /// Parses a file name of the documented layout for the given spectrum.
    pub fn parse_file_name(name: &str, spectrum: Spectrum) -> Result<Self> {
        let bad = |reason: &str| Error::FileName {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let stem = name
            .strip_suffix(".png")
            .ok_or_else(|| bad("expected a .png extension"))?;
        let parts: Vec<&str> = stem.split('_').collect();
        let [subject, eye, index] = parts.as_slice() else {
            return Err(bad("expected <subject>_<eye>_<index>"));
        };
        let subject: u32 = subject.parse().map_err(|_| bad("subject is not an integer"))?;
        let eye: Eye = eye.parse().map_err(|_| bad("eye must be left or right"))?;
        let index: u8 = index.parse().map_err(|_| bad("index is not an integer"))?;
        SampleKey::new(subject, eye, spectrum, index).map_err(|e| bad(&e.to_string()))
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.subject, self.eye, self.spectrum, self.index
        )
    }
}

/// Number of training samples out of `n` per eye: `ceil(2n/3)`, i.e. 10 of 15.
pub fn train_count(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    /// Relative to the index root.
    pub path: PathBuf,
    pub split: Split,
}

/// Immutable-after-construction catalog of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    root: PathBuf,
    kind: DatasetKind,
    entries: BTreeMap<SampleKey, IndexEntry>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, kind: DatasetKind) -> Self {
        DatasetIndex {
            root: root.into(),
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: SampleKey, path: PathBuf, split: Split) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateSample(key));
        }
        self.entries.insert(key, IndexEntry { path, split });
        Ok(())
    }

    pub fn get(&self, key: &SampleKey) -> Option<&IndexEntry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &SampleKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SampleKey, &IndexEntry)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SampleKey> {
        self.entries.keys()
    }

    pub fn path_of(&self, key: &SampleKey) -> Option<PathBuf> {
        self.entries.get(key).map(|e| self.root.join(&e.path))
    }

    pub fn split_of(&self, key: &SampleKey) -> Option<Split> {
        self.entries.get(key).map(|e| e.split)
    }

    pub fn load(&self, key: &SampleKey) -> Result<Raster> {
        let path = self
            .path_of(key)
            .ok_or_else(|| Error::InvalidInput(format!("{key} is not in the index")))?;
        Raster::load_png(path)
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.entries.keys().map(|k| k.subject).collect();
        s.dedup();
        s
    }

    /// Keys of one (subject, eye, spectrum), sorted by sample index.
    pub fn samples_of(&self, subject: u32, eye: Eye, spectrum: Spectrum) -> Vec<SampleKey> {
        self.entries
            .keys()
            .filter(|k| k.subject == subject && k.eye == eye && k.spectrum == spectrum)
            .copied()
            .collect()
    }

    /// Every NIR key has a VIS twin and vice versa.
    pub fn check_pairs(&self) -> Result<()> {
        for key in self.entries.keys() {
            let twin = match key.spectrum {
                Spectrum::Nir => Spectrum::Vis,
                Spectrum::Vis => Spectrum::Nir,
                Spectrum::Gray => continue,
            };
            let twin_key = key.with_spectrum(twin);
            if !self.entries.contains_key(&twin_key) {
                return Err(Error::Pairing {
                    key: twin_key,
                    missing: twin.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Deterministic partition by the recorded split of every key.
    pub fn split(&self) -> (DatasetIndex, DatasetIndex) {
        let mut train = DatasetIndex::new(self.root.clone(), self.kind);
        let mut test = DatasetIndex::new(self.root.clone(), self.kind);
        for (k, e) in &self.entries {
            let dst = match e.split {
                Split::Train => &mut train,
                Split::Test => &mut test,
            };
            dst.entries.insert(*k, e.clone());
        }
        (train, test)
    }

    /// Re-derives every split from the sample counts (`ceil(2n/3)` rule per eye).
    fn assign_splits(&mut self) {
        let mut counts: BTreeMap<(u32, Eye), u8> = BTreeMap::new();
        for k in self.entries.keys() {
            let c = counts.entry((k.subject, k.eye)).or_default();
            *c = (*c).max(k.index);
        }
        for (k, e) in self.entries.iter_mut() {
            let n = counts[&(k.subject, k.eye)] as usize;
            e.split = if (k.index as usize) <= train_count(n) {
                Split::Train
            } else {
                Split::Test
            };
        }
    }

    pub fn write_manifest(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        w.write_record(["subject", "eye", "spectrum", "index", "split", "path"])
            .map_err(csv_err)?;
        for (k, e) in &self.entries {
            w.write_record([
                k.subject.to_string(),
                k.eye.to_string(),
                k.spectrum.as_str().to_string(),
                k.index.to_string(),
                e.split.as_str().to_string(),
                e.path.to_string_lossy().replace('\\', "/"),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read_manifest(root: impl Into<PathBuf>, kind: DatasetKind) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let mut r = csv::Reader::from_path(&path).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        let header = r
            .headers()
            .map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?
            .clone();
        if header.iter().collect::<Vec<_>>() != ["subject", "eye", "spectrum", "index", "split", "path"]
        {
            return Err(Error::Malformed {
                path,
                reason: "unexpected manifest header".into(),
            });
        }
        let mut index = DatasetIndex::new(root, kind);
        for rec in r.records() {
            let rec = rec.map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?;
            let malformed = |reason: String| Error::Malformed {
                path: path.clone(),
                reason,
            };
            let subject: u32 = rec[0].parse().map_err(|_| malformed(format!("subject {:?}", &rec[0])))?;
            let eye: Eye = rec[1].parse().map_err(|e: Error| malformed(e.to_string()))?;
            let spectrum: Spectrum = rec[2].parse().map_err(|e: Error| malformed(e.to_string()))?;
            let idx: u8 = rec[3].parse().map_err(|_| malformed(format!("index {:?}", &rec[3])))?;
            let split: Split = rec[4].parse().map_err(|e: Error| malformed(e.to_string()))?;
            let key = SampleKey::new(subject, eye, spectrum, idx).map_err(|e| malformed(e.to_string()))?;
            index.insert(key, PathBuf::from(&rec[5]), split)?;
        }
        index.check_pairs()?;
        Ok(index)
    }
}

/// Catalogs a dataset laid out as `root/{nir,vis}/<subject>_<eye>_<index>.png`.
///
/// Pixels are not decoded here. Every NIR sample must have its VIS twin and
/// the 10/5 split (scaled as `ceil(2n/3)` for other counts) is applied.
pub fn ingest(root: impl AsRef<Path>, kind: DatasetKind) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let mut index = DatasetIndex::new(root, kind);
    for spectrum in [Spectrum::Nir, Spectrum::Vis] {
        let dir = root.join(spectrum.as_str());
        let rd = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut names = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        for name in names {
            let key = SampleKey::parse_file_name(&name, spectrum)?;
            index.insert(key, key.relative_path(), Split::Train)?;
        }
    }
    index.check_pairs()?;
    index.assign_splits();
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Maximum absolute translation per axis, pixels.
    pub max_shift_px: f64,
    /// Maximum absolute brightness offset as a fraction of full scale.
    pub brightness: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            max_shift_px: 3.0,
            brightness: 0.04,
        }
    }
}

/// Parameters of the synthetic paired-spectrum dataset. Generation is a pure
/// function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: u32,
    #[serde(default = "default_samples")]
    pub samples_per_eye: u8,
    pub seed: u64,
    pub kind: DatasetKind,
    #[serde(default)]
    pub jitter: Jitter,
}

fn default_samples() -> u8 {
    MAX_SAMPLES_PER_EYE
}

impl SyntheticSpec {
    pub fn new(n_subjects: u32, seed: u64, kind: DatasetKind) -> Self {
        SyntheticSpec {
            n_subjects,
            samples_per_eye: MAX_SAMPLES_PER_EYE,
            seed,
            kind,
            jitter: Jitter::default(),
        }
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.kind.synthetic_dims()
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidInput("synthetic set needs at least 2 subjects".into()));
        }
        if self.samples_per_eye < 2 || self.samples_per_eye > MAX_SAMPLES_PER_EYE {
            return Err(Error::InvalidInput(format!(
                "samples_per_eye must be in [2, {MAX_SAMPLES_PER_EYE}]"
            )));
        }
        if !(self.jitter.max_shift_px >= 0.0 && self.jitter.brightness >= 0.0) {
            return Err(Error::InvalidInput("jitter bounds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer; decorrelates the seeds of neighbouring identities.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone)]
struct Grating {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    inv_two_sigma2: f64,
    amp: f64,
}

/// A wavy dark line: points whose rotated vertical offset from
/// `offset + amp * sin(freq * u + phase)` is small.
#[derive(Debug, Clone)]
struct Vessel {
    cos_t: f64,
    sin_t: f64,
    offset: f64,
    amp: f64,
    freq: f64,
    phase: f64,
    inv_width2: f64,
    strength: f64,
}

const VESSELS: usize = 40;

/// Identity-keyed texture evaluated analytically, so translations are exact.
#[derive(Debug, Clone)]
struct IdentityTexture {
    gratings: Vec<Grating>,
    blobs: Vec<Blob>,
    vessels: Vec<Vessel>,
}

impl IdentityTexture {
    fn new(seed: u64, subject: u32, eye: Eye, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[1, subject as u64, eye as u64]));
        let (w, h) = (width as f64, height as f64);
        let gratings = (0..8)
            .map(|_| {
                let wavelength = rng.random_range(24.0..72.0);
                let theta: f64 = rng.random_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                Grating {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amp: rng.random_range(0.03..0.07),
                }
            })
            .collect();
        let blobs = (0..6)
            .map(|_| {
                let sigma: f64 = rng.random_range(8.0..24.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Blob {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                    amp: sign * rng.random_range(0.12..0.28),
                }
            })
            .collect();
        let diag = (w * w + h * h).sqrt();
        let vessels = (0..VESSELS)
            .map(|_| {
                let theta: f64 = rng.random_range(0.0..PI);
                let width: f64 = rng.random_range(1.5..3.5);
                Vessel {
                    cos_t: theta.cos(),
                    sin_t: theta.sin(),
                    offset: rng.random_range(-0.35 * diag..0.35 * diag),
                    amp: rng.random_range(4.0..18.0),
                    freq: 2.0 * PI / rng.random_range(40.0..140.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                    inv_width2: 1.0 / (width * width),
                    strength: rng.random_range(0.6..1.0),
                }
            })
            .collect();
        IdentityTexture {
            gratings,
            blobs,
            vessels,
        }
    }

    /// Base intensity in roughly [0, 1] before clamping.
    fn base(&self, x: f64, y: f64) -> f64 {
        let g: f64 = self
            .gratings
            .iter()
            .map(|g| g.amp * (g.kx * x + g.ky * y + g.phase).sin())
            .sum();
        let b: f64 = self
            .blobs
            .iter()
            .map(|b| {
                let d2 = (x - b.cx).powi(2) + (y - b.cy).powi(2);
                b.amp * (-d2 * b.inv_two_sigma2).exp()
            })
            .sum();
        0.5 + g + b
    }

    /// Vessel opacity in [0, 1] around the image centre `(cx, cy)`.
    fn vessel(&self, x: f64, y: f64, cx: f64, cy: f64) -> f64 {
        let (dx, dy) = (x - cx, y - cy);
        let mut v: f64 = 0.0;
        for s in &self.vessels {
            let u = dx * s.cos_t + dy * s.sin_t;
            let w = -dx * s.sin_t + dy * s.cos_t;
            let far = w - s.offset;
            if far.abs() > s.amp + 12.0 {
                continue;
            }
            let d = far - s.amp * (s.freq * u + s.phase).sin();
            v = v.max(s.strength * (-d * d * s.inv_width2).exp());
        }
        v
    }
}

/// Pixelwise VIS rendering of a base intensity `u` in [0, 1] and vessel
/// opacity `v`. The R channel is monotone in `u`, so the map is invertible
/// away from vessels; luma is not monotone in `u`.
fn vis_pixel(u: f64, v: f64) -> [u8; 3] {
    let r = u.powf(0.7);
    let g = 0.5 - 0.5 * (3.0 * PI * u).cos();
    let b = 1.0 - u.powf(1.8);
    let r = r * (1.0 - 0.35 * v);
    let g = g * (1.0 - 0.8 * v);
    let b = b * (1.0 - 0.8 * v);
    [to_u8(r), to_u8(g), to_u8(b)]
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy)]
struct SampleJitter {
    dx: f64,
    dy: f64,
    brightness: f64,
}

fn sample_jitter(spec: &SyntheticSpec, subject: u32, eye: Eye, index: u8) -> SampleJitter {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        spec.seed,
        &[2, subject as u64, eye as u64, index as u64],
    ));
    let j = spec.jitter;
    let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    SampleJitter {
        dx: sym(j.max_shift_px),
        dy: sym(j.max_shift_px),
        brightness: sym(j.brightness),
    }
}

/// Renders the aligned (NIR, VIS) pair of one sample.
pub fn render_synthetic_pair(spec: &SyntheticSpec, subject: u32, eye: Eye, index: u8) -> (Raster, Raster) {
    let (w, h) = spec.image_dims();
    let tex = IdentityTexture::new(spec.seed, subject, eye, w, h);
    render_with(&tex, spec, subject, eye, index)
}

fn render_with(
    tex: &IdentityTexture,
    spec: &SyntheticSpec,
    subject: u32,
    eye: Eye,
    index: u8,
) -> (Raster, Raster) {
    let (w, h) = spec.image_dims();
    let j = sample_jitter(spec, subject, eye, index);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut nir = Raster::zeros(w, h, 1);
    let mut vis = Raster::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 - j.dx;
            let sy = y as f64 - j.dy;
            let u = (tex.base(sx, sy) + j.brightness).clamp(0.0, 1.0);
            nir.set(x, y, 0, to_u8(u));
            let v = tex.vessel(sx, sy, cx, cy);
            let rgb = vis_pixel(u, v);
            for (c, val) in rgb.into_iter().enumerate() {
                vis.set(x, y, c, val);
            }
        }
    }
    (nir, vis)
}

/// Writes the synthetic dataset under `out` (layout as [`ingest`]) plus its manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<DatasetIndex> {
    spec.validate()?;
    let out = out.as_ref();
    let (w, h) = spec.image_dims();
    let mut index = DatasetIndex::new(out, spec.kind);
    for spectrum in [Spectrum::Nir, Spectrum::Vis] {
        let dir = out.join(spectrum.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let n_train = train_count(spec.samples_per_eye as usize);
    for subject in 1..=spec.n_subjects {
        for eye in Eye::BOTH {
            let tex = IdentityTexture::new(spec.seed, subject, eye, w, h);
            for idx in 1..=spec.samples_per_eye {
                let (nir, vis) = render_with(&tex, spec, subject, eye, idx);
                let split = if (idx as usize) <= n_train {
                    Split::Train
                } else {
                    Split::Test
                };
                for (spectrum, img) in [(Spectrum::Nir, &nir), (Spectrum::Vis, &vis)] {
                    let key = SampleKey::new(subject, eye, spectrum, idx)?;
                    let rel = key.relative_path();
                    img.save_png(out.join(&rel))?;
                    index.insert(key, rel, split)?;
                }
            }
        }
    }
    index.write_manifest()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(root: &Path, key: SampleKey) {
        let p = root.join(key.relative_path());
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"").unwrap();
    }

    fn complete_layout(root: &Path, subjects: u32, per_eye: u8) {
        for s in 1..=subjects {
            for eye in Eye::BOTH {
                for spectrum in [Spectrum::Nir, Spectrum::Vis] {
                    for i in 1..=per_eye {
                        touch(root, SampleKey::new(s, eye, spectrum, i).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn file_name_roundtrip() {
        let k = SampleKey::new(3, Eye::Left, Spectrum::Vis, 7).unwrap();
        assert_eq!(k.file_name(), "003_left_07.png");
        assert_eq!(SampleKey::parse_file_name("003_left_07.png", Spectrum::Vis).unwrap(), k);
    }

    #[test]
    fn malformed_file_names_rejected() {
        for name in ["003_left_07.jpg", "003_07.png", "abc_left_07.png", "003_up_07.png", "003_left_16.png", "000_left_01.png"] {
            assert!(
                matches!(SampleKey::parse_file_name(name, Spectrum::Nir), Err(Error::FileName { .. })),
                "{name}"
            );
        }
    }

    #[test]
    fn sample_index_bounds() {
        assert!(SampleKey::new(1, Eye::Left, Spectrum::Nir, 0).is_err());
        assert!(SampleKey::new(1, Eye::Left, Spectrum::Nir, 16).is_err());
        assert!(SampleKey::new(1, Eye::Left, Spectrum::Nir, 15).is_ok());
    }

    #[test]
    fn ingest_one_complete_subject() {
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 1, 15);
        let index = ingest(dir.path(), DatasetKind::Periocular).unwrap();
        assert_eq!(index.len(), 60);
        let (train, test) = index.split();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 20);
        for (k, _) in train.iter() {
            assert!(k.index <= 10);
        }
        for (k, _) in test.iter() {
            assert!(k.index >= 11);
        }
    }

    #[test]
    fn ingest_full_polyu_layout_counts() {
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 209, 15);
        let index = ingest(dir.path(), DatasetKind::Periocular).unwrap();
        assert_eq!(index.len(), 12_540);
        assert_eq!(index.subjects().len(), 209);
    }

    #[test]
    fn ingest_reports_missing_counterpart() {
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 3, 15);
        let missing = SampleKey::new(3, Eye::Left, Spectrum::Vis, 7).unwrap();
        fs::remove_file(dir.path().join(missing.relative_path())).unwrap();
        match ingest(dir.path(), DatasetKind::Periocular) {
            Err(Error::Pairing { key, .. }) => {
                assert_eq!(key, missing);
                assert_eq!(key.to_string(), "(3, left, VIS, 7)");
            }
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_malformed_name() {
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 1, 2);
        fs::write(dir.path().join("nir").join("oops.png"), b"").unwrap();
        assert!(matches!(
            ingest(dir.path(), DatasetKind::Periocular),
            Err(Error::FileName { .. })
        ));
    }

    #[test]
    fn split_rule_scales() {
        assert_eq!(train_count(15), 10);
        assert_eq!(train_count(6), 4);
        assert_eq!(train_count(3), 2);
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 2, 6);
        let index = ingest(dir.path(), DatasetKind::Iris).unwrap();
        let (train, test) = index.split();
        assert_eq!(train.len(), 2 * 2 * 2 * 4);
        assert_eq!(test.len(), 2 * 2 * 2 * 2);
    }

    #[test]
    fn split_of_empty_index() {
        let index = DatasetIndex::new("/nowhere", DatasetKind::Periocular);
        let (a, b) = index.split();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        complete_layout(dir.path(), 2, 3);
        let index = ingest(dir.path(), DatasetKind::Periocular).unwrap();
        index.write_manifest().unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.starts_with("subject,eye,spectrum,index,split,path\n"));
        assert!(text.contains("1,left,nir,1,train,nir/001_left_01.png"));
        let back = DatasetIndex::read_manifest(dir.path(), DatasetKind::Periocular).unwrap();
        assert_eq!(back, index);
    }

    #[test]
    fn synthetic_rejects_degenerate_specs() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(1, 0, DatasetKind::Periocular);
        assert!(generate_synthetic(&spec, dir.path()).is_err());
        spec.n_subjects = 2;
        spec.samples_per_eye = 1;
        assert!(generate_synthetic(&spec, dir.path()).is_err());
    }

    #[test]
    fn synthetic_jitter_changes_pixels_but_pairs_align() {
        let spec = SyntheticSpec::new(2, 11, DatasetKind::Periocular);
        let (n1, v1) = render_synthetic_pair(&spec, 1, Eye::Left, 1);
        let (n2, _) = render_synthetic_pair(&spec, 1, Eye::Left, 2);
        assert_ne!(n1, n2);
        assert_eq!((n1.width(), n1.height(), n1.channels()), (256, 256, 1));
        assert_eq!((v1.width(), v1.height(), v1.channels()), (256, 256, 3));
        let iris = SyntheticSpec::new(2, 11, DatasetKind::Iris);
        let (n, v) = render_synthetic_pair(&iris, 2, Eye::Right, 3);
        assert_eq!((n.width(), n.height()), (512, 64));
        assert_eq!((v.width(), v.height()), (512, 64));
    }
}
