//! Loads prepared (canvas) images by key, real or translated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use ocular_core::dataset::{DatasetIndex, Eye, SampleKey, Spectrum, Split};
use ocular_core::preprocess::to_gray;
use ocular_core::Raster;

use crate::protocol::Side;

/// Prepared dataset plus the directories holding translated images, one per
/// (target spectrum, eye). Translated files are named like the real ones.
#[derive(Debug, Clone)]
pub struct ImageStore {
    pub index: DatasetIndex,
    fakes: BTreeMap<(Spectrum, Eye), PathBuf>,
}

impl ImageStore {
    pub fn new(index: DatasetIndex) -> Self {
        ImageStore {
            index,
            fakes: BTreeMap::new(),
        }
    }

    pub fn add_fakes(&mut self, spectrum: Spectrum, eye: Eye, dir: impl Into<PathBuf>) {
        self.fakes.insert((spectrum, eye), dir.into());
    }

    pub fn fake_dir(&self, spectrum: Spectrum, eye: Eye) -> Option<&Path> {
        self.fakes.get(&(spectrum, eye)).map(PathBuf::as_path)
    }

    /// The image of `key` (subject, eye, index) as seen from `side`. GRAY is
    /// derived from VIS.
    pub fn load(&self, side: Side, key: &SampleKey) -> Result<Raster> {
        let key = key.with_spectrum(side.spectrum);
        if side.fake {
            let dir = self
                .fake_dir(side.spectrum, key.eye)
                .ok_or_else(|| anyhow!("no translated {} images for the {} eye", side.spectrum, key.eye))?;
            let path = dir.join(key.file_name());
            return Raster::load_png(&path).with_context(|| format!("loading {side} {key}"));
        }
        let img = match side.spectrum {
            Spectrum::Gray => to_gray(&self.index.load(&key.with_spectrum(Spectrum::Vis))?),
            _ => self.index.load(&key)?,
        };
        Ok(img)
    }

    /// Gray version of [`ImageStore::load`], for descriptor matchers.
    pub fn load_gray(&self, side: Side, key: &SampleKey) -> Result<Raster> {
        Ok(to_gray(&self.load(side, key)?))
    }

    /// Sample positions (NIR keys) of one eye and split, sorted.
    pub fn keys(&self, eye: Eye, split: Split) -> Vec<SampleKey> {
        self.index
            .iter()
            .filter(|(k, e)| k.spectrum == Spectrum::Nir && k.eye == eye && e.split == split)
            .map(|(k, _)| *k)
            .collect()
    }
}

/// Copy of `index` restricted to `eyes`.
pub fn filter_eyes(index: &DatasetIndex, eyes: &[Eye]) -> Result<DatasetIndex> {
    let mut out = DatasetIndex::new(index.root(), index.kind());
    for (k, e) in index.iter() {
        if eyes.contains(&k.eye) {
            out.insert(*k, e.path.clone(), e.split)?;
        }
    }
    Ok(out)
}
