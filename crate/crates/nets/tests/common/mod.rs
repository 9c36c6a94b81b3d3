#![allow(dead_code)]

use ocular_core::dataset::{render_synthetic_pair, DatasetKind, Eye, SyntheticSpec};
use ocular_core::preprocess::to_gray;
use ocular_core::Raster;

pub struct Shot {
    pub subject: u32,
    pub index: u8,
    pub nir: Raster,
    /// Gray rendering of the VIS capture.
    pub gray: Raster,
}

pub fn shots(subjects: u32, per: u8, seed: u64) -> Vec<Shot> {
    let spec = SyntheticSpec::new(subjects.max(2), seed, DatasetKind::Periocular);
    let mut out = Vec::new();
    for subject in 1..=subjects {
        for index in 1..=per {
            let (nir, vis) = render_synthetic_pair(&spec, subject, Eye::Left, index);
            out.push(Shot {
                subject,
                index,
                nir,
                gray: to_gray(&vis),
            });
        }
    }
    out
}
