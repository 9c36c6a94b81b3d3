//! Named comparison protocols such as `cnn:nir-fnir` or `baseline:gray-nir`.

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use ocular_core::dataset::{DatasetIndex, Eye, SampleKey, Spectrum};
use ocular_core::metrics::{build_protocol, Comparison, ProtocolKind};

/// One side of a comparison: a spectrum, real or translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Side {
    pub spectrum: Spectrum,
    pub fake: bool,
}

impl Side {
    pub const fn real(spectrum: Spectrum) -> Self {
        Side { spectrum, fake: false }
    }

    pub const fn fake(spectrum: Spectrum) -> Self {
        Side { spectrum, fake: true }
    }

    /// `nir`, `fnir`, ...
    pub fn tag(&self) -> String {
        format!("{}{}", if self.fake { "f" } else { "" }, self.spectrum.as_str())
    }

    /// Identifier of one image in score files; translated images get an `f:` prefix.
    pub fn sample_id(&self, key: &SampleKey) -> String {
        let key = key.with_spectrum(self.spectrum);
        if self.fake {
            format!("f:{}", key.id())
        } else {
            key.id()
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for Side {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (fake, rest) = match s.strip_prefix('f') {
            Some(r) if r.parse::<Spectrum>().is_ok() => (true, r),
            _ => (false, s.as_str()),
        };
        let spectrum: Spectrum = rest.parse().map_err(|_| anyhow!("unknown image side {s:?}"))?;
        Ok(Side { spectrum, fake })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Eyes as separate users, unordered index pairs.
    Baseline,
    /// Per eye, all cross pairs of one subject.
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProtocolSpec {
    pub family: Family,
    pub a: Side,
    pub b: Side,
}

impl ProtocolSpec {
    pub fn new(family: Family, a: Side, b: Side) -> Self {
        ProtocolSpec { family, a, b }
    }

    /// Genuine then impostor comparisons over the test split. Keys carry the
    /// side spectra.
    pub fn comparisons(&self, test: &DatasetIndex) -> Result<Vec<Comparison>> {
        let (g, i) = match self.family {
            Family::Baseline => (ProtocolKind::BaselineGenuine, ProtocolKind::BaselineImpostor),
            Family::Cnn => (ProtocolKind::CnnGenuine, ProtocolKind::CnnImpostor),
        };
        let mut out = build_protocol(g, test, self.a.spectrum, self.b.spectrum)?;
        out.extend(build_protocol(i, test, self.a.spectrum, self.b.spectrum)?);
        Ok(out)
    }

    /// Comparisons whose probe is in `eye`.
    pub fn comparisons_for(&self, test: &DatasetIndex, eye: Eye) -> Result<Vec<Comparison>> {
        Ok(self.comparisons(test)?.into_iter().filter(|c| c.eye() == eye).collect())
    }

    pub fn pair_id(&self, c: &Comparison) -> String {
        format!("{}|{}", self.a.sample_id(&c.a), self.b.sample_id(&c.b))
    }

    pub fn sides(&self) -> [Side; 2] {
        [self.a, self.b]
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::Baseline => "baseline",
            Family::Cnn => "cnn",
        };
        write!(f, "{fam}:{}-{}", self.a, self.b)
    }
}

impl FromStr for ProtocolSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((fam, sides)) = s.split_once(':') else {
            bail!("protocol {s:?} is not <baseline|cnn>:<side>-<side>");
        };
        let family = match fam.trim() {
            "baseline" => Family::Baseline,
            "cnn" => Family::Cnn,
            other => bail!("unknown protocol family {other:?}"),
        };
        let Some((a, b)) = sides.split_once('-') else {
            bail!("protocol {s:?} is not <baseline|cnn>:<side>-<side>");
        };
        Ok(ProtocolSpec::new(family, a.parse()?, b.parse()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ocular_core::dataset::{Split, MAX_SAMPLES_PER_EYE};
    use std::path::PathBuf;

    #[test]
    fn parse_roundtrip() {
        for s in ["cnn:nir-fnir", "baseline:gray-nir", "cnn:vis-fvis", "baseline:fgray-nir"] {
            assert_eq!(s.parse::<ProtocolSpec>().unwrap().to_string(), s);
        }
        for bad in ["cnn", "cnn:nir", "dcnn:nir-vis", "cnn:nir-xyz", "cnn:f-nir"] {
            assert!(bad.parse::<ProtocolSpec>().is_err(), "{bad}");
        }
        assert_eq!("FNIR".parse::<Side>().unwrap(), Side::fake(Spectrum::Nir));
    }

    #[test]
    fn counts_and_ids() {
        let mut idx = DatasetIndex::new("/x", ocular_core::dataset::DatasetKind::Periocular);
        for s in 1..=3 {
            for eye in Eye::BOTH {
                for i in 1..=MAX_SAMPLES_PER_EYE {
                    let split = if i <= 10 { Split::Train } else { Split::Test };
                    for sp in [Spectrum::Nir, Spectrum::Vis] {
                        let k = SampleKey::new(s, eye, sp, i).unwrap();
                        idx.insert(k, PathBuf::from(k.file_name()), split).unwrap();
                    }
                }
            }
        }
        let (_, test) = idx.split();
        let p: ProtocolSpec = "cnn:nir-fnir".parse().unwrap();
        let left = p.comparisons_for(&test, Eye::Left).unwrap();
        // 3 subjects: 75 genuine, 3*2*5 = 30 impostor per eye.
        assert_eq!(left.len(), 105);
        assert_eq!(left.iter().filter(|c| c.label.is_genuine()).count(), 75);
        let id = p.pair_id(&left[0]);
        assert!(id.starts_with("001_left_nir_11|f:001_left_nir_"), "{id}");
        let b: ProtocolSpec = "baseline:gray-nir".parse().unwrap();
        // 6 users: 60 genuine, 30 impostor.
        assert_eq!(b.comparisons(&test).unwrap().len(), 90);
    }
}
