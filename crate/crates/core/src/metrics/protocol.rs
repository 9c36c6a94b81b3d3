//! Genuine/impostor comparison lists over the test split.
//!
//! Baseline protocols treat every (subject, eye) as its own user. CNN
//! protocols keep eyes apart; filter the result with [`Comparison::eye`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scores::Label;
use crate::dataset::{DatasetIndex, Eye, SampleKey, Spectrum, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Per user, every unordered pair `{i, j}`, `i < j`, of test images;
    /// image `i` taken from spectrum A and image `j` from spectrum B.
    BaselineGenuine,
    /// First test image of each user against the second test image of every other user.
    BaselineImpostor,
    /// Per subject and eye, every test image in A against every test image in B.
    CnnGenuine,
    /// Per eye, image `k` of each subject against image `k` of every other subject.
    CnnImpostor,
}

impl ProtocolKind {
    pub fn label(self) -> Label {
        match self {
            ProtocolKind::BaselineGenuine | ProtocolKind::CnnGenuine => Label::Genuine,
            ProtocolKind::BaselineImpostor | ProtocolKind::CnnImpostor => Label::Impostor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Comparison {
    pub a: SampleKey,
    pub b: SampleKey,
    pub label: Label,
}

impl Comparison {
    pub fn pair_id(&self) -> String {
        format!("{}|{}", self.a.id(), self.b.id())
    }

    /// The eye of the probe side.
    pub fn eye(&self) -> Eye {
        self.a.eye
    }
}

/// Sorted test sample indices of every (subject, eye), all users with the same count.
fn test_indices(index: &DatasetIndex) -> Result<(BTreeMap<(u32, Eye), Vec<u8>>, usize)> {
    let mut users: BTreeMap<(u32, Eye), Vec<u8>> = BTreeMap::new();
    for (k, e) in index.iter() {
        if e.split == Split::Test && k.spectrum == Spectrum::Nir {
            users.entry((k.subject, k.eye)).or_default().push(k.index);
        }
    }
    if users.is_empty() {
        // Indexes without NIR entries (e.g. VIS-only) fall back to VIS.
        for (k, e) in index.iter() {
            if e.split == Split::Test && k.spectrum == Spectrum::Vis {
                users.entry((k.subject, k.eye)).or_default().push(k.index);
            }
        }
    }
    let mut n = None;
    for (user, idx) in users.iter_mut() {
        idx.sort_unstable();
        idx.dedup();
        match n {
            None => n = Some(idx.len()),
            Some(m) if m != idx.len() => {
                return Err(Error::InsufficientImages(format!(
                    "user {user:?} has {} test images, others have {m}",
                    idx.len()
                )))
            }
            _ => {}
        }
    }
    Ok((users, n.unwrap_or(0)))
}

fn key(subject: u32, eye: Eye, spectrum: Spectrum, index: u8) -> SampleKey {
    SampleKey {
        subject,
        eye,
        spectrum,
        index,
    }
}

/// Builds one comparison list; `a`/`b` choose the spectrum of each side.
/// GRAY keys refer to images derived from the VIS entries.
pub fn build_protocol(kind: ProtocolKind, test: &DatasetIndex, a: Spectrum, b: Spectrum) -> Result<Vec<Comparison>> {
    let (users, n) = test_indices(test)?;
    if users.len() < 2 {
        return Err(Error::InsufficientImages(format!(
            "{} users in the test index, need at least 2",
            users.len()
        )));
    }
    let need = match kind {
        ProtocolKind::BaselineGenuine | ProtocolKind::BaselineImpostor => 2,
        ProtocolKind::CnnGenuine | ProtocolKind::CnnImpostor => 1,
    };
    if n < need {
        return Err(Error::InsufficientImages(format!(
            "{n} test images per eye, {kind:?} needs {need}"
        )));
    }
    let label = kind.label();
    let mut out = Vec::new();
    match kind {
        ProtocolKind::BaselineGenuine => {
            for (&(s, eye), idx) in &users {
                for i in 0..idx.len() {
                    for j in i + 1..idx.len() {
                        out.push(Comparison {
                            a: key(s, eye, a, idx[i]),
                            b: key(s, eye, b, idx[j]),
                            label,
                        });
                    }
                }
            }
        }
        ProtocolKind::BaselineImpostor => {
            for (&(s, eye), idx) in &users {
                for (&(t, eye_t), idx_t) in &users {
                    if (s, eye) == (t, eye_t) {
                        continue;
                    }
                    out.push(Comparison {
                        a: key(s, eye, a, idx[0]),
                        b: key(t, eye_t, b, idx_t[1]),
                        label,
                    });
                }
            }
        }
        ProtocolKind::CnnGenuine => {
            for (&(s, eye), idx) in &users {
                for &i in idx {
                    for &j in idx {
                        out.push(Comparison {
                            a: key(s, eye, a, i),
                            b: key(s, eye, b, j),
                            label,
                        });
                    }
                }
            }
        }
        ProtocolKind::CnnImpostor => {
            for (&(s, eye), idx) in &users {
                for (&(t, eye_t), idx_t) in &users {
                    if eye_t != eye || t == s {
                        continue;
                    }
                    for k in 0..n {
                        out.push(Comparison {
                            a: key(s, eye, a, idx[k]),
                            b: key(t, eye, b, idx_t[k]),
                            label,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    pub(crate) fn test_index(subjects: u32, per_eye: u8) -> DatasetIndex {
        let mut idx = DatasetIndex::new("/virtual", crate::dataset::DatasetKind::Periocular);
        for s in 1..=subjects {
            for eye in Eye::BOTH {
                for sp in [Spectrum::Nir, Spectrum::Vis] {
                    for i in 0..per_eye {
                        let k = SampleKey::new(s, eye, sp, 11 + i).unwrap();
                        idx.insert(k, PathBuf::from(k.file_name()), Split::Test).unwrap();
                    }
                }
            }
        }
        idx
    }

    #[test]
    fn two_subject_counts() {
        let idx = test_index(2, 5);
        let (nir, vis) = (Spectrum::Nir, Spectrum::Vis);
        assert_eq!(build_protocol(ProtocolKind::BaselineGenuine, &idx, nir, vis).unwrap().len(), 40);
        assert_eq!(build_protocol(ProtocolKind::BaselineImpostor, &idx, nir, vis).unwrap().len(), 12);
        let cg = build_protocol(ProtocolKind::CnnGenuine, &idx, nir, vis).unwrap();
        let ci = build_protocol(ProtocolKind::CnnImpostor, &idx, nir, vis).unwrap();
        for eye in Eye::BOTH {
            assert_eq!(cg.iter().filter(|c| c.eye() == eye).count(), 50);
            assert_eq!(ci.iter().filter(|c| c.eye() == eye).count(), 10);
        }
    }

    #[test]
    fn labels_and_identity_relations() {
        let idx = test_index(3, 5);
        for kind in [
            ProtocolKind::BaselineGenuine,
            ProtocolKind::BaselineImpostor,
            ProtocolKind::CnnGenuine,
            ProtocolKind::CnnImpostor,
        ] {
            for c in build_protocol(kind, &idx, Spectrum::Vis, Spectrum::Nir).unwrap() {
                assert_eq!(c.label, kind.label());
                assert_eq!(c.a.spectrum, Spectrum::Vis);
                assert_eq!(c.b.spectrum, Spectrum::Nir);
                let same_user = (c.a.subject, c.a.eye) == (c.b.subject, c.b.eye);
                assert_eq!(same_user, c.label.is_genuine(), "{kind:?}");
            }
        }
        for c in build_protocol(ProtocolKind::BaselineGenuine, &idx, Spectrum::Nir, Spectrum::Nir).unwrap() {
            assert!(c.a.index < c.b.index);
        }
    }

    #[test]
    fn insufficient_images() {
        let idx = test_index(3, 1);
        assert!(matches!(
            build_protocol(ProtocolKind::BaselineImpostor, &idx, Spectrum::Nir, Spectrum::Nir),
            Err(Error::InsufficientImages(_))
        ));
        assert!(build_protocol(ProtocolKind::CnnImpostor, &idx, Spectrum::Nir, Spectrum::Nir).is_ok());
        let empty = DatasetIndex::new("/virtual", crate::dataset::DatasetKind::Periocular);
        assert!(build_protocol(ProtocolKind::CnnGenuine, &empty, Spectrum::Nir, Spectrum::Nir).is_err());
    }
}
