//! Checkpoints are plain tar files holding JSON metadata and var-store streams.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Cursor, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tch::nn::VarStore;

use crate::error::{NetError, Result};

fn archive_err(path: &Path, reason: impl ToString) -> NetError {
    NetError::Archive {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Default)]
pub struct ArchiveWriter {
    members: Vec<(String, Vec<u8>)>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| NetError::Config(e.to_string()))?;
        self.members.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn vars(&mut self, name: &str, vs: &VarStore) -> Result<()> {
        let mut buf = Vec::new();
        vs.save_to_stream(&mut buf)?;
        self.members.push((name.to_string(), buf));
        Ok(())
    }

    /// Writes atomically: a sibling temp file renamed into place.
    pub fn write(self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| archive_err(path, e))?;
        }
        let tmp = path.with_extension("partial");
        {
            let file = File::create(&tmp).map_err(|e| archive_err(&tmp, e))?;
            let mut builder = tar::Builder::new(file);
            for (name, bytes) in &self.members {
                let mut header = tar::Header::new_gnu();
                header.set_size(bytes.len() as u64);
                header.set_mode(0o644);
                header.set_mtime(0);
                header.set_cksum();
                builder
                    .append_data(&mut header, name, bytes.as_slice())
                    .map_err(|e| archive_err(&tmp, e))?;
            }
            builder.into_inner().map_err(|e| archive_err(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| archive_err(path, e))
    }
}

pub struct ArchiveReader {
    path: std::path::PathBuf,
    members: BTreeMap<String, Vec<u8>>,
}

impl ArchiveReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| archive_err(path, e))?;
        let mut ar = tar::Archive::new(file);
        let mut members = BTreeMap::new();
        for entry in ar.entries().map_err(|e| archive_err(path, e))? {
            let mut entry = entry.map_err(|e| archive_err(path, e))?;
            let name = entry
                .path()
                .map_err(|e| archive_err(path, e))?
                .to_string_lossy()
                .into_owned();
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(|e| archive_err(path, e))?;
            members.insert(name, buf);
        }
        Ok(ArchiveReader {
            path: path.to_path_buf(),
            members,
        })
    }

    fn member(&self, name: &str) -> Result<&[u8]> {
        self.members
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| archive_err(&self.path, format!("missing member {name}")))
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(self.member(name)?).map_err(|e| archive_err(&self.path, format!("{name}: {e}")))
    }

    pub fn load_vars(&self, name: &str, vs: &mut VarStore) -> Result<()> {
        vs.load_from_stream(Cursor::new(self.member(name)?))?;
        Ok(())
    }
}
