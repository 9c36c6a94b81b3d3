//! Content-addressed pipeline stages.
//!
//! A stage's key hashes its name, version, parameters and the output digests
//! of its upstream stages. Outputs live in `<out>/stages/<name>-<key16>/`
//! and carry a `stage.json` record; a stage whose record exists is skipped
//! unless forced. Work happens in a `.partial` directory that is renamed on
//! success and moved under `<out>/failed/` on error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RECORD_FILE: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub version: u32,
    pub key: String,
    pub config_hash: String,
    pub seed: u64,
    pub params: serde_json::Value,
    /// Upstream stage name to output digest.
    pub inputs: BTreeMap<String, String>,
    /// Relative path to SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
    pub digest: String,
}

/// A completed stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub dir: PathBuf,
    pub digest: String,
}

impl Stage {
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Handed to a stage body: where to write, and the header lines for CSVs.
pub struct StageCtx<'a> {
    pub dir: &'a Path,
    pub provenance: Vec<(String, String)>,
}

impl StageCtx<'_> {
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    /// Writes CSV `rows` under `header`, preceded by `# k=v` provenance lines.
    pub fn write_csv(&self, rel: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(rel);
        write_csv(&path, &self.provenance, header, rows)?;
        Ok(path)
    }
}

pub fn write_csv(path: &Path, provenance: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for (k, v) in provenance {
        writeln!(f, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]: provenance map and records.
pub fn read_csv(path: &Path) -> Result<(BTreeMap<String, String>, Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut prov = BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(c) => {
                if let Some((k, v)) = c.trim().split_once('=') {
                    prov.insert(k.to_string(), v.to_string());
                }
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().with_context(|| format!("{}: header", path.display()))?;
    let header: Vec<String> = header.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("{}: malformed row", path.display()))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((prov, header, rows))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Relative path to digest for every file under `dir`, except the record.
pub fn dir_files(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if e.file_type()?.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel != RECORD_FILE {
                    out.insert(rel, file_digest(&p)?);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn digest_of(files: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in files {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

pub struct StageRunner {
    pub root: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub force: bool,
    done: BTreeMap<String, Stage>,
}

impl StageRunner {
    pub fn new(root: impl Into<PathBuf>, config_hash: String, seed: u64, force: bool) -> Self {
        StageRunner {
            root: root.into(),
            config_hash,
            seed,
            force,
            done: BTreeMap::new(),
        }
    }

    /// The stage already produced in this session, if any.
    pub fn get(&self, name: &str) -> Option<&Stage> {
        self.done.get(name)
    }

    pub fn key(name: &str, version: u32, params: &serde_json::Value, inputs: &[&Stage]) -> String {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(version.to_le_bytes());
        h.update(serde_json::to_vec(params).expect("json value"));
        for s in inputs {
            h.update([0]);
            h.update(s.name.as_bytes());
            h.update(s.digest.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Runs `body` unless a completed output with the same key exists.
    pub fn run<P: Serialize>(
        &mut self,
        name: &str,
        version: u32,
        params: &P,
        inputs: &[&Stage],
        body: impl FnOnce(&StageCtx) -> Result<()>,
    ) -> Result<Stage> {
        if let Some(s) = self.done.get(name) {
            return Ok(s.clone());
        }
        let params = serde_json::to_value(params)?;
        let key = Self::key(name, version, &params, inputs);
        let stages = self.root.join("stages");
        let dir = stages.join(format!("{name}-{}", &key[..16]));
        let record_path = dir.join(RECORD_FILE);

        if record_path.is_file() && !self.force {
            let rec: StageRecord = serde_json::from_slice(&fs::read(&record_path)?)
                .with_context(|| format!("stage {name}: unreadable {}", record_path.display()))?;
            log::info!("stage {name}: up to date ({})", dir.display());
            let s = Stage {
                name: name.to_string(),
                dir,
                digest: rec.digest,
            };
            self.done.insert(name.to_string(), s.clone());
            return Ok(s);
        }

        log::info!("stage {name}: running");
        let partial = stages.join(format!("{name}-{}.partial", &key[..16]));
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
        }
        fs::create_dir_all(&partial)?;
        let inputs_map: BTreeMap<String, String> =
            inputs.iter().map(|s| (s.name.clone(), s.digest.clone())).collect();
        let mut provenance = vec![
            ("config_hash".to_string(), self.config_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("stage".to_string(), format!("{name}@{version}")),
        ];
        provenance.extend(inputs_map.iter().map(|(k, v)| (format!("input.{k}"), v.clone())));
        let ctx = StageCtx {
            dir: &partial,
            provenance,
        };

        let outcome = body(&ctx).and_then(|()| {
            let files = dir_files(&partial)?;
            let digest = digest_of(&files);
            let rec = StageRecord {
                name: name.to_string(),
                version,
                key: key.clone(),
                config_hash: self.config_hash.clone(),
                seed: self.seed,
                params,
                inputs: inputs_map,
                files,
                digest: digest.clone(),
            };
            fs::write(partial.join(RECORD_FILE), serde_json::to_vec_pretty(&rec)?)?;
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::rename(&partial, &dir)?;
            Ok(digest)
        });
        match outcome {
            Ok(digest) => {
                let s = Stage {
                    name: name.to_string(),
                    dir,
                    digest,
                };
                self.done.insert(name.to_string(), s.clone());
                Ok(s)
            }
            Err(e) => {
                let failed = self.root.join("failed").join(format!("{name}-{}", &key[..16]));
                let kept = (|| -> std::io::Result<()> {
                    if failed.exists() {
                        fs::remove_dir_all(&failed)?;
                    }
                    fs::create_dir_all(failed.parent().expect("has parent"))?;
                    fs::rename(&partial, &failed)
                })();
                match kept {
                    Ok(()) => Err(e.context(format!(
                        "stage {name} failed; partial outputs kept in {}",
                        failed.display()
                    ))),
                    Err(_) => Err(e.context(format!("stage {name} failed"))),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_done_and_keeps_failures() {
        let tmp = tempfile::tempdir().unwrap();
        let mut r = StageRunner::new(tmp.path(), "h".into(), 1, false);
        let mut calls = 0;
        let a = r
            .run("a", 1, &3, &[], |c| {
                calls += 1;
                c.write_csv("x.csv", &["v"], &[vec!["1".into()]])?;
                Ok(())
            })
            .unwrap();
        assert_eq!(calls, 1);
        let text = fs::read_to_string(a.path("x.csv")).unwrap();
        assert!(text.starts_with("# config_hash=h\n# seed=1\n# stage=a@1\n"), "{text}");
        let (prov, header, rows) = read_csv(&a.path("x.csv")).unwrap();
        assert_eq!(prov["stage"], "a@1");
        assert_eq!((header, rows), (vec!["v".to_string()], vec![vec!["1".to_string()]]));

        // New session: found on disk, body not called.
        let mut r2 = StageRunner::new(tmp.path(), "h2".into(), 1, false);
        let a2 = r2.run("a", 1, &3, &[], |_| panic!("should be cached")).unwrap();
        assert_eq!(a2.digest, a.digest);
        assert_eq!(a2.dir, a.dir);

        let err = r2
            .run("b", 1, &0, &[&a2], |c| {
                fs::write(c.path("half"), "x")?;
                anyhow::bail!("boom")
            })
            .unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("stage b failed") && msg.contains("boom"), "{msg}");
        let failed: Vec<_> = fs::read_dir(tmp.path().join("failed")).unwrap().collect();
        assert_eq!(failed.len(), 1);

        let mut forced = StageRunner::new(tmp.path(), "h".into(), 1, true);
        let mut ran = false;
        forced
            .run("a", 1, &3, &[], |c| {
                ran = true;
                c.write_csv("x.csv", &["v"], &[vec!["1".into()]])?;
                Ok(())
            })
            .unwrap();
        assert!(ran);
    }

    #[test]
    fn key_depends_on_inputs() {
        let s = |d: &str| Stage {
            name: "up".into(),
            dir: PathBuf::new(),
            digest: d.into(),
        };
        let p = serde_json::json!({"x": 1});
        assert_ne!(StageRunner::key("n", 1, &p, &[&s("a")]), StageRunner::key("n", 1, &p, &[&s("b")]));
        assert_ne!(StageRunner::key("n", 1, &p, &[]), StageRunner::key("n", 2, &p, &[]));
    }
}
