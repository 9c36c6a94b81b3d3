//! Score evaluation and the summary tables.
//!
//! * `summary.csv`: one row per score file with EER and GAR at 10/1/0.1% FAR.
//! * `roc/<system>__<protocol>__<eye>.csv`: ROC vertices.
//! * `table1.csv`: image quality of translated (and untranslated) images.
//! * `table2.csv`: identification accuracy on real vs translated test images.
//! * `report.md`: all of the above as markdown.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ocular_core::metrics::{roc_points, summarize, ScoreSet};
use ocular_nets::identifier::AccuracyDropRow;

use crate::stage::{read_csv, write_csv};

/// A score file and what it measures, from its `# system=`, `# protocol=` and
/// `# eye=` header lines (file stem and blanks when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub path: PathBuf,
    pub system: String,
    pub protocol: String,
    pub eye: String,
}

impl ScoreFile {
    pub fn describe(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut f = ScoreFile {
            path,
            system: stem,
            protocol: String::new(),
            eye: String::new(),
        };
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].trim().split_once('=') {
                match k {
                    "system" => f.system = v.to_string(),
                    "protocol" => f.protocol = v.to_string(),
                    "eye" => f.eye = v.to_string(),
                    _ => {}
                }
            }
        }
        Ok(f)
    }

    pub fn label(&self) -> String {
        [self.system.as_str(), self.protocol.as_str(), self.eye.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.replace([':', '/', ' '], "_"))
            .collect::<Vec<_>>()
            .join("__")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub system: String,
    pub protocol: String,
    pub eye: String,
    pub eer: f64,
    pub gar_at_10: f64,
    pub gar_at_1: f64,
    pub gar_at_01: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "system",
    "protocol",
    "eye",
    "eer",
    "gar_at_far_10",
    "gar_at_far_1",
    "gar_at_far_0.1",
    "n_genuine",
    "n_impostor",
];

impl SummaryRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.system.clone(),
            self.protocol.clone(),
            self.eye.clone(),
            self.eer.to_string(),
            self.gar_at_10.to_string(),
            self.gar_at_1.to_string(),
            self.gar_at_01.to_string(),
            self.n_genuine.to_string(),
            self.n_impostor.to_string(),
        ]
    }

    fn parse(r: &[String]) -> Result<Self> {
        if r.len() != SUMMARY_HEADER.len() {
            bail!("summary row has {} fields", r.len());
        }
        Ok(SummaryRow {
            system: r[0].clone(),
            protocol: r[1].clone(),
            eye: r[2].clone(),
            eer: r[3].parse()?,
            gar_at_10: r[4].parse()?,
            gar_at_1: r[5].parse()?,
            gar_at_01: r[6].parse()?,
            n_genuine: r[7].parse()?,
            n_impostor: r[8].parse()?,
        })
    }
}

/// Summarizes every score file; writes `summary.csv` and ROC files into `out`.
pub fn evaluate(files: &[PathBuf], out: &Path, provenance: &[(String, String)]) -> Result<Vec<SummaryRow>> {
    if files.is_empty() {
        bail!("evaluate: no score files given");
    }
    let mut rows = Vec::new();
    let mut prov = provenance.to_vec();
    for path in files {
        let f = ScoreFile::describe(path)?;
        let set = ScoreSet::read_csv(path).with_context(|| format!("parsing {}", path.display()))?;
        let protocol = if f.protocol.is_empty() { set.protocol_name.clone() } else { f.protocol.clone() };
        let s = summarize(&set).with_context(|| format!("evaluating {}", path.display()))?;
        let curve = roc_points(&set)?;
        let roc: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|p| vec![p.threshold.to_string(), p.far.to_string(), p.gar.to_string()])
            .collect();
        let mut roc_prov = provenance.to_vec();
        roc_prov.push(("source".into(), format!("{}", crate::stage::file_digest(path)?)));
        write_csv(&out.join("roc").join(format!("{}.csv", f.label())), &roc_prov, &["threshold", "far", "gar"], &roc)?;
        prov.push((format!("input.{}", f.label()), crate::stage::file_digest(path)?));
        rows.push(SummaryRow {
            system: f.system,
            protocol,
            eye: f.eye,
            eer: s.eer,
            gar_at_10: s.gar_at_10,
            gar_at_1: s.gar_at_1,
            gar_at_01: s.gar_at_01,
            n_genuine: s.n_genuine,
            n_impostor: s.n_impostor,
        });
    }
    let recs: Vec<Vec<String>> = rows.iter().map(SummaryRow::record).collect();
    write_csv(&out.join("summary.csv"), &prov, &SUMMARY_HEADER, &recs)?;
    Ok(rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let (_, header, rows) = read_csv(path)?;
    if header != SUMMARY_HEADER {
        bail!("{}: not a summary table", path.display());
    }
    rows.iter().map(|r| SummaryRow::parse(r)).collect::<Result<_>>().with_context(|| format!("parsing {}", path.display()))
}

/// PSNR/SSIM summary of one image set against its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub direction: String,
    pub eye: String,
    /// `translated`, or `source` for the untranslated input converted to the
    /// target's channel count.
    pub images: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub count: usize,
}

pub const QUALITY_HEADER: [&str; 8] = [
    "direction",
    "eye",
    "images",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "count",
];

impl QualityRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.direction.clone(),
            self.eye.clone(),
            self.images.clone(),
            self.psnr_mean.to_string(),
            self.psnr_std.to_string(),
            self.ssim_mean.to_string(),
            self.ssim_std.to_string(),
            self.count.to_string(),
        ]
    }
}

pub fn read_quality(path: &Path) -> Result<Vec<QualityRow>> {
    let (_, header, rows) = read_csv(path)?;
    if header != QUALITY_HEADER {
        bail!("{}: not a quality summary", path.display());
    }
    rows.iter()
        .map(|r| {
            Ok(QualityRow {
                direction: r[0].clone(),
                eye: r[1].clone(),
                images: r[2].clone(),
                psnr_mean: r[3].parse()?,
                psnr_std: r[4].parse()?,
                ssim_mean: r[5].parse()?,
                ssim_std: r[6].parse()?,
                count: r[7].parse()?,
            })
        })
        .collect::<Result<_>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub const TABLE2_HEADER: [&str; 5] = ["train_modality", "test_real_acc", "test_fake_acc", "difference", "mean"];

pub fn table2_records(rows: &[AccuracyDropRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.train_modality.clone(),
                r.test_real_acc.to_string(),
                r.test_fake_acc.to_string(),
                r.difference.to_string(),
                r.mean.to_string(),
            ]
        })
        .collect()
}

pub fn read_table2(path: &Path) -> Result<Vec<AccuracyDropRow>> {
    let (_, header, rows) = read_csv(path)?;
    if header != TABLE2_HEADER {
        bail!("{}: not an accuracy table", path.display());
    }
    rows.iter()
        .map(|r| {
            Ok(AccuracyDropRow {
                train_modality: r[0].clone(),
                test_real_acc: r[1].parse()?,
                test_fake_acc: r[2].parse()?,
                difference: r[3].parse()?,
                mean: r[4].parse()?,
            })
        })
        .collect::<Result<_>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Writes `report.md`, `table1.csv` and `table2.csv` into `out`; the score
/// rows come from [`evaluate`], which owns `summary.csv`. Needs at least one
/// score row.
pub fn write_report(
    out: &Path,
    scores: &[SummaryRow],
    quality: &[QualityRow],
    accuracy: &[AccuracyDropRow],
    provenance: &[(String, String)],
) -> Result<PathBuf> {
    if scores.is_empty() {
        bail!("report: no score summaries given");
    }
    fs::create_dir_all(out)?;
    let mut md = String::new();
    writeln!(md, "# Results\n")?;
    for (k, v) in provenance {
        writeln!(md, "- {k}: `{v}`")?;
    }
    writeln!(md)?;

    if !quality.is_empty() {
        let recs: Vec<Vec<String>> = quality.iter().map(QualityRow::record).collect();
        write_csv(&out.join("table1.csv"), provenance, &QUALITY_HEADER, &recs)?;
        writeln!(md, "## Translation quality\n")?;
        writeln!(md, "| direction | eye | images | PSNR (dB) | SSIM | n |")?;
        writeln!(md, "|---|---|---|---|---|---|")?;
        for q in quality {
            writeln!(
                md,
                "| {} | {} | {} | {:.1} ± {:.1} | {:.3} ± {:.3} | {} |",
                q.direction, q.eye, q.images, q.psnr_mean, q.psnr_std, q.ssim_mean, q.ssim_std, q.count
            )?;
        }
        writeln!(md)?;
    }

    if !accuracy.is_empty() {
        write_csv(&out.join("table2.csv"), provenance, &TABLE2_HEADER, &table2_records(accuracy))?;
        writeln!(md, "## Identification on real and translated images\n")?;
        writeln!(md, "Difference is fake minus real, signed.\n")?;
        writeln!(md, "| trained on | test real (%) | test fake (%) | difference | mean |")?;
        writeln!(md, "|---|---|---|---|---|")?;
        for r in accuracy {
            writeln!(
                md,
                "| {} | {:.1} | {:.1} | {:+.1} | {:.1} |",
                r.train_modality, r.test_real_acc, r.test_fake_acc, r.difference, r.mean
            )?;
        }
        writeln!(md)?;
    }

    writeln!(md, "## Verification\n")?;
    writeln!(md, "| system | protocol | eye | EER (%) | GAR@10% | GAR@1% | GAR@0.1% | genuine | impostor |")?;
    writeln!(md, "|---|---|---|---|---|---|---|---|---|")?;
    for s in scores {
        writeln!(
            md,
            "| {} | {} | {} | {:.2} | {:.1} | {:.1} | {:.1} | {} | {} |",
            s.system, s.protocol, s.eye, s.eer, s.gar_at_10, s.gar_at_1, s.gar_at_01, s.n_genuine, s.n_impostor
        )?;
    }
    let path = out.join("report.md");
    fs::write(&path, md)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_file_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let set = ScoreSet::from_scores("cnn:nir-fnir", &[3.0, 2.0], &[0.0, 1.0, 2.5]).unwrap();
        let p = dir.path().join("s.csv");
        set.write_csv(&p, &[("system".into(), "triplet".into()), ("eye".into(), "left".into())])
            .unwrap();
        let rows = evaluate(&[p], dir.path(), &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].system, "triplet");
        assert_eq!(rows[0].protocol, "cnn:nir-fnir");
        assert_eq!((rows[0].n_genuine, rows[0].n_impostor), (2, 3));
        assert!(dir.path().join("roc/triplet__cnn_nir-fnir__left.csv").is_file());
        assert_eq!(read_summary(&dir.path().join("summary.csv")).unwrap(), rows);

        let md = write_report(&dir.path().join("r"), &rows, &[], &[], &[]).unwrap();
        let text = fs::read_to_string(md).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("| triplet")).count(), 1);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(evaluate(&[], dir.path(), &[]).is_err());
        assert!(write_report(dir.path(), &[], &[], &[], &[]).is_err());
        fs::write(dir.path().join("bad.csv"), "pair_id,label,score\nx,maybe,1\n").unwrap();
        assert!(evaluate(&[dir.path().join("bad.csv")], dir.path(), &[]).is_err());
    }
}
