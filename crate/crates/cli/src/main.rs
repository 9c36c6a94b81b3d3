use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use ocular_core::baselines::{fit_llr_fusion, BaselineSystem, Metric, SystemKind};
use ocular_core::dataset::{generate_synthetic, ingest, DatasetKind, Eye, SyntheticSpec, MAX_SAMPLES_PER_EYE};
use ocular_core::metrics::ScoreSet;
use ocular_core::Raster;
use ocular_nets::translator::{Direction, Translator};
use ocular_nets::verifier::{Pairing, Variant};
use ocular_nets::{apply_determinism, DETERMINISTIC_ENV};

use ocular_cli::pipeline::{prepare_dataset, score_files};
use ocular_cli::report;
use ocular_cli::stage::{file_digest, Stage};
use ocular_cli::{ExperimentConfig, HeadRef, Pipeline, ProtocolSpec, Side};

#[derive(Parser)]
#[command(name = "ocular", version, about = "Cross-spectral ocular verification experiments")]
#[command(after_help = "Set OCULAR_DETERMINISTIC=1 for single-threaded, bit-repeatable math. Log level via RUST_LOG.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic paired NIR/VIS dataset.
    Synth {
        #[arg(long, default_value_t = 20)]
        subjects: u32,
        #[arg(long, default_value_t = MAX_SAMPLES_PER_EYE)]
        samples: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "periocular")]
        kind: DatasetKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a dataset directory and write 256x256 canvases plus a manifest.
    #[command(alias = "preprocess")]
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "periocular")]
        kind: DatasetKind,
        #[arg(long, value_delimiter = ',', default_value = "left,right")]
        eyes: Vec<Eye>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or reuse) translators for one direction.
    TrainTranslator {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        eye: Option<Eye>,
        #[arg(long)]
        force: bool,
    },
    /// Translate every PNG in a directory with a translator checkpoint.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train identification backbones on one image side (`nir`, `fnir`, `vis`, ...).
    TrainId {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        side: Side,
        #[arg(long)]
        eye: Option<Eye>,
        #[arg(long)]
        force: bool,
    },
    /// Real vs translated identification accuracy table.
    EvalId {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train verification heads of one variant for every direction and eye.
    TrainVerifier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        force: bool,
    },
    /// Score a cnn protocol with a trained head.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "triplet")]
        variant: Variant,
        #[arg(long)]
        protocol: ProtocolSpec,
        /// `left`, `right` or `both`.
        #[arg(long)]
        eye: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score a protocol with a descriptor matcher.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        system: SystemKind,
        #[arg(long, default_value = "eucl")]
        metric: Metric,
        #[arg(long)]
        protocol: ProtocolSpec,
        #[arg(long)]
        eye: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Logistic-regression fusion of aligned score files.
    Fuse {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fusion")]
        name: String,
    },
    /// EER / GAR@FAR summary and ROC files for score CSVs.
    Evaluate {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markdown and CSV report from score, quality and accuracy files.
    Report {
        #[arg(long, value_delimiter = ',', required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        quality: Vec<PathBuf>,
        #[arg(long)]
        table2: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage of a config, then the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn pipeline(config: &Path, force: bool) -> Result<Pipeline> {
    Pipeline::new(ExperimentConfig::load(config)?, force)
}

fn eyes_of(p: &Pipeline, eye: Option<Eye>) -> Vec<Eye> {
    eye.map(|e| vec![e]).unwrap_or_else(|| p.cfg.eyes.clone())
}

/// Copies the `<eye>.csv` of a score stage to `out`; defaults to the combined file.
fn export(stage: &Stage, eye: Option<&str>, out: &Path) -> Result<()> {
    let files = score_files(&stage.dir)?;
    let pick = match eye {
        Some(e) => files.iter().find(|p| p.file_stem().is_some_and(|s| s == e)),
        None => files
            .iter()
            .find(|p| p.file_stem().is_some_and(|s| s == "both"))
            .or_else(|| files.first()),
    }
    .ok_or_else(|| anyhow!("no {} scores in {}", eye.unwrap_or("matching"), stage.dir.display()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::copy(pick, out)?;
    println!("{}", out.display());
    Ok(())
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    v.sort();
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth {
            subjects,
            samples,
            seed,
            kind,
            out,
        } => {
            let spec = SyntheticSpec {
                samples_per_eye: samples,
                ..SyntheticSpec::new(subjects, seed, kind)
            };
            let index = generate_synthetic(&spec, &out).context("synth")?;
            println!("{} images in {}", index.len(), out.display());
        }
        Cmd::Prepare { input, kind, eyes, out } => {
            let raw = ingest(&input, kind).context("prepare")?;
            let index = prepare_dataset(&raw, &eyes, &out).context("prepare")?;
            println!("{} images in {}", index.len(), out.display());
        }
        Cmd::TrainTranslator {
            config,
            direction,
            eye,
            force,
        } => {
            let mut p = pipeline(&config, force)?;
            for e in eyes_of(&p, eye) {
                let s = p.translator(direction, e)?;
                println!("{}", s.path("model.ckpt").display());
            }
        }
        Cmd::Translate { ckpt, input, out } => {
            let t = Translator::load(&ckpt).with_context(|| format!("translate: loading {}", ckpt.display()))?;
            let source = t.config.direction.source();
            fs::create_dir_all(&out)?;
            let files = pngs(&input)?;
            if files.is_empty() {
                bail!("translate: no PNG files in {}", input.display());
            }
            for f in &files {
                let img = Raster::load_png(f)?;
                let fake = t.translate(&img, source).with_context(|| format!("translate: {}", f.display()))?;
                fake.save_png(out.join(f.file_name().expect("file")))?;
            }
            println!("{} images in {}", files.len(), out.display());
        }
        Cmd::TrainId {
            config,
            side,
            eye,
            force,
        } => {
            let mut p = pipeline(&config, force)?;
            for e in eyes_of(&p, eye) {
                let s = p.identifier(side, e)?;
                println!("{}", s.path("model.ckpt").display());
            }
        }
        Cmd::EvalId { config, report, force } => {
            let mut p = pipeline(&config, force)?;
            let s = p.eval_id()?;
            if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::copy(s.path("table2.csv"), &report)?;
            println!("{}", report.display());
        }
        Cmd::TrainVerifier { config, variant, force } => {
            let mut p = pipeline(&config, force)?;
            let heads: Vec<HeadRef> = p.heads().into_iter().filter(|h| h.variant == variant).collect();
            let heads = if heads.is_empty() {
                // Not in the config: train the default form for every direction.
                p.cfg
                    .translator
                    .directions
                    .iter()
                    .map(|&d| match variant {
                        Variant::Triplet => HeadRef::triplet(d),
                        Variant::Softmax => HeadRef::softmax(Pairing::RealFake, d),
                    })
                    .collect()
            } else {
                heads
            };
            for h in heads {
                for e in p.cfg.eyes.clone() {
                    let s = p.head(h, e)?;
                    println!("{}", s.path("head.ckpt").display());
                }
            }
        }
        Cmd::Score {
            config,
            variant,
            protocol,
            eye,
            out,
            force,
        } => {
            let mut p = pipeline(&config, force)?;
            let direction = p
                .cfg
                .translator
                .directions
                .iter()
                .copied()
                .find(|d| d.target() == protocol.b.spectrum)
                .ok_or_else(|| anyhow!("score: no configured direction targets {}", protocol.b.spectrum))?;
            let head = match variant {
                Variant::Triplet => HeadRef::triplet(direction),
                Variant::Softmax if protocol.b.fake => HeadRef::softmax(Pairing::RealFake, direction),
                Variant::Softmax => HeadRef::softmax(Pairing::RealReal, direction),
            };
            let s = p.score(head, protocol)?;
            export(&s, eye.as_deref(), &out)?;
        }
        Cmd::Baseline {
            config,
            system,
            metric,
            protocol,
            eye,
            out,
            force,
        } => {
            let mut p = pipeline(&config, force)?;
            let s = p.baseline(BaselineSystem::new(system, metric), protocol)?;
            export(&s, eye.as_deref(), &out)?;
        }
        Cmd::Fuse { inputs, out, name } => {
            if inputs.len() < 2 {
                bail!("fuse: needs at least two score files");
            }
            let sets = inputs
                .iter()
                .map(|p| ScoreSet::read_csv(p).with_context(|| format!("fuse: reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let model = fit_llr_fusion(&sets).context("fuse")?;
            let fused = model.fuse_sets(&sets, &sets[0].protocol_name).context("fuse")?;
            let mut prov = vec![("system".to_string(), name), ("weights".to_string(), format!("{model:?}"))];
            for p in &inputs {
                prov.push((format!("input.{}", p.display()), file_digest(p)?));
            }
            fused.write_csv(&out, &prov)?;
            println!("{}", out.display());
        }
        Cmd::Evaluate { inputs, out } => {
            let rows = report::evaluate(&inputs, &out, &[]).context("evaluate")?;
            for r in rows {
                println!(
                    "{} {} {}: EER {:.2}%  GAR@1% {:.1}",
                    r.system, r.protocol, r.eye, r.eer, r.gar_at_1
                );
            }
        }
        Cmd::Report {
            scores,
            quality,
            table2,
            out,
        } => {
            let rows = report::evaluate(&scores, &out, &[]).context("report")?;
            let mut q = Vec::new();
            for f in &quality {
                q.extend(report::read_quality(f).context("report")?);
            }
            let acc = match &table2 {
                Some(t) => report::read_table2(t).context("report")?,
                None => Vec::new(),
            };
            let md = report::write_report(&out, &rows, &q, &acc, &[]).context("report")?;
            println!("{}", md.display());
        }
        Cmd::Run { config, force } => {
            let mut p = pipeline(&config, force)?;
            let outcome = p.run()?;
            println!("{}", outcome.report_dir.join("report.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if apply_determinism() {
        log::info!("{DETERMINISTIC_ENV} set: single-threaded math");
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
