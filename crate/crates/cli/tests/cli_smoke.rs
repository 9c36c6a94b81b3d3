use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
output = "out"
eyes = ["left"]

[dataset]
kind = "periocular"
synthetic = { n_subjects = 4 }

[translator]
directions = ["vis2nir"]
epochs = 1
ngf = 2
ndf = 2

[identifier]
epochs = 1
width = 2

[verifier]
variants = ["triplet", "softmax"]
pairings = ["real-fake"]
epochs = 1

[baselines]
systems = ["pixel_eucl", "lbp_chi2", "hog_eucl"]
protocols = ["baseline:gray-nir", "cnn:gray-nir"]
fusion = [["lbp_chi2", "hog_eucl"]]
"#;

fn ocular(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocular"))
        .args(args)
        .env("OCULAR_DETERMINISTIC", "1")
        .env("RUST_LOG", "info")
        .output()
        .expect("spawn ocular")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV, without provenance lines.
fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_report_rerun_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    let first = ocular(&["run", "--config", cfg]);
    assert!(first.status.success(), "{}", stderr(&first));
    let report = dir.path().join("out/report");
    for f in ["report.md", "summary.csv", "table1.csv", "table2.csv"] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
    assert!(fs::read_dir(report.join("roc")).unwrap().count() > 0);
    let summary = body(&report.join("summary.csv"));
    assert!(summary.contains("triplet-vis2nir,cnn:nir-fnir,left"), "{summary}");
    assert!(summary.contains("fusion(lbp_chi2+hog_eucl),baseline:gray-nir"), "{summary}");
    let md = fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("config_hash"), "{md}");

    let again = ocular(&["run", "--config", cfg]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert!(!stderr(&again).contains(": running"), "cached rerun ran stages:\n{}", stderr(&again));
    assert_eq!(body(&report.join("summary.csv")), summary);

    let forced = ocular(&["run", "--config", cfg, "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert!(stderr(&forced).contains("stage prepare: running"));
    assert_eq!(body(&report.join("summary.csv")), summary, "forced rerun changed numbers");
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = TINY.replace(
        "ndf = 2\n",
        "ndf = 2\ncheckpoints = { \"vis2nir-left\" = \"nope/model.ckpt\" }\n",
    );
    fs::write(&cfg, text).unwrap();
    let out = ocular(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("translator-vis2nir-left") && err.contains("does not exist"), "{err}");
    assert!(!dir.path().join("out/stages").exists(), "failed preflight should not start stages");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, TINY.replace("epochs = 1\nwidth", "epocs = 1\nwidth")).unwrap();
    let out = ocular(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("epocs"), "{}", stderr(&out));
}
