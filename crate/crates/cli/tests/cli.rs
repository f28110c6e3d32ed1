use std::path::Path;
use std::process::{Command, Output};

fn onoma(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onoma"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus(dir: &Path) {
    let o = onoma(&["gen-corpus", "--out", "corpus", "--per-class", "2", "--seed", "4"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = onoma(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_required_setting_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = onoma(&["synth", "--text", "kan"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_without_alignment_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let manifest = std::fs::read_to_string(dir.path().join("corpus/manifest.tsv")).unwrap();
    let victim = manifest
        .lines()
        .find(|l| !l.starts_with('#') && !l.starts_with("id"))
        .unwrap()
        .split('\t')
        .next()
        .unwrap()
        .to_string();
    std::fs::remove_file(dir.path().join(format!("corpus/align/{victim}.lab"))).unwrap();
    let o = onoma(
        &["train", "--manifest", "corpus/manifest.tsv", "--out", "run", "--preset", "desk", "--epochs", "1", "--min-confidence", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains(&victim), "{}", stderr(&o));
}

#[test]
fn train_then_synth_writes_a_wave() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = onoma(
        &["train", "--manifest", "corpus/manifest.tsv", "--out", "run", "--preset", "desk", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["last.ckpt", "best.ckpt", "metrics.csv"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,mel_mse,duration_mse,total,val_total\n"));

    let o = onoma(
        &["synth", "--text", "キイン", "--ratio", "2.0", "--label", "bat", "--ckpt", "run/last.ckpt", "--out", "o.wav"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let wave = onoma_core::dsp::load_wav(&dir.path().join("o.wav")).unwrap();
    assert_eq!(wave.sample_rate, 8000);
    assert!(!wave.samples.is_empty());

    let o = onoma(&["synth", "--text", "kan", "--label", "nosuch", "--ckpt", "run/last.ckpt", "--out", "x.wav"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = onoma(&["eval-stretch", "--ckpt", "run/last.ckpt", "--input", "kaan:bell", "--out", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = onoma(&["plotdata", "--input", "s.csv"], dir.path());
    assert!(stdout(&o).starts_with("series,x,y\n"), "{}", stdout(&o));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"manifest": "m.tsv", "out": "o", "epochs": 7, "learning_rate": 0.01}"#,
    )
    .unwrap();
    let o = onoma(&["train", "--config", "c.json", "--epochs", "3", "--print-config"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["epochs"], 3);
    assert_eq!(v["learning_rate"], 0.01);
    assert_eq!(v["min_confidence"], 3);
}

#[test]
fn gen_corpus_is_reproducible_under_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    corpus(a.path());
    corpus(b.path());
    let read = |d: &Path| std::fs::read(d.join("corpus/manifest.tsv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = |cmd: &str| {
        let o = onoma(&[cmd, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0));
        stdout(&o)
    };
    let train = help("train");
    assert!(train.contains("[default: 0.001]"));
    assert!(train.contains("[default: 3]"));
    assert!(train.contains("[default: 24"));
    assert!(help("eval-stretch").contains("[default: 0.5,1.0,1.5,2.0]"));
    assert!(help("prepare").contains("[default: 24]"));
    for cmd in [
        "gen-corpus",
        "prepare",
        "augment",
        "train",
        "synth",
        "eval-repetition",
        "eval-stretch",
        "eval-diversity",
        "grad-check",
        "plotdata",
    ] {
        let h = help(cmd);
        assert!(h.contains("--seed") && h.contains("--config") && h.contains("--print-config"), "{cmd}");
    }
}

#[test]
fn grad_check_passes_on_the_desk_model() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = onoma(&["grad-check", "--manifest", "corpus/manifest.tsv", "--samples", "30"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("max_rel_error"));
}
