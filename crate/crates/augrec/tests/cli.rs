use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use walkdir::WalkDir;

fn augrec(args: &[&str], runs: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augrec"))
        .args(args)
        .env("AUGREC_RUNS", runs)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        "sentences_per_speaker = 12\ntarget_sentences = 12\ntarget_train = 6\n\
         [classifier]\nepochs = 1\n[pretrain]\nepochs = 1\n[duration]\nepochs = 1\n\
         [baseline]\nsteps = 2\n[finetune]\nsteps = 2\nmix_pool_size = 40\n",
    )
    .unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_owned(), fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let top = augrec(&["--help"], tmp.path());
    assert!(top.status.success());
    let text = String::from_utf8_lossy(&top.stdout);
    for cmd in ["gen-corpus", "train-classifier", "pretrain", "finetune", "synthesize", "evaluate", "report", "verify-losses", "reproduce"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let ft = augrec(&["finetune", "--help"], tmp.path());
    let text = String::from_utf8_lossy(&ft.stdout);
    for flag in ["--config", "--seed", "--beta", "--gamma", "--lambda", "--mix-ratio", "--stage", "--runs-root"] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.contains("[config: finetune.hp.beta]"));
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");

    let o = augrec(&["gen-corpus", "--no-such-flag"], &runs);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[finetune]\nbogus = 1\n").unwrap();
    let o = augrec(&["gen-corpus", "--config", bad.to_str().unwrap()], &runs);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("finetune.bogus"));
    assert!(stderr(&o).starts_with("error class=config code=3"));

    let o = augrec(&["gen-corpus", "--beta=-1"], &runs);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = augrec(&["gen-corpus", "--config", tmp.path().join("absent.toml").to_str().unwrap()], &runs);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let cfg = tiny_config(tmp.path());
    let o = augrec(&["evaluate", "--config", cfg.to_str().unwrap()], &runs);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn gen_corpus_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for root in [&a, &b] {
        let o = augrec(&["gen-corpus", "--config", cfg.to_str().unwrap(), "--seed", "3"], root);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ta = tree(&a);
    assert!(ta.iter().any(|(p, _)| p.ends_with("manifest.json")));
    assert_eq!(ta, tree(&b));
}

#[test]
fn stage_chain_runs_end_to_end_at_tiny_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let runs = tmp.path().join("runs");
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["gen-corpus", "--config", c],
        vec!["train-classifier", "--config", c],
        vec!["pretrain", "--config", c],
        vec!["finetune", "--config", c, "--stage", "baseline-finetune"],
        vec!["finetune", "--config", c, "--stage", "ablation-no-reg"],
        vec!["finetune", "--config", c],
        vec!["evaluate", "--config", c],
        vec!["report", "--config", c],
    ] {
        let o = augrec(&args, &runs);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let run = fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    for f in ["config.toml", "report.json", "report.csv", "logs/pretrain.jsonl", "logs/finetune.jsonl"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let out = tmp.path().join("s.melf");
    let o = augrec(
        &["synthesize", "--config", c, "--text", "sil k a t sil", "--speaker", "8", "--out", out.to_str().unwrap()],
        &runs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(augrec::corpus_io::read_melf(&out).unwrap().frames() > 0);
    let o = augrec(&["synthesize", "--config", c, "--text", "sil zz sil"], &runs);
    assert!(!o.status.success());

    // a different beta is a different run directory
    let o = augrec(&["evaluate", "--config", c, "--beta", "0.5"], &runs);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn verify_losses_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = augrec(&["verify-losses", "--seed", "3"], tmp.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}{}", stderr(&o));
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
