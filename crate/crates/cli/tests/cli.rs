use std::path::Path;
use std::process::{Command, Output};

use coc_core::training::load_checkpoint;

fn coc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coc"))
        .args(args)
        .env("COC_DATA_DIR", dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
# tiny desk run
max_epochs = 2
batches_per_epoch = 2
adversary_hidden = [4, 4]
model.h_gru = 2
model.d_att_token = 4
model.d_att_sent = 4
model.d_cls_hidden = 4
";

/// Ten-article corpus with toy embeddings and a tiny config in `dir`.
fn workspace(dir: &Path) {
    let o = coc(
        dir,
        &[
            "synth",
            "--docs",
            "60",
            "--articles",
            "10",
            "--vocab",
            "80",
            "--seed",
            "2",
            "--out",
            "corpus",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = coc(
        dir,
        &["embed-toy", "--corpus", "corpus", "--dim", "8", "--out", "store.emb"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    std::fs::write(dir.join("tiny.conf"), TINY).unwrap();
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--corpus",
        "corpus",
        "--emb",
        "store.emb",
        "--config",
        "tiny.conf",
    ];
    args.extend_from_slice(extra);
    coc(dir, &args)
}

#[test]
fn help_exits_zero_and_lists_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = coc(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    for (sub, flags) in [
        (
            "synth",
            &["--docs", "--articles", "--vocab", "--strength", "--seed", "--out"][..],
        ),
        ("embed-toy", &["--corpus", "--dim", "--seed", "--out"][..]),
        (
            "train",
            &[
                "--task",
                "--variant",
                "--regime",
                "--adapt",
                "--split",
                "--config",
                "--emb",
                "--out",
            ][..],
        ),
        ("eval", &["--ckpt", "--split", "--task", "--threshold", "--report"][..]),
    ] {
        let o = coc(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub} help lacks {f}");
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&coc(dir.path(), &["synth", "--bogus"])), 1);
    assert_eq!(code(&coc(dir.path(), &[])), 1);
}

#[test]
fn synth_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--docs", "100", "--articles", "6", "--seed", "1"];
    let o = coc(dir.path(), &[&args[..], &["--out", "a"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    coc(dir.path(), &[&args[..], &["--out", "b"]].concat());
    for file in ["cases.jsonl", "articles.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b);
    }
    let lines = |f: &str| {
        std::fs::read_to_string(dir.path().join("a").join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("cases.jsonl"), 100);
    assert_eq!(lines("articles.jsonl"), 6);
}

#[test]
fn synth_rejects_small_vocabulary_and_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = coc(dir.path(), &["synth", "--vocab", "3", "--articles", "6", "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("vocab"));
    std::fs::write(dir.path().join("file"), "").unwrap();
    let o = coc(dir.path(), &["synth", "--docs", "5", "--out", "file/sub"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn embed_toy_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    let o = coc(
        dir.path(),
        &["embed-toy", "--corpus", "corpus", "--dim", "8", "--out", "again.emb"],
    );
    assert_eq!(code(&o), 0);
    let a = std::fs::read(dir.path().join("store.emb")).unwrap();
    let b = std::fs::read(dir.path().join("again.emb")).unwrap();
    assert_eq!(a, b);
    let store = coc_core::embedding::read_store(&dir.path().join("store.emb")).unwrap();
    assert_eq!(store.len(), 70);
    assert_eq!(
        code(&coc(
            dir.path(),
            &["embed-toy", "--corpus", "corpus", "--dim", "4", "--out", "x.emb"]
        )),
        1
    );
    assert_eq!(
        code(&coc(
            dir.path(),
            &["embed-toy", "--corpus", "missing", "--out", "x.emb"]
        )),
        2
    );
}

#[test]
fn train_flag_validation() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    let o = train(
        dir.path(),
        &[
            "--variant",
            "fact",
            "--regime",
            "uda",
            "--split",
            "split0_to_1",
            "--out",
            "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 1);
    let o = train(
        dir.path(),
        &["--adapt", "disc", "--split", "split0_to_1", "--out", "m.ckpt"],
    );
    assert_eq!(code(&o), 1);
    let o = train(
        dir.path(),
        &[
            "--adapt",
            "nonsense",
            "--regime",
            "uda",
            "--split",
            "split0_to_1",
            "--out",
            "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 1);
    let o = train(dir.path(), &["--split", "custom", "--out", "m.ckpt"]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn discriminator_width_follows_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    for (regime, domains) in [("ada", 5), ("uda", 10)] {
        let out = format!("{regime}.ckpt");
        let o = train(
            dir.path(),
            &[
                "--regime",
                regime,
                "--adapt",
                "disc",
                "--split",
                "split0_to_1",
                "--out",
                &out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ckpt = load_checkpoint(&dir.path().join(&out)).unwrap();
        assert_eq!(ckpt.state.adversary.unwrap().config.num_domains, domains);
        assert!(dir.path().join(format!("{out}.log.jsonl")).exists());
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    std::fs::write(dir.path().join("tiny.conf"), format!("{TINY}seed = 5\ngamma = 0.15\n")).unwrap();
    let o = train(
        dir.path(),
        &[
            "--seed",
            "9",
            "--split",
            "split0_to_1",
            "--regime",
            "uda",
            "--out",
            "s.ckpt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = load_checkpoint(&dir.path().join("s.ckpt")).unwrap().config;
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.gamma, 0.15);
    // Source-only training drops the requested regime.
    assert_eq!(cfg.regime, coc_core::corpus::Regime::None);
}

#[test]
fn train_then_eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    let o = train(
        dir.path(),
        &[
            "--regime",
            "uda",
            "--adapt",
            "wass",
            "--split",
            "split0_to_1",
            "--out",
            "w.ckpt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = |extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--corpus",
            "corpus",
            "--emb",
            "store.emb",
            "--split",
            "split0_to_1",
        ];
        args.extend_from_slice(extra);
        coc(dir.path(), &args)
    };
    let o = eval(&["--ckpt", "w.ckpt", "--report", "report.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("source mac."), "{table}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["source"]["per_article"].as_object().unwrap().len(), 5);
    assert_eq!(report["target"]["article_set"], "target");

    assert_eq!(code(&eval(&["--ckpt", "w.ckpt", "--threshold", "1.5"])), 1);
    assert_eq!(code(&eval(&["--ckpt", "missing.ckpt"])), 2);
    let mut bytes = std::fs::read(dir.path().join("w.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(dir.path().join("broken.ckpt"), bytes).unwrap();
    assert_eq!(code(&eval(&["--ckpt", "broken.ckpt"])), 2);
}

#[test]
fn resume_checks_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    workspace(dir.path());
    let o = train(dir.path(), &["--split", "split0_to_1", "--out", "r.ckpt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("r.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    // The finished run resumes to the same log.
    let o = train(dir.path(), &["--split", "split0_to_1", "--out", "r.ckpt", "--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("r.ckpt.log.jsonl")).unwrap(),
        log
    );
    let o = train(
        dir.path(),
        &["--split", "split0_to_1", "--seed", "4", "--out", "r.ckpt", "--resume"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("different configuration"));
}
