use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use char2char::dataset::{write_csv, CorpusPair};
use char2char::mr::SAMPLE_ROWS;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_char2char"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<CorpusPair> = SAMPLE_ROWS
        .iter()
        .map(|(mr, rf)| CorpusPair::new(mr, rf).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &pairs).unwrap();
    fs::write(dir.path().join("train.csv"), buf).unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "train_csv = train.csv\ninput = train.csv\nreferences = train.csv\nout_dir = out\n\
         embed_dim = 4\nhidden_dim = 6\nmax_decode_len = 40\nepochs = 2\nbeam_width = 3\n",
    )
    .unwrap();
    dir
}

#[test]
fn pipeline_through_the_binary() {
    let dir = setup();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = run(d, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(ok(&["--config", "run.cfg", "augment"]).starts_with("omission_rows="));
    for direction in ["forward", "reverse", "classifier"] {
        ok(&["--config", "run.cfg", "train", "--direction", direction]);
        assert!(d
            .join(format!("out/reports/train_{direction}.log"))
            .is_file());
    }
    ok(&[
        "--config",
        "run.cfg",
        "decode",
        "--mode",
        "reverse",
        "--workers",
        "2",
    ]);
    let first = fs::read(d.join("out/decisions.log")).unwrap();
    assert_eq!(
        String::from_utf8_lossy(&first).lines().count(),
        SAMPLE_ROWS.len()
    );
    ok(&["--config", "run.cfg", "rerank", "--mode", "reverse"]);
    assert_eq!(fs::read(d.join("out/decisions.log")).unwrap(), first);
    ok(&["--config", "run.cfg", "--mode", "forward", "rerank"]);
    let report = ok(&["--config", "run.cfg", "evaluate"]);
    assert!(report.starts_with("bleu="));
    assert!(d.join("out/reports/summary.json").is_file());
    let set = ok(&[
        "--config",
        "run.cfg",
        "--set",
        "hypotheses=out/selected.txt",
        "evaluate",
    ]);
    assert_eq!(set, report);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    let code = |args: &[&str]| run(d, args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--config", "absent.cfg", "augment"]), 1);
    assert_eq!(
        code(&["--config", "run.cfg", "--mode", "ensemble", "decode"]),
        1
    );
    assert_eq!(
        code(&["--config", "run.cfg", "--set", "epochs", "train"]),
        1
    );
    assert_eq!(code(&["--config", "run.cfg", "decode"]), 1);
    assert_eq!(
        code(&[
            "--config",
            "run.cfg",
            "--set",
            "train_csv=nope.csv",
            "augment"
        ]),
        2
    );
    fs::write(d.join("bad.csv"), "mr,ref\n\"name[X], bogus[y]\",text\n").unwrap();
    assert_eq!(
        code(&[
            "--config",
            "run.cfg",
            "--set",
            "train_csv=bad.csv",
            "augment"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "--config",
            "run.cfg",
            "--set",
            "lr=1e300",
            "--set",
            "clip_norm=0",
            "--set",
            "epochs=3",
            "train"
        ]),
        3
    );
}
