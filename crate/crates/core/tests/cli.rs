//! End-to-end checks of the `ivit` binary: exit codes, outputs, files.

use std::path::Path;
use std::process::{Command, Output};

use ivit::model::{Checkpoint, CHECKPOINT_MAGIC};
use ivit::teacher::read_tim;
use ivit::train::parse_metrics;
use tempfile::TempDir;

const TINY: &str = "\
# small enough to train in well under a second
model.image_size = 16
model.patch_size = 4
model.embed_dim = 8
model.heads = 2
model.layers = 1
model.classes = 3
model.gcn_hidden = 4
train.epochs = 1
train.pretrain_epochs = 1
train.batch = 4
train.seed = 5
data.classes = 3
data.samples = 24
";

fn ivit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn trained(dir: &Path) -> String {
    let cfg = write(dir, "tiny.cfg", TINY);
    let run = dir.join("run");
    let out = ivit(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    run.to_str().unwrap().to_owned()
}

#[test]
fn decompose_listings() {
    let out = ivit(&["decompose", "--n", "2", "--oracle", "and"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "S=0 I=0\nS=1 I=0\nS=2 I=0\nS=3 I=1\n");

    let out = ivit(&["decompose", "--n", "3", "--oracle", "addl", "--top", "3"]);
    assert_eq!(stdout(&out), "S=1 I=1\nS=2 I=1\nS=4 I=1\n");

    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "v.txt", "# v(S) for S = 0..3\n0.5 1.5\n2.5 4.0\n");
    let out = ivit(&["decompose", "--n", "2", "--oracle", "file", "--file", &f]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out), "S=0 I=0.5\nS=1 I=1\nS=2 I=2\nS=3 I=0.5\n");
}

#[test]
fn exit_code_matrix() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let missing = d.join("missing.cfg");
    let missing = missing.to_str().unwrap();
    let cases: Vec<(Vec<String>, i32, &str)> = vec![
        (vec!["train".into(), "--config".into(), missing.into()], 1, "missing.cfg"),
        (vec!["train".into()], 1, "--config"),
        (vec!["frobnicate".into()], 1, "frobnicate"),
        (
            vec!["train".into(), "--config".into(), write(d, "typo.cfg", "model.layer = 2\n")],
            2,
            "model.layer",
        ),
        (
            vec!["train".into(), "--config".into(), write(d, "value.cfg", "\ntrain.lr = fast\n")],
            2,
            "line 2",
        ),
        (
            vec!["train".into(), "--config".into(), write(d, "patch.cfg", "model.patch_size = 5\n")],
            2,
            "divisible",
        ),
        (
            vec!["visualize".into(), "--tim".into(), write(d, "magic.tim", [b'X'; 40]), "--out".into(), "x.pgm".into()],
            2,
            "magic.tim",
        ),
        (
            vec!["visualize".into(), "--tim".into(), write(d, "short.tim", b"TIM1\x01\0\0"), "--out".into(), "x.pgm".into()],
            2,
            "short.tim",
        ),
        (
            vec!["visualize".into(), "--tim".into(), d.join("none.tim").to_str().unwrap().into(), "--out".into(), "x.pgm".into()],
            1,
            "none.tim",
        ),
        (
            vec!["decompose".into(), "--n".into(), "3".into(), "--oracle".into(), "file".into(), "--file".into(), write(d, "four.txt", "1 2 3 4")],
            2,
            "--n",
        ),
        (vec!["decompose".into(), "--n".into(), "3".into(), "--oracle".into(), "file".into()], 1, "--file"),
        (vec!["decompose".into(), "--n".into(), "17".into(), "--oracle".into(), "addl".into()], 1, "--n"),
        (
            vec!["gate-report".into(), "--ckpt".into(), write(d, "bad.ckpt", b"NOPE\x01\0\0\0"), "--data".into(), d.to_str().unwrap().into()],
            2,
            "--ckpt",
        ),
        (
            vec!["eval".into(), "--ckpt".into(), d.join("none.ckpt").to_str().unwrap().into(), "--data".into(), ".".into()],
            1,
            "--ckpt",
        ),
    ];
    for (args, want, needle) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = ivit(&args);
        assert_eq!(code(&out), want, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "{args:?}: `{needle}` not in {}", stderr(&out));
    }
}

#[test]
fn train_writes_reproducible_artifacts() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path());
    let log = std::fs::read_to_string(Path::new(&run).join("metrics.jsonl")).unwrap();
    assert!(log.starts_with("{\"config\":{"));
    assert!(log.lines().next().unwrap().contains("\"model.embed_dim\":\"8\""));
    let records = parse_metrics(&log).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].stage, "pretrain");
    assert_eq!(records[1].stage, "finetune");
    assert_eq!(records[1].gate_g1.len(), 1);

    let ck = Checkpoint::load(&Path::new(&run).join("final.ckpt")).unwrap();
    assert!(ck.params.has_interaction());
    let again = dir.path().join("again");
    let cfg = dir.path().join("tiny.cfg");
    let out = ivit(&["train", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(again.join("metrics.jsonl")).unwrap(), log.as_bytes());
    assert_eq!(std::fs::read(again.join("final.ckpt")).unwrap(), std::fs::read(Path::new(&run).join("final.ckpt")).unwrap());
}

#[test]
fn eval_teachers_and_gates() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path());
    let ckpt = format!("{run}/final.ckpt");
    let data = format!("{run}/data");

    let out = ivit(&["eval", "--ckpt", &ckpt, "--data", &data]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["samples"], 5);
    assert!(report["cosine_agt_teacher"].as_f64().unwrap() > 0.0);
    let plain = stdout(&out);

    let tims = dir.path().join("tims");
    let out = ivit(&["teacher-gen", "--data", &data, "--out", tims.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = read_tim(&tims.join("00000.tim")).unwrap();
    assert_eq!(first.grid(), (4, 4));
    assert_eq!(std::fs::read_dir(&tims).unwrap().count(), 24);

    // the regenerated maps equal the dataset's own, so the report is unchanged
    let out2 = ivit(&["eval", "--ckpt", &ckpt, "--data", &data, "--teachers", tims.to_str().unwrap()]);
    assert_eq!(stdout(&out2), plain);

    let humans = dir.path().join("human");
    std::fs::create_dir(&humans).unwrap();
    for i in 19..24 {
        write(&humans, &format!("{i:05}.txt"), "4 4\n1 0.5 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 1\n");
    }
    let out = ivit(&["eval", "--ckpt", &ckpt, "--data", &data, "--human", humans.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("\"human\":{"));
    std::fs::remove_file(humans.join("00020.txt")).unwrap();
    let out = ivit(&["eval", "--ckpt", &ckpt, "--data", &data, "--human", humans.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("00020.txt"));

    let out = ivit(&["gate-report", "--ckpt", &ckpt, "--data", &data]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trend: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(trend["g1"].as_array().unwrap().len(), 1);
}

#[test]
fn visualize_writes_pgm() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path());
    let tims = dir.path().join("tims");
    ivit(&["teacher-gen", "--data", &format!("{run}/data"), "--out", tims.to_str().unwrap()]);
    let pgm = dir.path().join("map.pgm");
    let tim = tims.join("00003.tim");
    let out = ivit(&["visualize", "--tim", tim.to_str().unwrap(), "--out", pgm.to_str().unwrap(), "--upsample", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&pgm).unwrap();
    assert!(text.starts_with("P2\n8 8\n255\n"));
    // four glyph patches at full intensity, each 2x2 pixels
    assert_eq!(text.split_whitespace().skip(4).filter(|t| *t == "255").count(), 16);

    let out = ivit(&["visualize", "--tim", tim.to_str().unwrap(), "--out", pgm.to_str().unwrap(), "--scale", "loud"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--scale"));

    // a valid header with a bad version is still rejected
    let mut bytes = std::fs::read(&tim).unwrap();
    bytes[4] = 7;
    let bad = write(dir.path(), "v7.tim", &bytes);
    assert_eq!(code(&ivit(&["visualize", "--tim", &bad, "--out", pgm.to_str().unwrap()])), 2);
}

#[test]
fn visualize_matches_golden_heatmap() {
    let dir = TempDir::new().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let tim = fixtures.join("map_3x4.tim");
    let map = read_tim(&tim).unwrap();
    assert_eq!(map.grid(), (3, 4));
    let pgm = dir.path().join("golden.pgm");
    let out = ivit(&["visualize", "--tim", tim.to_str().unwrap(), "--out", pgm.to_str().unwrap(), "--upsample", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(&pgm).unwrap(), std::fs::read(fixtures.join("map_3x4.pgm")).unwrap());
}

#[test]
fn resume_checks_compatibility() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path());
    let ckpt = format!("{run}/final.ckpt");
    let other = write(dir.path(), "wide.cfg", TINY.replace("embed_dim = 8", "embed_dim = 12"));
    let out = ivit(&["train", "--config", &other, "--resume", &ckpt, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint"));

    let cfg = dir.path().join("tiny.cfg");
    let resumed = dir.path().join("resumed");
    let out = ivit(&["train", "--config", cfg.to_str().unwrap(), "--resume", &ckpt, "--out", resumed.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records = parse_metrics(&std::fs::read_to_string(resumed.join("metrics.jsonl")).unwrap()).unwrap();
    assert!(records.iter().all(|r| r.stage == "finetune"));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    bytes[8] = 0;
    let broken = write(dir.path(), "broken.ckpt", &bytes);
    let out = ivit(&["train", "--config", cfg.to_str().unwrap(), "--resume", &broken]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--resume"));
}

#[test]
fn ablation_grid_matches_plain_baseline() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "tiny.cfg", TINY);
    let grid = dir.path().join("grid");
    let out = ivit(&["ablate", "--config", &cfg, "--grid", "--out", grid.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = std::fs::read_to_string(grid.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 9);
    assert_eq!(stdout(&out), summary);
    for tag in ["000", "001", "010", "011", "100", "101", "110", "111"] {
        assert!(grid.join(tag).join("metrics.jsonl").is_file(), "{tag}");
    }

    let base_cfg = write(dir.path(), "base.cfg", format!("{TINY}switches.iq = 0\nswitches.ic = 0\nswitches.gc = 0\n"));
    let base = dir.path().join("base");
    let out = ivit(&["train", "--config", &base_cfg, "--out", base.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(base.join("metrics.jsonl")).unwrap(),
        std::fs::read(grid.join("000").join("metrics.jsonl")).unwrap()
    );
}
