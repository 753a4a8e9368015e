//! Drives the `reid` binary through the whole pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tracklet_reid::io::{read_dataset, read_json, read_pairs, write_pairs, EmbeddingFile, PairLabel, PairRecord};
use tracklet_reid::metrics::MetricReport;
use tracklet_reid::reid::GroupingPartition;

fn reid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reid"))
        .args(args)
        .env("REID_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = reid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn p(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }
}

fn train_small(d: &Dir, data: &str, out: &str) {
    ok(&[
        "train", "--seed", "3", "--data", &d.s(data), "--out", &d.s(out), "--frame-steps", "15", "--joint-steps", "10",
        "--loss-curve", &d.s(&format!("{out}.csv")),
    ]);
}

#[test]
fn full_pipeline() {
    let d = Dir::new();
    let gen_out = ok(&[
        "gen", "--seed", "5", "--procedures", "24", "--out", &d.s("d.jsonl"), "--frame-scores", &d.s("fs.csv"),
        "--classes", &d.s("classes.json"),
    ]);
    assert!(gen_out.contains("tracklets"));
    let data_before = fs::read(d.p("d.jsonl")).unwrap();

    train_small(&d, "d.jsonl", "m.trw");
    let curve = fs::read_to_string(d.p("m.trw.csv")).unwrap();
    assert!(curve.starts_with("step,loss\n"));
    assert_eq!(curve.lines().count(), 26);

    ok(&["embed", "--model", &d.s("m.trw"), "--data", &d.s("d.jsonl"), "--out", &d.s("e.emb")]);
    let emb = EmbeddingFile::load(&d.p("e.emb")).unwrap();
    let n = read_dataset(&d.p("d.jsonl")).unwrap().len();
    assert_eq!(emb.ids.len(), n);
    ok(&["embed", "--model", &d.s("m.trw"), "--data", &d.s("d.jsonl"), "--out", &d.s("f.emb"), "--kind", "frame"]);
    assert!(EmbeddingFile::load(&d.p("f.emb")).unwrap().ids[0].contains(':'));

    ok(&["score", "--model", &d.s("m.trw"), "--data", &d.s("d.jsonl"), "--out", &d.s("p.csv")]);
    let pairs = read_pairs(&d.p("p.csv")).unwrap();
    assert!(pairs.iter().all(|p| p.score.is_some() && p.label != PairLabel::Unknown));

    let cal = ok(&["calibrate", "--pairs", &d.s("p.csv"), "--target-fpr", "0.05", "--out", &d.s("cal.json")]);
    assert!(cal.contains("threshold"));
    ok(&["group", "--data", &d.s("d.jsonl"), "--pairs", &d.s("p.csv"), "--calibration", &d.s("cal.json"), "--out", &d.s("part.json")]);
    let part: GroupingPartition = read_json(&d.p("part.json")).unwrap();
    assert_eq!(part.groups.values().map(Vec::len).sum::<usize>(), n);

    ok(&[
        "eval-reid", "--pairs", &d.s("p.csv"), "--partition", &d.s("part.json"), "--data", &d.s("d.jsonl"), "--out",
        &d.s("r.json"),
    ]);
    let report: MetricReport = read_json(&d.p("r.json")).unwrap();
    assert!(report.auroc.is_some() && report.fr.is_some());
    let raw: serde_json::Value = read_json(&d.p("r.json")).unwrap();
    let keys: Vec<&String> = raw.as_object().unwrap().keys().collect();
    for k in ["auroc", "auprc", "fr", "fr_std", "fragmented_ratio", "impurity", "f1_macro", "f1_micro", "sens_at_spec", "threshold"] {
        assert!(keys.iter().any(|x| *x == k), "missing {k}");
    }

    let cadx = ok(&[
        "eval-cadx", "--data", &d.s("d.jsonl"), "--frame-scores", &d.s("fs.csv"), "--classes", &d.s("classes.json"),
        "--partition", &d.s("part.json"), "--out", &d.s("cadx.json"),
    ]);
    assert!(cadx.contains("oracle") && cadx.contains("fragmented") && cadx.contains("reid"));
    let cadx_json: serde_json::Value = read_json(&d.p("cadx.json")).unwrap();
    assert_eq!(cadx_json["oracle"]["fr"], 1.0);

    assert_eq!(fs::read(d.p("d.jsonl")).unwrap(), data_before, "inputs are never modified");
}

#[test]
fn gen_train_embed_are_byte_identical_across_runs() {
    let d = Dir::new();
    for run in ["a", "b"] {
        ok(&["gen", "--seed", "9", "--procedures", "20", "--out", &d.s(&format!("{run}.jsonl"))]);
        train_small(&d, &format!("{run}.jsonl"), &format!("{run}.trw"));
        ok(&["embed", "--model", &d.s(&format!("{run}.trw")), "--data", &d.s(&format!("{run}.jsonl")), "--out", &d.s(&format!("{run}.emb"))]);
    }
    for ext in ["jsonl", "trw", "trw.csv", "emb"] {
        assert_eq!(fs::read(d.p(&format!("a.{ext}"))).unwrap(), fs::read(d.p(&format!("b.{ext}"))).unwrap(), "{ext} differs");
    }
}

#[test]
fn thread_count_does_not_change_training() {
    let d = Dir::new();
    ok(&["gen", "--seed", "2", "--procedures", "20", "--out", &d.s("d.jsonl")]);
    let train = |threads: &str, out: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_reid"))
            .args(["train", "--seed", "1", "--data", &d.s("d.jsonl"), "--out", &d.s(out), "--frame-steps", "3", "--joint-steps", "5"])
            .env("REID_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
    };
    train("1", "one.trw");
    train("3", "three.trw");
    assert_eq!(fs::read(d.p("one.trw")).unwrap(), fs::read(d.p("three.trw")).unwrap());
}

fn write_fixture(path: &Path, scores: &[(u64, u64, bool, f64)]) {
    let pairs: Vec<PairRecord> = scores
        .iter()
        .map(|&(a, b, same, s)| PairRecord {
            tracklet_a: a,
            tracklet_b: b,
            label: if same { PairLabel::Same } else { PairLabel::Diff },
            score: Some(s),
        })
        .collect();
    write_pairs(path, &pairs).unwrap();
}

#[test]
fn eval_reid_on_perfect_separation() {
    let d = Dir::new();
    // labels with uninformative scores, and separate scores that separate perfectly
    write_fixture(&d.p("p.csv"), &[(0, 1, true, 0.0), (0, 2, false, 0.0), (1, 2, false, 0.0), (3, 4, true, 0.0)]);
    write_fixture(&d.p("s.csv"), &[(0, 1, true, 0.9), (0, 2, true, 0.2), (2, 1, true, 0.1), (3, 4, true, 0.7)]);
    ok(&["eval-reid", "--pairs", &d.s("p.csv"), "--scores", &d.s("s.csv"), "--out", &d.s("r.json")]);
    let report: MetricReport = read_json(&d.p("r.json")).unwrap();
    assert_eq!(report.auroc, Some(1.0));
    assert_eq!(report.auprc, Some(1.0));
}

#[test]
fn exit_codes() {
    let d = Dir::new();
    assert_eq!(reid(&["nonsense"]).status.code(), Some(1));
    assert_eq!(reid(&["train", "--data", "x"]).status.code(), Some(1));
    assert_eq!(reid(&["gen", "--seed", "1", "--out", &d.s("x"), "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(reid(&["embed", "--model", &d.s("missing.trw"), "--data", &d.s("x"), "--out", &d.s("e")]).status.code(), Some(2));
    fs::write(d.p("bad.csv"), "a,b\n1,2\n").unwrap();
    let out = reid(&["calibrate", "--pairs", &d.s("bad.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn gradcheck_subcommand_reports_every_layer() {
    let d = Dir::new();
    let out = ok(&["gradcheck", "--seeds", "1", "--out", &d.s("g.json")]);
    for layer in ["linear", "attention", "joint_encoder", "nt_xent_joint_encoder"] {
        assert!(out.contains(layer), "{layer} missing");
    }
    let report: serde_json::Value = read_json(&d.p("g.json")).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 16);
}
