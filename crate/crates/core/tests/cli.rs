#![allow(clippy::unnecessary_cast)]

mod common;

use std::path::Path;

use common::{p, small_pipeline, vnn, vnn_ok};
use vnn_core::data::{read_descriptors, write_descriptors, write_manifest, DescriptorFile, Manifest, ManifestRecord, Split};
use vnn_core::trainer::load_checkpoint;

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_flags_with_defaults() {
    let out = vnn_ok(&["train", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    for (flag, default) in [
        ("--lr", "0.001"),
        ("--momentum", "0.9"),
        ("--weight-decay", "0.0001"),
        ("--clip", "0.01"),
        ("--epochs", "150"),
        ("--batch-size", "8"),
        ("--ngram-sizes", "3,5,7"),
        ("--dprime", "512"),
        ("--circular", "false"),
        ("--seed", "0"),
    ] {
        let line = help.lines().find(|l| l.trim_start().starts_with(flag)).unwrap_or_else(|| panic!("{flag} missing"));
        let rest: String = help.lines().skip_while(|l| !l.trim_start().starts_with(flag)).take(3).collect();
        assert!(rest.contains(&format!("[default: {default}]")), "{flag}: {line}");
    }
    for cmd in ["synth", "embed", "evaluate", "gradcheck"] {
        let out = vnn_ok(&[cmd, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("[default:"), "{cmd}");
    }
}

#[test]
fn ngram_guard_refuses_short_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = vnn(&["synth", "--views", "2", "--ngram-check", "3", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot hold an n-gram of size 3"));
}

#[test]
fn bad_flags_are_config_errors() {
    assert_eq!(vnn(&["train", "--epochs", "many"]).status.code(), Some(2));
    assert_eq!(vnn(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn missing_manifest_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vnn(&["train", "--manifest", p(&dir.path().join("none.json")), "--out", p(&dir.path().join("m.vnc"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn zero_epochs_writes_initial_model_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    vnn_ok(&["synth", "--classes", "2", "--views", "4", "--dim", "4", "--per-class", "3", "--out", p(&data)]);
    let ckpt = dir.path().join("m.vnc");
    vnn_ok(&[
        "train", "--manifest", p(&data.join("manifest.json")), "--out", p(&ckpt), "--epochs", "0",
        "--ngram-sizes", "1", "--dprime", "4",
    ]);
    let cp = load_checkpoint(&ckpt).unwrap();
    assert_eq!(cp.epoch, 0);
    assert!(cp.loss_history.is_empty());
    let log = std::fs::read_to_string(dir.path().join("m.vnc.loss.csv")).unwrap();
    assert!(log.is_empty(), "{log:?}");
}

#[test]
fn embed_rejects_empty_selection_and_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    vnn_ok(&["synth", "--classes", "2", "--views", "4", "--dim", "4", "--per-class", "3", "--out", p(&a)]);
    vnn_ok(&["synth", "--classes", "2", "--views", "4", "--dim", "6", "--per-class", "3", "--out", p(&b)]);
    let ckpt = dir.path().join("m.vnc");
    let ma = a.join("manifest.json");
    vnn_ok(&["train", "--manifest", p(&ma), "--out", p(&ckpt), "--epochs", "1", "--ngram-sizes", "1", "--dprime", "4"]);

    let desc = dir.path().join("d.vnd");
    let out = vnn(&["embed", "--checkpoint", p(&ckpt), "--manifest", p(&ma), "--split", "gallery", "--out", p(&desc)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!stderr(&out).is_empty());

    let out = vnn(&["embed", "--checkpoint", p(&ckpt), "--manifest", p(&b.join("manifest.json")), "--out", p(&desc)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    vnn_ok(&["embed", "--checkpoint", p(&ckpt), "--manifest", p(&ma), "--out", p(&desc)]);
    let file = read_descriptors(&desc).unwrap();
    assert_eq!(file.len(), 6);
    assert_eq!(file.dim, 512);
}

fn one_hot_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut file = DescriptorFile::new(3);
    let mut records = Vec::new();
    for class in 0..3 {
        for k in 0..2 {
            let id = format!("s{class}{k}");
            let mut d = vec![0.0; 3];
            d[class] = 1.0;
            file.push(id.clone(), &d).unwrap();
            records.push(ManifestRecord {
                id: id.clone(),
                class_label: format!("c{class}"),
                class_index: class,
                path: format!("{id}.vnf"),
                split: Split::Test,
            });
        }
    }
    let desc = dir.join("onehot.vnd");
    let manifest = dir.join("manifest.json");
    write_descriptors(&desc, &file).unwrap();
    write_manifest(&manifest, &Manifest { records }).unwrap();
    (desc, manifest)
}

#[test]
fn one_hot_gallery_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (desc, manifest) = one_hot_fixture(dir.path());
    let out = vnn_ok(&["evaluate", "--query", p(&desc), "--manifest", p(&manifest)]);
    let json = String::from_utf8_lossy(&out.stdout);
    assert!(json.contains("\"map\": 1.000000,"), "{json}");
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["micro"]["map"], 1.0);
    assert_eq!(v["macro"]["map"], 1.0);
}

#[test]
fn unreadable_descriptors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = one_hot_fixture(dir.path());
    let junk = dir.path().join("junk.vnd");
    std::fs::write(&junk, b"VND1\x01").unwrap();
    assert_eq!(vnn(&["evaluate", "--query", p(&junk), "--manifest", p(&manifest)]).status.code(), Some(3));
    let missing = dir.path().join("missing.vnd");
    assert_eq!(vnn(&["evaluate", "--query", p(&missing), "--manifest", p(&manifest)]).status.code(), Some(3));
}

#[test]
fn euclidean_changes_only_ranking_fields() {
    let dir = tempfile::tempdir().unwrap();
    let report = small_pipeline(dir.path());
    let manifest = dir.path().join("data").join("manifest.json");
    let desc = dir.path().join("test.vnd");
    let euclid = dir.path().join("euclid.json");
    vnn_ok(&["evaluate", "--query", p(&desc), "--manifest", p(&manifest), "--similarity", "euclidean", "--json", p(&euclid)]);

    let a: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(&euclid).unwrap()).unwrap();
    assert_eq!(a["undefined_queries"], b["undefined_queries"]);
    let (qa, qb) = (a["per_query"].as_array().unwrap(), b["per_query"].as_array().unwrap());
    assert_eq!(qa.len(), qb.len());
    for (x, y) in qa.iter().zip(qb) {
        assert_eq!(x["id"], y["id"]);
        assert_eq!(x["class"], y["class"]);
    }
    let mut oa = a["options"].clone();
    let ob = b["options"].clone();
    assert_eq!(ob["similarity"], "euclidean");
    oa["similarity"] = ob["similarity"].clone();
    assert_eq!(oa, ob);
}

#[test]
#[cfg_attr(feature = "single-precision", ignore = "tolerance assumes f64")]
fn gradcheck_contract() {
    let out = vnn(&["gradcheck", "--step", "1e-5", "--branches", "1,2,3"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("branches ")).count(), 3, "{stdout}");

    for fault in ["relu", "softmax", "layernorm"] {
        let out = vnn(&["gradcheck", "--break-adjoint", fault]);
        assert_eq!(out.status.code(), Some(1), "{fault}");
        assert!(stderr(&out).contains("worst parameter"), "{fault}");
    }
}

#[test]
fn every_subcommand_is_byte_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = small_pipeline(a.path());
    let rb = small_pipeline(b.path());
    for name in ["model.vnc", "model.vnc.loss.csv", "test.vnd"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(std::fs::read(ra).unwrap(), std::fs::read(rb).unwrap());
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    vnn_ok(&["synth", "--classes", "2", "--views", "5", "--dim", "4", "--per-class", "6", "--out", p(&data)]);
    let m = data.join("manifest.json");
    let common = ["--ngram-sizes", "1,2", "--dprime", "4", "--seed", "5"];
    let straight = dir.path().join("straight.vnc");
    let half = dir.path().join("half.vnc");
    let resumed = dir.path().join("resumed.vnc");
    let mut args = vec!["train", "--manifest", p(&m), "--out", p(&straight), "--epochs", "4"];
    args.extend(common);
    vnn_ok(&args);
    let mut args = vec!["train", "--manifest", p(&m), "--out", p(&half), "--epochs", "2"];
    args.extend(common);
    vnn_ok(&args);
    vnn_ok(&["train", "--manifest", p(&m), "--out", p(&resumed), "--resume", p(&half), "--epochs", "4"]);
    assert_eq!(std::fs::read(&straight).unwrap(), std::fs::read(&resumed).unwrap());
}
