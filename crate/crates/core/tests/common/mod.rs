#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use vnn_core::data::{encode_view_features, generate_synthetic, split_dataset, Sample, Split, SyntheticSpec};

/// The order-sensitivity fixture: equals `vnn synth --seed 7` with defaults.
pub const FIXTURE_SEED: u64 = 7;

pub fn fixture_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 4,
        confusable_pairs: 2,
        views: 12,
        dim: 32,
        per_class: 150,
        sigma: 0.05,
        seed: FIXTURE_SEED,
    }
}

pub struct Fixture {
    pub train: Vec<Sample>,
    /// Test samples with their class labels.
    pub test: Vec<(Sample, String)>,
    pub digest: u64,
}

pub fn fixture() -> Fixture {
    let ds = generate_synthetic(&fixture_spec()).unwrap();
    let (manifest, _) = split_dataset(
        &ds.manifest(),
        &[(Split::Train, 1.0 - 1.0 / 3.0), (Split::Test, 1.0 / 3.0)],
        FIXTURE_SEED,
    )
    .unwrap();
    let mut digest = Fnv::new();
    digest.write(manifest.to_json().as_bytes());
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, r) in ds.samples.iter().zip(&manifest.records) {
        assert_eq!(s.id, r.id);
        digest.write(&encode_view_features(&s.views).unwrap());
        let sample = Sample { id: s.id.clone(), label: s.class_index, views: s.views.clone() };
        match r.split {
            Split::Train => train.push(sample),
            _ => test.push((sample, s.class_label.clone())),
        }
    }
    Fixture { train, test, digest: digest.0 }
}

/// FNV-1a, enough to pin generated bytes against a committed value.
pub struct Fnv(pub u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
}

pub fn vnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnn")).args(args).output().expect("vnn binary runs")
}

pub fn vnn_ok(args: &[&str]) -> Output {
    let out = vnn(args);
    assert!(
        out.status.success(),
        "vnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth -> train -> embed -> evaluate on a small dataset inside `dir`.
/// Returns the report path.
pub fn small_pipeline(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let ckpt = dir.join("model.vnc");
    let desc = dir.join("test.vnd");
    let report = dir.join("report.json");
    vnn_ok(&[
        "synth", "--classes", "4", "--views", "8", "--dim", "8", "--per-class", "12", "--seed", "3",
        "--out", p(&data),
    ]);
    let manifest = data.join("manifest.json");
    vnn_ok(&[
        "train", "--manifest", p(&manifest), "--out", p(&ckpt), "--epochs", "5", "--dprime", "8",
        "--ngram-sizes", "1,3", "--seed", "3",
    ]);
    vnn_ok(&[
        "embed", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--split", "test", "--out", p(&desc),
    ]);
    vnn_ok(&["evaluate", "--query", p(&desc), "--manifest", p(&manifest), "--json", p(&report)]);
    report
}
