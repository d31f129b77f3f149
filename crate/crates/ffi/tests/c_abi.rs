use std::ffi::{CStr, CString};
use std::ptr;

use vnn_core::rng::{set_seed, Generator};
use vnn_core::trainer::{save_checkpoint, TrainConfig, Trainer};
use vnn_core::vnn::{ViewEmbeddingMatrix, DESCRIPTOR_DIM};
use vnn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(vnn_last_error_message()) }.to_string_lossy().into_owned()
}

fn views(rng: &mut Generator, v: usize, d: usize) -> Vec<f32> {
    (0..v * d).map(|_| rng.standard_normal() as f32).collect()
}

fn init(d: usize, c: usize, branches: &[usize]) -> *mut VnnModel {
    let mut handle = ptr::null_mut();
    let status = unsafe { vnn_model_init(d, c, branches.as_ptr(), branches.len(), 8, 3, &mut handle) };
    assert_eq!(status, VnnStatus::Ok, "{}", last_error());
    handle
}

#[test]
fn descriptor_matches_core() {
    let config = TrainConfig { branch_sizes: vec![2, 3], d_prime: 8, seed: 3, ..TrainConfig::default() };
    let core = Trainer::new(config, 5, 4).unwrap().model;
    let handle = init(5, 4, &[2, 3]);
    let x = views(&mut set_seed(11), 6, 5);

    let mut out = vec![0f32; DESCRIPTOR_DIM];
    let status = unsafe { vnn_model_descriptor(handle, x.as_ptr(), 6, 5, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, VnnStatus::Ok);
    let m = ViewEmbeddingMatrix::new(6, 5, x.iter().map(|&v| v as _).collect()).unwrap();
    let expected = core.descriptor(&m).unwrap();
    for (a, b) in out.iter().zip(&expected.0) {
        assert_eq!(*a, *b as f32);
    }

    let mut logits = vec![0f32; 4];
    let status = unsafe { vnn_model_logits(handle, x.as_ptr(), 6, 5, logits.as_mut_ptr(), 4) };
    assert_eq!(status, VnnStatus::Ok);
    let (expected, _) = core.forward(&m).unwrap();
    for (a, b) in logits.iter().zip(&expected) {
        assert_eq!(*a, *b as f32);
    }
    unsafe {
        assert_eq!(vnn_model_input_dim(handle), 5);
        assert_eq!(vnn_model_num_classes(handle), 4);
        assert_eq!(vnn_model_descriptor_dim(handle), DESCRIPTOR_DIM);
        assert_eq!(vnn_model_min_views(handle), 3);
        vnn_model_free(handle);
    }
}

#[test]
fn load_round_trips_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vnc");
    let config = TrainConfig { branch_sizes: vec![1], d_prime: 4, ..TrainConfig::default() };
    let trainer = Trainer::new(config, 3, 2).unwrap();
    save_checkpoint(&path, &trainer.checkpoint()).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { vnn_model_load(c_path.as_ptr(), &mut handle) }, VnnStatus::Ok);
    let x = [0.5f32, -1.0, 2.0, 1.0, 0.0, 0.25];
    let mut out = vec![0f32; DESCRIPTOR_DIM];
    let status = unsafe { vnn_model_descriptor(handle, x.as_ptr(), 2, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, VnnStatus::Ok);
    let m = ViewEmbeddingMatrix::new(2, 3, x.iter().map(|&v| v as _).collect()).unwrap();
    let expected = trainer.model.descriptor(&m).unwrap();
    assert!(out.iter().zip(&expected.0).all(|(a, b)| *a == *b as f32));
    unsafe { vnn_model_free(handle) };
}

#[test]
fn load_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.vnc").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { vnn_model_load(missing.as_ptr(), &mut handle) }, VnnStatus::Io);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let junk = dir.path().join("junk.vnc");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vnn_model_load(junk.as_ptr(), &mut handle) }, VnnStatus::Format);

    assert_eq!(unsafe { vnn_model_load(ptr::null(), &mut handle) }, VnnStatus::NullPointer);
    assert_eq!(last_error(), "path is null");
}

#[test]
fn shape_and_buffer_errors() {
    let handle = init(4, 2, &[3]);
    let x = [0.1f32; 2 * 4];
    let mut out = vec![0f32; DESCRIPTOR_DIM];
    // two views cannot feed a non-circular 3-gram branch
    let s = unsafe { vnn_model_descriptor(handle, x.as_ptr(), 2, 4, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, VnnStatus::Config, "{}", last_error());
    let x = [0.1f32; 3 * 5];
    let s = unsafe { vnn_model_descriptor(handle, x.as_ptr(), 3, 5, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, VnnStatus::Dimension);
    let x = [0.1f32; 3 * 4];
    let s = unsafe { vnn_model_descriptor(handle, x.as_ptr(), 3, 4, out.as_mut_ptr(), 10) };
    assert_eq!(s, VnnStatus::BufferTooSmall);
    assert!(last_error().contains("512"));
    let s = unsafe { vnn_model_descriptor(ptr::null(), x.as_ptr(), 3, 4, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, VnnStatus::NullPointer);
    unsafe {
        assert_eq!(vnn_model_input_dim(ptr::null()), 0);
        vnn_model_free(handle);
        vnn_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_init_is_config_error() {
    let mut handle = ptr::null_mut();
    let s = unsafe { vnn_model_init(4, 2, ptr::null(), 0, 8, 0, &mut handle) };
    assert_eq!(s, VnnStatus::Config, "{}", last_error());
    assert!(handle.is_null());
}

#[test]
fn metric_entry_points() {
    let mut v = 0.0;
    let rel = [1u8, 0, 1];
    assert_eq!(unsafe { vnn_average_precision(rel.as_ptr(), 3, &mut v) }, VnnStatus::Ok);
    assert!((v - 5.0 / 6.0).abs() < 1e-12);

    assert_eq!(unsafe { vnn_f_measure_at(rel.as_ptr(), 3, 2, 2, &mut v) }, VnnStatus::Ok);
    assert!((v - 0.5).abs() < 1e-12);

    let gains = [0.0, 1.0, 1.0];
    assert_eq!(unsafe { vnn_ndcg_at(gains.as_ptr(), 3, 3, &mut v) }, VnnStatus::Ok);
    let dcg = 1.0 / 3f64.log2() + 1.0 / 4f64.log2();
    let idcg = 1.0 + 1.0 / 3f64.log2();
    assert!((v - dcg / idcg).abs() < 1e-12);

    let zeros = [0.0; 3];
    assert_eq!(unsafe { vnn_ndcg_at(zeros.as_ptr(), 3, 3, &mut v) }, VnnStatus::UndefinedMetric);
    assert_eq!(unsafe { vnn_ndcg_at(gains.as_ptr(), 3, 0, &mut v) }, VnnStatus::InvalidArgument);
    assert_eq!(unsafe { vnn_average_precision(ptr::null(), 2, &mut v) }, VnnStatus::NullPointer);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/vnn.h");
    for name in [
        "vnn_last_error_message",
        "vnn_version",
        "vnn_model_load",
        "vnn_model_init",
        "vnn_model_free",
        "vnn_model_input_dim",
        "vnn_model_num_classes",
        "vnn_model_descriptor_dim",
        "vnn_model_min_views",
        "vnn_model_descriptor",
        "vnn_model_logits",
        "vnn_average_precision",
        "vnn_f_measure_at",
        "vnn_ndcg_at",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct VnnModel VnnModel;"));
    assert!(header.contains("VNN_STATUS_OK = 0"));
    let version = unsafe { CStr::from_ptr(vnn_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}
