use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use morphnet_ffi::*;

fn last_error() -> String {
    let p = morphnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn build(variant: MorphnetVariant, i: usize, h: usize, o: usize) -> *mut MorphnetModel {
    let mut m = ptr::null_mut();
    let s = unsafe { morphnet_model_build(variant, i, h, o, 2, false, 7, &mut m) };
    assert_eq!(s, MorphnetStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn build_forward_free() {
    let m = build(MorphnetVariant::SparseMorph, 3, 4, 2);
    let (mut d_in, mut d_out, mut census) = (0, 0, 0);
    assert_eq!(
        unsafe { morphnet_model_info(m, &mut d_in, &mut d_out, &mut census) },
        MorphnetStatus::Ok
    );
    assert_eq!((d_in, d_out), (3, 2));
    // i·h + P·h sparse max-plus entries + h bias + h·o + o
    assert_eq!(census, 3 * 4 + 2 * 4 + 4 + 4 * 2 + 2);

    let x = [0.5, -1.0, 2.0, 1.0, 0.0, -0.5];
    let mut out = [0.0; 4];
    assert_eq!(
        unsafe { morphnet_model_forward(m, x.as_ptr(), 2, out.as_mut_ptr(), 4) },
        MorphnetStatus::Ok
    );
    assert!(out.iter().all(|v| v.is_finite()));

    // Each sample alone gives the same logits as in the batch.
    let mut single = [0.0; 2];
    assert_eq!(
        unsafe { morphnet_model_forward(m, x[3..].as_ptr(), 1, single.as_mut_ptr(), 2) },
        MorphnetStatus::Ok
    );
    assert_eq!(&out[2..], &single);

    let s = unsafe { morphnet_model_forward(m, x.as_ptr(), 2, out.as_mut_ptr(), 3) };
    assert_eq!(s, MorphnetStatus::InvalidArgument);
    assert!(last_error().contains("out_len"));
    unsafe { morphnet_model_free(m) };
    unsafe { morphnet_model_free(ptr::null_mut()) };
}

#[test]
fn null_and_invalid_arguments() {
    let s = unsafe { morphnet_model_build(MorphnetVariant::Relu, 3, 4, 2, 2, false, 0, ptr::null_mut()) };
    assert_eq!(s, MorphnetStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut m = ptr::null_mut();
    let s = unsafe { morphnet_model_build(MorphnetVariant::Relu, 0, 4, 2, 2, false, 0, &mut m) };
    assert_eq!(s, MorphnetStatus::InvalidArgument);
    assert!(m.is_null());
    let mut info = 0;
    assert_eq!(
        unsafe { morphnet_model_info(ptr::null(), &mut info, &mut info, &mut info) },
        MorphnetStatus::NullPointer
    );
    let m = build(MorphnetVariant::Relu, 2, 2, 1);
    assert_eq!(
        unsafe { morphnet_model_info(m, &mut info, &mut info, &mut info) },
        MorphnetStatus::Ok
    );
    assert!(morphnet_last_error().is_null());
    unsafe { morphnet_model_free(m) };
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let m = build(MorphnetVariant::DenseMorph, 3, 3, 2);
    assert_eq!(unsafe { morphnet_model_save(m, path.as_ptr()) }, MorphnetStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { morphnet_model_load(path.as_ptr(), &mut loaded) },
        MorphnetStatus::Ok
    );
    let x = [0.3, -0.2, 1.5];
    let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
    unsafe {
        morphnet_model_forward(m, x.as_ptr(), 1, a.as_mut_ptr(), 2);
        morphnet_model_forward(loaded, x.as_ptr(), 1, b.as_mut_ptr(), 2);
    }
    assert_eq!(a, b);
    unsafe {
        morphnet_model_free(m);
        morphnet_model_free(loaded);
    }

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { morphnet_model_load(missing.as_ptr(), &mut out) },
        MorphnetStatus::Io
    );
    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    let bad = CString::new(dir.path().join("bad.json").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { morphnet_model_load(bad.as_ptr(), &mut out) },
        MorphnetStatus::Parse
    );
}

#[test]
fn pruning_counts() {
    let mut remaining = 0;
    let s =
        unsafe { morphnet_prune_remaining(MorphnetVariant::SparseMorph, 512, 512, 50, 2, 0.9, 0.9, &mut remaining) };
    assert_eq!(s, MorphnetStatus::Ok);
    assert_eq!(remaining, 29337);
    let s = unsafe { morphnet_prune_remaining(MorphnetVariant::Relu, 512, 512, 50, 2, 1.0, 0.9, &mut remaining) };
    assert_eq!(s, MorphnetStatus::InvalidArgument);

    let m = build(MorphnetVariant::Relu, 20, 10, 4);
    let mut expected = 0;
    unsafe { morphnet_prune_remaining(MorphnetVariant::Relu, 20, 10, 4, 2, 0.5, 0.5, &mut expected) };
    let (mut left, mut undefined) = (0, 0);
    assert_eq!(
        unsafe { morphnet_model_prune(m, 0.5, 0.5, &mut left, &mut undefined) },
        MorphnetStatus::Ok
    );
    assert_eq!((left, undefined), (expected, 0));
    unsafe { morphnet_model_free(m) };
}

#[test]
fn max_plus_and_metrics() {
    // [[0, 1], [-inf, 2]] ⊞ [3, 4] = [5, 6]; an empty row yields -inf.
    let w = [0.0, 1.0, 9.0, 2.0, 0.0, 0.0];
    let active = [1u8, 1, 0, 1, 0, 0];
    let x = [3.0, 4.0];
    let mut out = [0.0; 3];
    let s = unsafe { morphnet_max_plus_matmul(w.as_ptr(), active.as_ptr(), 3, 2, x.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(s, MorphnetStatus::Ok);
    assert_eq!(out, [5.0, 6.0, f64::NEG_INFINITY]);

    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut v = 0.0;
    assert_eq!(
        unsafe { morphnet_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut v) },
        MorphnetStatus::Ok
    );
    assert_eq!(v, 0.75);
    assert_eq!(
        unsafe { morphnet_pr_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut v) },
        MorphnetStatus::Ok
    );
    assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    let none = [0u8; 4];
    assert_eq!(
        unsafe { morphnet_roc_auc(scores.as_ptr(), none.as_ptr(), 4, &mut v) },
        MorphnetStatus::UndefinedMetric
    );
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/morphnet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "morphnet_model_build",
        "morphnet_model_forward",
        "morphnet_roc_auc",
        "MORPHNET_STATUS_PANIC",
    ] {
        assert!(text.contains(f), "{f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"morphnet.h\"\nint main(void) { MorphnetModel *m = 0; morphnet_model_free(m); return MORPHNET_STATUS_OK; }\n").unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("a C compiler is available");
    assert!(status.success());
}
