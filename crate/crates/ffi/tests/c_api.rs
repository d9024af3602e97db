use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use prunescope_ffi::*;

fn last_error() -> String {
    let p = ps_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"seed": 2,
    "dataset": {"kind": "spirals", "n_per_class_train": 30, "n_per_class_test": 10, "classes": 3, "noise": 0.1},
    "network": {"layer_sizes": [2, 6, 3]},
    "training": {"epochs": 2, "decay_epochs": [1], "rewind_step": 3},
    "pruning": {"levels": 1}}"#;

#[test]
fn config_round_trip_and_errors() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new(r#"{"seed": "x"}"#).unwrap();
        assert_eq!(ps_config_from_json(bad.as_ptr(), &mut cfg), PsStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("configuration"));

        assert_eq!(ps_config_from_json(ptr::null(), &mut cfg), PsStatus::NullArgument);

        assert_eq!(ps_config_default(&mut cfg), PsStatus::Ok);
        let mut buf = [0 as std::ffi::c_char; 65];
        assert_eq!(ps_config_fingerprint(cfg, buf.as_mut_ptr(), 10), PsStatus::InvalidArgument);
        assert_eq!(ps_config_fingerprint(cfg, buf.as_mut_ptr(), buf.len()), PsStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 64);
        ps_config_free(cfg);
        ps_config_free(ptr::null_mut());
    }
}

#[test]
fn inverse_volume_through_the_abi() {
    let eig = [2.0, 4.0, 8.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(ps_inverse_volume(eig.as_ptr(), 3, 3, &mut out), PsStatus::Ok);
        assert!((out - 64f64.ln()).abs() < 1e-12);
        let neg = [1.0, -1.0];
        assert_eq!(ps_inverse_volume(neg.as_ptr(), 2, 2, &mut out), PsStatus::InvalidArgument);
    }
}

#[test]
fn pipeline_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        let json = CString::new(SMALL).unwrap();
        assert_eq!(ps_config_from_json(json.as_ptr(), &mut cfg), PsStatus::Ok);
        let mut p = ptr::null_mut();
        assert_eq!(ps_pipeline_open(cfg, dir.as_ptr(), ptr::null(), &mut p), PsStatus::Ok);
        let stage = CString::new("imp").unwrap();
        assert_eq!(ps_pipeline_run_stage(p, stage.as_ptr()), PsStatus::Ok);
        let nope = CString::new("nope").unwrap();
        assert_eq!(ps_pipeline_run_stage(p, nope.as_ptr()), PsStatus::InvalidArgument);
        ps_pipeline_free(p);
        ps_config_free(cfg);

        let path = CString::new(tmp.path().join("checkpoints/level_01.ckpt").to_str().unwrap()).unwrap();
        let mut cp = ptr::null_mut();
        assert_eq!(ps_checkpoint_load(path.as_ptr(), &mut cp), PsStatus::Ok);
        let n = ps_checkpoint_param_count(cp);
        assert_eq!(n, 2 * 6 + 6 + 6 * 3 + 3);
        assert_eq!(ps_checkpoint_level(cp), 1);
        let mut w = vec![0.0; n];
        let mut m = vec![0u8; n];
        assert_eq!(ps_checkpoint_copy_params(cp, w.as_mut_ptr(), n), PsStatus::Ok);
        assert_eq!(ps_checkpoint_copy_mask(cp, m.as_mut_ptr(), n), PsStatus::Ok);
        assert_eq!(ps_checkpoint_copy_params(cp, w.as_mut_ptr(), n - 1), PsStatus::InvalidArgument);
        // Pruned coordinates hold zeros.
        assert!(w.iter().zip(&m).all(|(x, &b)| b == 1 || *x == 0.0));
        assert!(m.contains(&0));
        ps_checkpoint_free(cp);

        let missing = CString::new(tmp.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(ps_checkpoint_load(missing.as_ptr(), &mut cp), PsStatus::Io);

        let empty = tempfile::tempdir().unwrap();
        let e = CString::new(empty.path().to_str().unwrap()).unwrap();
        assert_eq!(ps_emit_plots(e.as_ptr()), PsStatus::MissingArtifact);
        assert!(last_error().contains("manifest.json"));
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ps_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/prunescope.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "ps_last_error",
        "ps_config_from_json",
        "ps_pipeline_open",
        "ps_pipeline_run_stage",
        "ps_checkpoint_copy_params",
        "ps_inverse_volume",
        "typedef struct PsPipeline PsPipeline",
        "PS_STATUS_MISSING_ARTIFACT = 8",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

/// Compiles and runs a C program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().unwrap().parent().unwrap();
    let lib = target.join("libprunescope_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "prunescope.h"

int main(void) {
    PsConfig *cfg = NULL;
    if (ps_config_from_json("{\"bogus\": 1}", &cfg) != PS_STATUS_CONFIG) return 1;
    if (ps_last_error() == NULL || strstr(ps_last_error(), "bogus") == NULL) return 2;
    if (ps_config_default(&cfg) != PS_STATUS_OK) return 3;
    char fp[65];
    if (ps_config_fingerprint(cfg, fp, sizeof fp) != PS_STATUS_OK || strlen(fp) != 64) return 4;
    ps_config_free(cfg);
    double eig[3] = {2.0, 4.0, 8.0}, v = 0.0;
    if (ps_inverse_volume(eig, 3, 3, &v) != PS_STATUS_OK || fabs(v - log(64.0)) > 1e-12) return 5;
    printf("%s\n", ps_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
