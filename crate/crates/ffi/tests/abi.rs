use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pearcey::fredholm::{gap_probability, RegionFamily};
use pearcey::kernels::{KernelSpec, MatrixKernel, PearceyKernel};
use pearcey_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pearcey_last_error()) }.to_string_lossy().into_owned()
}

fn kernel(taus: &[f64]) -> *mut PearceyKernelHandle {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { pearcey_kernel_new(taus.as_ptr(), taus.len(), 1, &mut k) }, PearceyStatus::Ok);
    k
}

#[test]
fn kernel_entries_match_the_library() {
    let k = kernel(&[-0.3, 0.4]);
    let direct = PearceyKernel::new(KernelSpec::pearcey(vec![-0.3, 0.4]).unwrap()).unwrap();
    let mut v = 0.0;
    let mut m = 0;
    unsafe {
        assert_eq!(pearcey_kernel_num_times(k, &mut m), PearceyStatus::Ok);
        assert_eq!(pearcey_kernel_entry(k, 0, 1, 0.2, -0.4, 1, 0, &mut v), PearceyStatus::Ok);
        assert_eq!(pearcey_kernel_entry(k, 2, 0, 0.0, 0.0, 0, 0, &mut v), PearceyStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        pearcey_kernel_entry(k, 0, 1, 0.2, -0.4, 1, 0, &mut v);
        pearcey_kernel_free(k);
    }
    assert_eq!(m, 2);
    assert_eq!(v, direct.entry(0, 1, 0.2, -0.4, 1, 0).unwrap());
    assert!(last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(pearcey_kernel_new(ptr::null(), 1, 1, &mut k), PearceyStatus::NullPointer);
        assert_eq!(pearcey_kernel_num_times(ptr::null(), ptr::null_mut()), PearceyStatus::NullPointer);
        assert_eq!(pearcey_phi(0.0, 1, 0.0, 0, ptr::null_mut()), PearceyStatus::NullPointer);
        pearcey_kernel_free(ptr::null_mut());
        pearcey_system_free(ptr::null_mut());
    }
    assert!(k.is_null());
}

#[test]
fn system_outlives_its_kernel() {
    let k = kernel(&[0.0]);
    let bounds = [-0.5, 0.5];
    let counts = [1usize];
    let mut sys = ptr::null_mut();
    let (mut det, mut one_shot, mut r) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(pearcey_system_new(k, bounds.as_ptr(), counts.as_ptr(), 24, &mut sys), PearceyStatus::Ok);
        assert_eq!(pearcey_gap_probability(k, bounds.as_ptr(), counts.as_ptr(), 24, &mut one_shot), PearceyStatus::Ok);
        pearcey_kernel_free(k);
        assert_eq!(pearcey_system_gap_probability(sys, &mut det), PearceyStatus::Ok);
        assert_eq!(pearcey_system_resolvent(sys, 0, 0.1, 0, -0.2, 0, 0, &mut r), PearceyStatus::Ok);
        let mut grad = [0.0; 2];
        let mut len = 0;
        assert_eq!(pearcey_system_log_det_gradient(sys, grad.as_mut_ptr(), 1, &mut len), PearceyStatus::BufferTooSmall);
        assert_eq!(len, 2);
        assert_eq!(pearcey_system_log_det_gradient(sys, grad.as_mut_ptr(), 2, &mut len), PearceyStatus::Ok);
        // the gap widens symmetrically, so the endpoint derivatives are opposite
        assert!((grad[0] + grad[1]).abs() < 1e-10);
        pearcey_system_free(sys);
    }
    let direct = PearceyKernel::new(KernelSpec::pearcey(vec![0.0]).unwrap()).unwrap();
    let want = gap_probability(&direct, &RegionFamily::intervals(&[[-0.5, 0.5]]).unwrap(), 24).unwrap();
    assert_eq!(det, want);
    assert_eq!(one_shot, want);
    assert!(r.is_finite());
}

#[test]
fn finite_n_and_errors() {
    let ends = [-1.0, 1.0];
    let taus = [0.5];
    let mut k = ptr::null_mut();
    let mut v = 0.0;
    unsafe {
        assert_eq!(
            pearcey_finite_n_kernel_new(ptr::null(), ends.as_ptr(), 2, taus.as_ptr(), 1, &mut k),
            PearceyStatus::Ok
        );
        assert_eq!(pearcey_kernel_entry(k, 0, 0, 0.1, 0.1, 0, 0, &mut v), PearceyStatus::Ok);
        pearcey_kernel_free(k);
        let bad = [1.5];
        assert_eq!(
            pearcey_finite_n_kernel_new(ptr::null(), ends.as_ptr(), 2, bad.as_ptr(), 1, &mut k),
            PearceyStatus::InvalidArgument
        );
        let (mut re, mut im, mut len) = ([0.0; 3], [0.0; 3], 0);
        assert_eq!(pearcey_roots(9, re.as_mut_ptr(), im.as_mut_ptr(), 3, &mut len), PearceyStatus::InvalidArgument);
        assert_eq!(pearcey_roots(3, re.as_mut_ptr(), im.as_mut_ptr(), 3, &mut len), PearceyStatus::Ok);
        assert_eq!(len, 3);
    }
    assert!(v > 0.0);
    assert_eq!(unsafe { CStr::from_ptr(pearcey_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpearcey_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let det: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(det > 0.0 && det < 1.0);
}
