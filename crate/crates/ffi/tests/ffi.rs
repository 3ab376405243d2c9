use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tmreach::dt::{dt_reach, DTSystem, DtOptions};
use tmreach::interval::Radius;
use tmreach::neural::{Activation, MLPNet};
use tmreach::systems::dt_system;
use tmreach::IntervalBox;
use tmreach_ffi::*;

use rand::SeedableRng;

fn last_error() -> String {
    let p = tm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dt_tube_matches_the_library() {
    let name = CString::new("affine").unwrap();
    let center = [1.0, 0.0];
    let radius = [0.1, 0.05];
    let actions = [0.5, -0.5, 0.25];
    let mut tube = ptr::null_mut();
    let st = unsafe { tm_dt_reach_system(name.as_ptr(), center.as_ptr(), 2, radius.as_ptr(), 2, actions.as_ptr(), 3, 4, &mut tube) };
    assert_eq!(st, TmStatus::Ok);
    let sys = DTSystem::analytic(dt_system("affine").unwrap());
    let x0 = IntervalBox::from_center(&center, &Radius::PerDim(radius.to_vec())).unwrap();
    let acts: Vec<Vec<f64>> = actions.iter().map(|&u| vec![u]).collect();
    let want = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
    unsafe {
        assert_eq!(tm_tube_len(tube), want.len());
        assert_eq!(tm_tube_dim(tube), 2);
        assert_eq!(tm_tube_failure_step(tube), -1);
        let (mut lo, mut hi) = ([0.0; 2], [0.0; 2]);
        for k in 0..want.len() {
            assert_eq!(tm_tube_bounds(tube, k, lo.as_mut_ptr(), hi.as_mut_ptr(), 2), TmStatus::Ok);
            assert_eq!(lo.to_vec(), want.steps[k].bx.lower());
            assert_eq!(hi.to_vec(), want.steps[k].bx.upper());
        }
        let mut v = 0.0;
        assert_eq!(tm_tube_volume(tube, &mut v), TmStatus::Ok);
        assert_eq!(v, want.volume());
        let csv = tm_tube_to_csv(tube);
        assert_eq!(CStr::from_ptr(csv).to_str().unwrap(), want.to_csv());
        tm_string_free(csv);
        assert_eq!(tm_tube_bounds(tube, 99, lo.as_mut_ptr(), hi.as_mut_ptr(), 2), TmStatus::InvalidArgument);
        assert_eq!(tm_tube_bounds(tube, 0, lo.as_mut_ptr(), hi.as_mut_ptr(), 3), TmStatus::DimensionMismatch);
        tm_tube_free(tube);
    }
}

#[test]
fn network_handles_round_trip() {
    let net = MLPNet::random(&[3, 8, 2], Activation::Tanh, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
    let json = CString::new(net.to_json().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tm_net_from_json(json.as_ptr(), &mut h), TmStatus::Ok);
        assert_eq!((tm_net_input_dim(h), tm_net_output_dim(h)), (3, 2));
        let x = [0.1, -0.2, 0.3];
        let mut y = [0.0; 2];
        assert_eq!(tm_net_forward(h, x.as_ptr(), 3, y.as_mut_ptr()), TmStatus::Ok);
        assert_eq!(y.to_vec(), net.forward(&x));
        let center = [0.1, -0.2];
        let radius = [0.01];
        let acts = [0.3, 0.0, -0.3];
        let mut tube = ptr::null_mut();
        assert_eq!(tm_dt_reach_net(h, 1, center.as_ptr(), 2, radius.as_ptr(), 1, acts.as_ptr(), 3, 2, &mut tube), TmStatus::Ok);
        assert_eq!(tm_tube_len(tube), 4);
        let want = dt_reach(
            &DTSystem::residual(net.clone()).unwrap(),
            &IntervalBox::from_center(&center, &Radius::Uniform(0.01)).unwrap(),
            &[vec![0.3], vec![0.0], vec![-0.3]],
            &DtOptions { window: 2, rebuild_from_box: false },
        )
        .unwrap();
        let mut v = 0.0;
        assert_eq!(tm_tube_volume(tube, &mut v), TmStatus::Ok);
        assert_eq!(v, want.volume());
        tm_tube_free(tube);
        tm_net_free(h);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let bad = CString::new("{not json").unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(tm_net_from_json(bad.as_ptr(), &mut h), TmStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("json"));
        assert_eq!(tm_net_from_json(ptr::null(), &mut h), TmStatus::NullPointer);
        let name = CString::new("no-such-system").unwrap();
        let c = [0.0];
        let mut tube = ptr::null_mut();
        let st = tm_ct_reach_system(name.as_ptr(), ptr::null(), 0, c.as_ptr(), 1, c.as_ptr(), 1, 0.1, 5, 2, &mut tube);
        assert_eq!(st, TmStatus::InvalidArgument);
        assert!(last_error().contains("no-such-system"));
        let bytes = [0xffu8, 0];
        assert_eq!(tm_net_load(bytes.as_ptr() as *const _, &mut h), TmStatus::InvalidUtf8);
        tm_net_free(ptr::null_mut());
        tm_tube_free(ptr::null_mut());
        assert_eq!(tm_tube_len(ptr::null()), 0);
    }
}

#[test]
fn ct_failure_is_returned_as_a_truncated_tube() {
    let name = CString::new("square").unwrap();
    let c = [10.0];
    let r = [0.0];
    let mut tube = ptr::null_mut();
    unsafe {
        assert_eq!(tm_ct_reach_system(name.as_ptr(), ptr::null(), 0, c.as_ptr(), 1, r.as_ptr(), 1, 1.0, 3, 2, &mut tube), TmStatus::Ok);
        assert_eq!(tm_tube_failure_step(tube), 1);
        let mut v = 0.0;
        assert_eq!(tm_tube_volume(tube, &mut v), TmStatus::Diverged);
        tm_tube_free(tube);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/tmreach.h")).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|r| r.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct TmTube TmTube;"));
    assert!(header.contains("TM_STATUS_DIMENSION_MISMATCH = 3"));
}

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libtmreach_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(&format!("version {}", env!("CARGO_PKG_VERSION"))));
}
