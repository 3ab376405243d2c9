use std::path::{Path, PathBuf};
use std::process::Command;

use tmreach::cli::Manifest;
use tmreach::tube::ReachTube;

const BIN: &str = env!("CARGO_BIN_EXE_tmreach");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn tmreach(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(BIN).args(args).arg("--out").arg(out).output().unwrap();
    status.status.code().unwrap()
}

const AFFINE: &[&str] = &[
    "reach-dt",
    "--system",
    "affine",
    "--x0-center",
    "1,0",
    "--eps",
    "0.1,0.05",
    "--actions",
    "0.5;-0.5;0.25;0;1;-1;0.5;0.5",
    "--seed",
    "0",
];

#[test]
fn affine_tube_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tmreach(AFFINE, dir.path()), 0);
    let got = std::fs::read(dir.path().join("tube.csv")).unwrap();
    assert_eq!(got, std::fs::read(data("affine_reach_dt.csv")).unwrap());
}

#[test]
fn golden_file_is_the_affine_closed_form() {
    // x' = A x + B u + d with A = 0.95 R, R a rotation by atan2(0.8, 0.6)
    let a = [[0.57, -0.76], [0.76, 0.57]];
    let b = [0.0, 0.1];
    let d = [0.05, 0.0];
    let us = [0.5, -0.5, 0.25, 0.0, 1.0, -1.0, 0.5, 0.5];
    let tube = ReachTube::from_csv(&std::fs::read_to_string(data("affine_reach_dt.csv")).unwrap()).unwrap();
    let mut c: [f64; 2] = [1.0, 0.0];
    let mut p: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];
    let r = [0.1, 0.05];
    for k in 0..=us.len() {
        for i in 0..2 {
            let rad = p[i][0].abs() * r[0] + p[i][1].abs() * r[1];
            let iv = tube.steps[k].bx.dims[i];
            assert!((iv.lo - (c[i] - rad)).abs() < 1e-12, "step {k} dim {i}");
            assert!((iv.hi - (c[i] + rad)).abs() < 1e-12, "step {k} dim {i}");
        }
        if k < us.len() {
            let u = us[k];
            c = [
                a[0][0] * c[0] + a[0][1] * c[1] + b[0] * u + d[0],
                a[1][0] * c[0] + a[1][1] * c[1] + b[1] * u + d[1],
            ];
            p = [
                [a[0][0] * p[0][0] + a[0][1] * p[1][0], a[0][0] * p[0][1] + a[0][1] * p[1][1]],
                [a[1][0] * p[0][0] + a[1][1] * p[1][0], a[1][0] * p[0][1] + a[1][1] * p[1][1]],
            ];
        }
    }
}

#[test]
fn bad_dimensions_exit_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = tmreach(&["reach-dt", "--system", "affine", "--x0-center", "1,0,0"], &out);
    assert_eq!(code, 3);
    assert!(!out.exists());
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tmreach(&["reach-ct", "--order", "x"], dir.path()), 2);
    let help = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8(help.stdout).unwrap();
    for cmd in ["reach-ct", "reach-dt", "reach-cl", "split", "refine", "train-dt", "train-ctl", "mpc", "bench", "replay"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn same_seed_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let scenario = data("pendulum_scenario.json");
    let args = ["mpc", "--scenario", scenario.to_str().unwrap(), "--seed", "5"];
    assert_eq!(tmreach(&args, &a), 0);
    assert_eq!(tmreach(&args, &b), 0);
    for f in ["manifest.json", "mpc_log.csv", "outcome.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = Manifest::load(a.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.inputs.len(), 1);
}

#[test]
fn replay_subcommand_reproduces_a_closed_loop_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["reach-cl", "--x0-center", "0,0,1,0,0,0,0,0,0,0,0,0", "--eps", "0.005", "--steps", "4", "--reference", "0.5,0,0"];
    assert_eq!(tmreach(&args, &a), 0);
    let manifest = a.join("manifest.json");
    assert_eq!(tmreach(&["replay", manifest.to_str().unwrap()], &b), 0);
    for f in ["manifest.json", "tube.csv", "tube.json", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn split_and_baseline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["split", "--system", "rotation", "--x0-center", "1,0", "--eps", "0.1", "--steps", "30", "--split", "uniform:2", "--baseline", "interval"];
    assert_eq!(tmreach(&args, dir.path()), 0);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(s["volume"].as_f64().unwrap() < s["baseline_volume"].as_f64().unwrap());
    assert!(dir.path().join("baseline.csv").exists());
}

#[test]
fn sound_rounding_only_widens() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let base = ["reach-ct", "--system", "rotation", "--x0-center", "1,0", "--eps", "0.1", "--steps", "20"];
    assert_eq!(tmreach(&base, &a), 0);
    let mut sound = base.to_vec();
    sound.push("--sound-rounding");
    assert_eq!(tmreach(&sound, &b), 0);
    let ta = ReachTube::from_csv(&std::fs::read_to_string(a.join("tube.csv")).unwrap()).unwrap();
    let tb = ReachTube::from_csv(&std::fs::read_to_string(b.join("tube.csv")).unwrap()).unwrap();
    for (x, y) in ta.steps.iter().zip(&tb.steps) {
        assert!(x.bx.subset_of(&y.bx));
    }
    assert!(Manifest::load(b.join("manifest.json")).unwrap().sound_rounding);
}

#[test]
fn bench_reports_timings() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tmreach(&["bench", "--system", "decay", "--x0-center", "1", "--steps", "10", "--repeats", "2"], dir.path()), 0);
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(b["runs_ms"].as_array().unwrap().len(), 2);
}
