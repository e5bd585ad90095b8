use mmdemo::pointcloud::{preprocess, CameraExtrinsic, PointCloud, PreprocessParams};
use mmdemo::Pose;
use nalgebra::Vector3;
use std::path::Path;
use std::process::{Command, Output};

fn mmdemo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmdemo")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn retime_bang_bang_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("line.csv");
    std::fs::write(&path, "q0\n0\n1\n").unwrap();
    let o = mmdemo(&["retime", "--path", p(&path), "--vmax", "1", "--amax", "1", "--grid", "201"]);
    assert!(o.status.success());
    let t: f64 = stdout(&o).trim().strip_prefix("duration_s: ").unwrap().parse().unwrap();
    assert!((t - 2.0).abs() <= 0.02 * 2.0, "{t}");
}

#[test]
fn pc_matches_module_composition() {
    let dir = tempfile::tempdir().unwrap();
    let mut pts: Vec<Vector3<f64>> = (0..2000).map(|i| Vector3::new((i % 20) as f64 * 0.01, (i / 20 % 10) as f64 * 0.01, (i / 200) as f64 * 0.01)).collect();
    pts.push(Vector3::new(2.0, 2.0, 2.0));
    let cloud = PointCloud::new(pts, "world");
    let input = dir.path().join("in.mbpc");
    let output = dir.path().join("out.mbpc");
    cloud.write(&input).unwrap();
    let o = mmdemo(&["pc", "--input", p(&input), "--voxel", "0.05", "--sor-k", "8", "--sor-std", "1.0", "--out", p(&output)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = PointCloud::read(&input).unwrap();
    let expected = preprocess(
        &[(CameraExtrinsic { id: 0, camera_to_world: Pose::identity() }, read)],
        &PreprocessParams { voxel: 0.05, sor_k: 8, sor_std: 1.0, crop: None },
    )
    .unwrap();
    assert_eq!(std::fs::read(&output).unwrap(), expected.to_bytes());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = mmdemo(&["retime", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mmdemo(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "demo_counts = [0]\n").unwrap();
    assert_eq!(mmdemo(&["bench", "--config", p(&cfg)]).status.code(), Some(3));
    std::fs::write(&cfg, "demo_counts = \"many\"\n").unwrap();
    assert_eq!(mmdemo(&["bench", "--config", p(&cfg)]).status.code(), Some(3));
    assert_eq!(mmdemo(&["generate", "--task", "juggle", "--episodes", "1", "--out", p(dir.path())]).status.code(), Some(3));
}

#[test]
fn missing_or_corrupt_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mbpc");
    std::fs::write(&bad, b"NOPE....").unwrap();
    let o = mmdemo(&["pc", "--input", p(&bad), "--out", p(&dir.path().join("o.mbpc"))]);
    assert_eq!(o.status.code(), Some(4));
    let o = mmdemo(&["retime", "--path", p(&dir.path().join("absent.csv")), "--vmax", "1", "--amax", "1"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mmdemo(&["generate", "--task", "pick-place", "--episodes", "3", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), "kept 3/3");
    }
    assert_eq!(snapshot(&a), snapshot(&b));
    let c = dir.path().join("c");
    let o = mmdemo(&["generate", "--task", "pick-place", "--episodes", "3", "--seed", "7", "--workers", "3", "--out", p(&c)]);
    assert!(o.status.success());
    assert_eq!(snapshot(&a), snapshot(&c));
}

#[test]
fn single_episode_toy_scene_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmdemo(&["generate", "--task", "reach", "--episodes", "1", "--out", p(dir.path())]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "kept 1/1");
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let pol = dir.path().join("policy");
    assert!(mmdemo(&["generate", "--task", "reach", "--episodes", "4", "--out", p(&data)]).status.success());
    let o = mmdemo(&["train", "--data", p(&data), "--out", p(&pol), "--steps", "30", "--warmup", "3", "--hidden", "32,32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loss = std::fs::read_to_string(pol.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 31);
    let o = mmdemo(&["eval", "--policy", p(&pol), "--task", "reach", "--episodes", "2"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("successes "));
    // A policy trained on one task cannot drive a task with other widths.
    let o = mmdemo(&["eval", "--policy", p(&pol), "--task", "pick-place", "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plan_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.csv");
    let o = mmdemo(&["plan", "--goal", "0.8,0.2,0.6", "--waypoints", "12", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 13);
    assert_eq!(mmdemo(&["plan", "--goal", "1,2"]).status.code(), Some(3));
}

#[test]
fn single_cell_bench_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "tasks = [\"reach\"]\ndemo_counts = [3]\nrollouts = 2\nseeds = [0]\n[train]\nsteps = 20\nwarmup = 2\nhidden = [16, 16]\n").unwrap();
    let out = dir.path().join("bench.csv");
    let o = mmdemo(&["bench", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,demos,rollouts,successes,rate");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("reach,3,2,"));
    let again = dir.path().join("again.csv");
    assert!(mmdemo(&["bench", "--config", p(&cfg), "--out", p(&again)]).status.success());
    assert_eq!(csv, std::fs::read_to_string(&again).unwrap());
}
