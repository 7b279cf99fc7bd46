use std::path::Path;
use std::process::{Command, Output};

fn objnav(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objnav"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn objnav")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const SMALL: &str = r#"
workers = 1

[suite]
master_seed = 3
scene_count = 1
episodes_per_scene = 2

[suite.scene_params]
resolution = 0.1

[[ablation]]
collision = false
exploration = false
detection = false

[[ablation]]
collision = true
exploration = true
detection = true
"#;

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&objnav(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&objnav(&["run"], dir.path())), 1);
    assert_eq!(code(&objnav(&["gen-scenes", "--count", "x", "--out", "d"], dir.path())), 1);
    assert_eq!(code(&objnav(&["--help"], dir.path())), 0);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = objnav(&["run", "--config", "missing.toml", "--out", "r"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
    std::fs::write(dir.path().join("bad.toml"), "[verifier]\nepsilon_fp = 2.0\n").unwrap();
    assert_eq!(code(&objnav(&["run", "--config", "bad.toml", "--out", "r"], dir.path())), 2);
    assert_eq!(code(&objnav(&["render", "--trace", "none.jsonl", "--out", "x.png"], dir.path())), 2);
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&objnav(&["init-config", "--out", "c.toml"], dir.path())), 0);
    let text = std::fs::read_to_string(dir.path().join("c.toml")).unwrap();
    for key in ["forward_step_m = 0.25", "turn_angle_deg = 30.0", "max_steps = 500", "goal_update_interval = 10", "dormant_threshold_m = 0.5", "sleep_time = 20", "detection_threshold = 400"] {
        assert!(text.contains(key), "{key} missing from default config");
    }
}

#[test]
fn generate_run_render_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();

    let o = objnav(&["gen-scenes", "--seed", "3", "--count", "1", "--episodes-per-scene", "2", "--out", "ds"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("ds/episodes.jsonl").exists());

    let o = objnav(&["run", "--config", "small.toml", "--episodes", "ds", "--out", "r", "--maps"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.jsonl", "summary.csv", "metadata.json", "config.json"] {
        assert!(d.join("r").join(f).exists(), "{f}");
    }
    let results = std::fs::read_to_string(d.join("r/results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.contains("config_hash"));
    let meta = std::fs::read_to_string(d.join("r/metadata.json")).unwrap();
    assert!(meta.contains("window_steps"));

    // Same inputs, same bytes.
    let o = objnav(&["run", "--config", "small.toml", "--episodes", "ds", "--out", "r2", "--workers", "2"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(results, std::fs::read_to_string(d.join("r2/results.jsonl")).unwrap());

    let trace = "r/traces/episode_00000.jsonl";
    let o = objnav(&["render", "--trace", trace, "--out", "t.png"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = objnav(&["render", "--trace", trace, "--map", "r/maps/episode_00000.map", "--out", "m.ppm", "--scale", "2"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read(d.join("m.ppm")).unwrap().starts_with(b"P6\n"));
    assert_eq!(code(&objnav(&["render", "--trace", trace, "--out", "/nonexistent-dir/x.png"], d)), 2);
}

#[test]
fn ablate_writes_one_row_per_toggle_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let o = objnav(&["ablate", "--config", "small.toml", "--out", "a"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("a/summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("none,"));
    assert!(lines[2].starts_with("all,"));
    let results = std::fs::read_to_string(d.join("a/results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 4);
}
