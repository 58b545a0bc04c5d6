use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[data]
signal = "data/signal.csv"
markers = "data/markers.csv"

[output]
dir = "out"

[synth]
seed = 3
noise_sigma_uv = 2.0
trials_per_class_per_session = 12

[[synth.sources]]
band = { low_hz = 8.0, high_hz = 12.0 }
mixing = [0.2, 0.1, 0.3, -0.1, 0.4, 0.2, 0.0, 0.0, 1.0, 0.7, 0.9, 1.2]
power_by_class = [16.0, 8.0, 4.0]

[experiment]
pairs = [[0, 2]]
windows = [2.0]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_fbcsp"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_data_and_ground_truth_deterministically() {
    let ws = Workspace::new(BASE);
    ws.ok(&["simulate", "-c", "run.toml"]);
    let signal = ws.read("data/signal.csv");
    assert_eq!(signal.lines().next().unwrap(), "F3,F4,F7,F8,FC5,FC6,T7,T8,P7,P8,O1,O2");
    assert_eq!(ws.read("data/markers.csv").lines().count(), 1 + 3 * 4 * 12);
    let truth: serde_json::Value = serde_json::from_str(&ws.read("out/ground_truth.json")).unwrap();
    assert_eq!(truth["informative_sources"].as_array().unwrap().len(), 1);

    ws.ok(&["simulate", "-c", "run.toml"]);
    assert_eq!(ws.read("data/signal.csv"), signal);
    ws.ok(&["simulate", "-c", "run.toml", "--seed", "4"]);
    assert_ne!(ws.read("data/signal.csv"), signal);
}

#[test]
fn missing_seed_is_a_validation_error() {
    let ws = Workspace::new(&BASE.replace("seed = 3\n", ""));
    let out = ws.run(&["simulate", "-c", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn train_evaluate_inspect_round_trip() {
    let ws = Workspace::new(BASE);
    ws.ok(&["simulate", "-c", "run.toml"]);
    let trained = ws.ok(&["train", "-c", "run.toml"]);
    let listing: Vec<String> = {
        let mut v: Vec<String> = std::fs::read_dir(ws.path("out/models"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        listing,
        [
            "BP_AllF_0v2_2s.json",
            "BP_FS_0v2_2s.json",
            "BP_FS_0v2_2s_cv.csv",
            "FBCSP_AllF_0v2_2s.json",
            "FBCSP_FS_0v2_2s.json",
            "FBCSP_FS_0v2_2s_cv.csv",
        ]
    );
    assert!(String::from_utf8_lossy(&trained.stdout).contains("cv accuracy"));
    let model = ws.read("out/models/FBCSP_FS_0v2_2s.json");

    let evaluated = ws.ok(&["evaluate", "-c", "run.toml"]);
    let summary = ws.read("out/summary.csv");
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("model,pair,window,accuracy,n_train,n_test,n_rejected,status\n"));
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",ok")));
    assert!(String::from_utf8_lossy(&evaluated.stdout).contains("FBCSP_FS"));
    let report = ws.read("out/reports/FBCSP_FS_0v2_2s.json");

    let single = ws.ok(&["evaluate", "-c", "run.toml", "out/models/BP_AllF_0v2_2s.json"]);
    assert_eq!(ws.read("out/summary.csv").lines().count(), 2);
    assert!(String::from_utf8_lossy(&single.stdout).contains("BP_AllF"));

    // every command is idempotent
    ws.ok(&["train", "-c", "run.toml"]);
    ws.ok(&["evaluate", "-c", "run.toml"]);
    assert_eq!(ws.read("out/models/FBCSP_FS_0v2_2s.json"), model);
    assert_eq!(ws.read("out/reports/FBCSP_FS_0v2_2s.json"), report);
    assert_eq!(ws.read("out/summary.csv"), summary);

    ws.ok(&["inspect-filters", "out/models/FBCSP_FS_0v2_2s.json", "-o", "filters.csv"]);
    let filters = ws.read("filters.csv");
    let mut lines = filters.lines();
    assert_eq!(lines.next().unwrap(), "band_low,band_high,filter_rank,channel_name,weight");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9 * 4 * 12);
    for filter in rows.chunks(12) {
        let weights: Vec<f64> = filter.iter().map(|r| r[4].parse().unwrap()).collect();
        let pivot = weights.iter().copied().fold(0.0f64, |b, w| if w.abs() > b.abs() { w } else { b });
        assert!(pivot > 0.0);
    }

    let bp = ws.run(&["inspect-filters", "out/models/BP_AllF_0v2_2s.json"]);
    assert_eq!(bp.status.code(), Some(1));
    assert!(stderr(&bp).contains("unsupported model kind"));
}

#[test]
fn model_window_must_match_the_config() {
    let ws = Workspace::new(BASE);
    ws.ok(&["simulate", "-c", "run.toml"]);
    ws.ok(&["train", "-c", "run.toml"]);
    std::fs::write(ws.path("other.toml"), BASE.replace("windows = [2.0]", "windows = [4.0]")).unwrap();
    let out = ws.run(&["evaluate", "-c", "other.toml", "out/models/FBCSP_FS_0v2_2s.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("window"), "{}", stderr(&out));
}

#[test]
fn corrupt_markers_fail_ingestion() {
    let ws = Workspace::new(BASE);
    ws.ok(&["simulate", "-c", "run.toml"]);
    let mut markers = ws.read("data/markers.csv");
    markers.push_str("12,zero,1\n");
    std::fs::write(ws.path("data/markers.csv"), markers).unwrap();
    let out = ws.run(&["train", "-c", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("markers.csv"), "{}", stderr(&out));
}

#[test]
fn sweep_reports_failed_cells_and_keeps_going() {
    let ws = Workspace::new(&BASE.replace("pairs = [[0, 2]]", "pairs = [[0, 2], [0, 7]]"));
    ws.ok(&["simulate", "-c", "run.toml"]);
    let out = ws.run(&["sweep", "-c", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("4 cell(s) failed") && err.contains("0v7"), "{err}");
    let summary = ws.read("out/summary.csv");
    assert_eq!(summary.lines().filter(|l| l.ends_with(",ok")).count(), 4);
    assert_eq!(summary.lines().filter(|l| l.ends_with(",failed")).count(), 4);
    assert!(ws.path("out/models/FBCSP_FS_0v2_2s.json").exists());
}

#[test]
fn path_overrides_take_precedence() {
    let ws = Workspace::new(BASE);
    ws.ok(&["simulate", "-c", "run.toml", "--signal", "alt/s.csv", "--markers", "alt/m.csv", "--out-dir", "alt"]);
    assert!(Path::new(&ws.path("alt/s.csv")).exists());
    assert!(Path::new(&ws.path("alt/ground_truth.json")).exists());
    assert!(!ws.path("data/signal.csv").exists());
}

#[test]
fn shipped_example_config_is_valid() {
    let text = include_str!("../../../configs/planted.toml");
    let ws = Workspace::new(text);
    ws.ok(&["simulate", "-c", "run.toml", "--signal", "d/s.csv", "--markers", "d/m.csv", "--out-dir", "o"]);
    assert!(ws.path("o/ground_truth.json").exists());
}
