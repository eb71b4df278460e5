use std::path::Path;
use std::process::{Command, Output};

fn t2s(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2s"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("T2S_OUTPUT_DIR")
        .output()
        .expect("spawn t2s")
}

fn t2s_plain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2s"))
        .args(args)
        .output()
        .expect("spawn t2s")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("short.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SHORT: &str = r#"
schema_version = 1
[experiment]
task = "stabilize"
method = "t2s"
duration = 1.0
n_runs = 2
[disturbance]
kind = "linear_drift"
kappa = 0.0005
"#;

#[test]
fn unknown_method_is_a_usage_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = t2s(&["run", "--method", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.method"), "{}", stderr(&o));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = t2s(&["run", "--config", "no_such_preset"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_preset"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = t2s_plain(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_value_is_reported_with_its_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), &SHORT.replace("duration = 1.0", "duration = -1.0"));
    let o = t2s(&["run", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duration"), "{}", stderr(&o));
}

#[test]
fn default_run_logs_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = t2s(&["run", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("stabilize_t2s_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    for f in ["stabilize_t2s_seed3_error.svg", "stabilize_t2s_seed3_trajectory.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), SHORT);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(t2s(&["run", "-c", cfg, "--seed", "7"], &a).status.success());
    assert!(t2s(&["run", "-c", cfg, "--seed", "7"], &b).status.success());
    let name = "stabilize_t2s_seed7.csv";
    let x = std::fs::read(a.join(name)).unwrap();
    let y = std::fs::read(b.join(name)).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn config_file_is_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), SHORT);
    let before = std::fs::read(&cfg).unwrap();
    let o = t2s(
        &["run", "-c", cfg.to_str().unwrap(), "-m", "nominal_mpc"],
        &dir.path().join("out"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&cfg).unwrap(), before);
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), SHORT);
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_t2s"))
        .args(["run", "-q", "-c", cfg.to_str().unwrap(), "--seed", "1"])
        .env("T2S_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(out.join("stabilize_t2s_seed1.csv").exists());
}

#[test]
fn suite_with_empty_grid_reports_no_cells() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SHORT}\n[grid]\nmethods = []\ntasks = [\"stabilize\"]\n");
    let cfg = short_config(dir.path(), &body);
    let o = t2s(&["suite", "-c", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no cells"), "{}", stderr(&o));
}

#[test]
fn suite_methods_flag_restricts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SHORT}\n[grid]\nmethods = [\"nominal_mpc\", \"neural_mpc\", \"t2s\"]\ntasks = [\"stabilize\"]\n\
         [[grid.disturbances]]\nkind = \"linear_drift\"\nkappa = 0.0005\n"
    );
    let cfg = short_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = t2s(
        &[
            "suite",
            "-c",
            cfg.to_str().unwrap(),
            "--methods",
            "nominal_mpc,t2s",
            "--runs",
            "2",
            "--jobs",
            "1",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows.iter().all(|r| !r.starts_with("neural_mpc")));
    assert!(rows.iter().all(|r| r.contains(",2,0")), "{csv}");
    assert!(out.join("summary.txt").exists());
}

#[test]
fn suite_rejects_unknown_method_in_filter() {
    let dir = tempfile::tempdir().unwrap();
    let o = t2s(&["suite", "--methods", "t2s,nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.method"));
}

#[test]
fn selfcheck_passes() {
    let o = t2s_plain(&["selfcheck"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}\n{}", stderr(&o));
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("parameter_count_6979"));
}

#[test]
fn selfcheck_fails_on_a_wrong_parameter_count() {
    let o = t2s_plain(&["selfcheck", "--expect-param-count", "6978"]);
    assert_ne!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL parameter_count_6979"), "{stdout}");
    assert!(stderr(&o).contains("parameter_count_6979"));
}

#[test]
fn plot_redraws_from_run_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), SHORT);
    let runs = dir.path().join("runs");
    for seed in ["1", "2"] {
        assert!(t2s(&["run", "-c", cfg.to_str().unwrap(), "--seed", seed], &runs)
            .status
            .success());
    }
    let figs = dir.path().join("figs");
    let o = t2s(
        &[
            "plot",
            runs.join("stabilize_t2s_seed1.csv").to_str().unwrap(),
            runs.join("stabilize_t2s_seed2.csv").to_str().unwrap(),
            "--stem",
            "both",
        ],
        &figs,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(figs.join("both_error.svg")).unwrap();
    assert!(svg.contains("stabilize_t2s_seed1") && svg.contains("stabilize_t2s_seed2"));
    assert!(figs.join("both_trajectory.svg").exists());
}

#[test]
fn plot_of_missing_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = t2s(&["plot", dir.path().join("absent.csv").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = t2s_core::harness::ExperimentConfig::from_path(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            if path.file_stem().unwrap() == "default" {
                let mut d = t2s_core::harness::ExperimentConfig::default();
                let hover = d.quad.hover_thrust();
                assert!(cfg.network.scaling.input_offset[6..]
                    .iter()
                    .all(|o| (o - hover).abs() < 1e-12));
                d.network.scaling.input_offset[6] = cfg.network.scaling.input_offset[6];
                d.network.scaling.input_offset[7] = cfg.network.scaling.input_offset[7];
                assert_eq!(cfg, d, "configs/default.toml drifted from the defaults");
            }
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn smoke_suite_runs_from_the_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let o = t2s(&["suite", "-q", "-c", cfg.to_str().unwrap(), "--timing"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("timing.txt").exists());
}
