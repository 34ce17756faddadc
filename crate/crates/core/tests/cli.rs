//! End-to-end tests of the command-line binary: subcommand wiring, exit
//! codes, artifact layout and agreement between CLI output and direct
//! library calls.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vdf_calib::models;
use vdf_calib::pipeline::{self, RunConfig};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdf-calib"))
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

/// A small three-site corpus spec: two healthy sites and one with traffic
/// too light to calibrate.
fn small_spec_toml() -> String {
    let mut text = String::from("start_date = \"2016-02-29\"\n");
    let site = |id: &str, class: &str, t0: f64, vc: f64, alpha: f64, beta: f64, lat: f64| {
        format!(
            r#"
[[sites]]
combined_id = "{id}"
road_class = "{class}"
speed_limit_kmh = 48.0
dmrb_capacity_vph = {dmrb}
origin_lat = {lat}
origin_lon = 0.02
dest_lat = {dest_lat}
dest_lon = 0.021

[sites.synth]
t0_s = {t0}
vc_vph = {vc}
alpha = {alpha}
beta = {beta}
link_length_m = 640.0
n_obs = 120
volume_law = "bimodal_daily"
noise_sigma0 = 0.04
noise_growth = 0.05
outlier_count = 1
seed = 9
"#,
            dmrb = vc * 3.0,
            dest_lat = lat + 0.004,
        )
    };
    text.push_str(&site("11N", "Principal", 70.0, 420.0, 1.1, 1.6, 51.40));
    text.push_str(&site("11S", "Principal", 75.0, 380.0, 0.8, 1.4, 51.42));
    // Peak volume lands far below the validity threshold.
    text.push_str(&site("74S", "Unclassified", 40.0, 30.0, 1.0, 2.0, 51.44));
    text
}

struct Corpus {
    dir: tempfile::TempDir,
}

impl Corpus {
    fn generate() -> Corpus {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("spec.toml");
        fs::write(&spec_path, small_spec_toml()).unwrap();
        let output = run(&[
            "synth",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            dir.path().join("corpus").to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{output:?}");
        Corpus { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join("corpus").join(name)
    }

    fn pipeline_args(&self, out: &Path) -> Vec<String> {
        vec![
            "pipeline".to_string(),
            "--counters".to_string(),
            self.path("counters.csv").display().to_string(),
            "--times".to_string(),
            self.path("travel_times.csv").display().to_string(),
            "--meta".to_string(),
            self.path("metadata.csv").display().to_string(),
            "--out".to_string(),
            out.display().to_string(),
        ]
    }
}

#[test]
fn pipeline_produces_all_artifacts_and_reports_the_rejected_site() {
    let corpus = Corpus::generate();
    let out = corpus.dir.path().join("run");
    let args = corpus.pipeline_args(&out);
    let output = binary().args(&args).output().unwrap();
    assert!(output.status.success(), "{output:?}");
    let summary = stdout_json(&output);
    assert_eq!(summary["sites_in_data"], 3);
    assert_eq!(summary["sites_calibrated"], 2);
    assert_eq!(summary["sites_rejected"], 1);

    for artifact in [
        "hourly_volumes.csv",
        "cleaning_report.csv",
        "calibration.csv",
        "mae_report.csv",
        "sites/11N_curves.csv",
        "sites/11N.svg",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let mae = fs::read_to_string(out.join("mae_report.csv")).unwrap();
    assert!(mae.lines().count() > 1, "MAE report is empty");

    // The invalid site is rejected in the cleaning report and absent from
    // the calibration output.
    let cleaning = fs::read_to_string(out.join("cleaning_report.csv")).unwrap();
    let rejected_row = cleaning
        .lines()
        .find(|line| line.starts_with("74S"))
        .expect("74S in cleaning report");
    assert!(rejected_row.contains("low_peak_volume"));
    let calibration = fs::read_to_string(out.join("calibration.csv")).unwrap();
    assert!(!calibration.contains("74S"));
    assert!(calibration.contains("11N,dd2"));
}

#[test]
fn cli_artifacts_match_direct_library_calls() {
    let corpus = Corpus::generate();
    let out_cli = corpus.dir.path().join("run_cli");
    let args = corpus.pipeline_args(&out_cli);
    let output = binary().args(&args).output().unwrap();
    assert!(output.status.success(), "{output:?}");

    let out_lib = corpus.dir.path().join("run_lib");
    let config = RunConfig::new(
        corpus.path("counters.csv"),
        corpus.path("travel_times.csv"),
        corpus.path("metadata.csv"),
        out_lib.clone(),
    );
    let summary = pipeline::run_pipeline(&config).unwrap();
    assert!(summary.is_clean());

    for artifact in [
        "hourly_volumes.csv",
        "cleaning_report.csv",
        "calibration.csv",
        "mae_report.csv",
        "sites/11N_curves.csv",
        "sites/11N.svg",
    ] {
        assert_eq!(
            fs::read(out_cli.join(artifact)).unwrap(),
            fs::read(out_lib.join(artifact)).unwrap(),
            "artifact {artifact} differs from direct library output"
        );
    }
}

#[test]
fn rerun_is_byte_identical() {
    let corpus = Corpus::generate();
    let out_a = corpus.dir.path().join("a");
    let out_b = corpus.dir.path().join("b");
    assert!(binary().args(corpus.pipeline_args(&out_a)).output().unwrap().status.success());
    assert!(binary().args(corpus.pipeline_args(&out_b)).output().unwrap().status.success());
    for artifact in ["hourly_volumes.csv", "cleaning_report.csv", "calibration.csv", "mae_report.csv"] {
        assert_eq!(
            fs::read(out_a.join(artifact)).unwrap(),
            fs::read(out_b.join(artifact)).unwrap()
        );
    }
}

#[test]
fn plot_renders_curves_that_match_the_model_evaluation() {
    let corpus = Corpus::generate();
    let out = corpus.dir.path().join("run");
    assert!(binary().args(corpus.pipeline_args(&out)).output().unwrap().status.success());

    let plot_out = corpus.dir.path().join("plots");
    let output = run(&[
        "plot",
        "--counters",
        corpus.path("counters.csv").to_str().unwrap(),
        "--times",
        corpus.path("travel_times.csv").to_str().unwrap(),
        "--meta",
        corpus.path("metadata.csv").to_str().unwrap(),
        "--out",
        plot_out.to_str().unwrap(),
        "--calib",
        out.join("calibration.csv").to_str().unwrap(),
        "--site",
        "11N",
        "--grid",
        "40",
    ]);
    assert!(output.status.success(), "{output:?}");

    let svg = fs::read_to_string(plot_out.join("11N.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.matches("<circle").count() > 50);

    // Curve endpoints agree with direct model evaluation.
    let calibration = fs::read_to_string(out.join("calibration.csv")).unwrap();
    let by_site = pipeline::read_calibration_csv(&calibration).unwrap();
    let dd2 = by_site[&"11N".parse().unwrap()]
        .iter()
        .find(|p| p.provenance == models::Provenance::Dd2)
        .copied()
        .unwrap();
    let curves = fs::read_to_string(plot_out.join("11N_curves.csv")).unwrap();
    let dd2_rows: Vec<(f64, f64)> = curves
        .lines()
        .skip(1)
        .filter(|line| line.contains(",dd2,"))
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            (fields[0].parse().unwrap(), fields[2].parse().unwrap())
        })
        .collect();
    assert_eq!(dd2_rows.len(), 41);
    for (volume, time) in [dd2_rows[0], dd2_rows[40]] {
        let expected = models::bpr_time(&dd2, volume).unwrap();
        assert!((time - expected).abs() <= 1e-9 * expected.max(1.0));
    }
}

#[test]
fn plot_rejects_unknown_sites_listing_the_available_ones() {
    let corpus = Corpus::generate();
    let out = corpus.dir.path().join("run");
    assert!(binary().args(corpus.pipeline_args(&out)).output().unwrap().status.success());

    let output = run(&[
        "plot",
        "--counters",
        corpus.path("counters.csv").to_str().unwrap(),
        "--times",
        corpus.path("travel_times.csv").to_str().unwrap(),
        "--meta",
        corpus.path("metadata.csv").to_str().unwrap(),
        "--out",
        corpus.dir.path().join("plots").to_str().unwrap(),
        "--calib",
        out.join("calibration.csv").to_str().unwrap(),
        "--site",
        "99E",
    ]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("99E"));
    assert!(stderr.contains("11N") && stderr.contains("11S"));
}

#[test]
fn harvest_replays_the_schedule_and_counts_misses() {
    let corpus = Corpus::generate();
    let out = corpus.dir.path().join("harvest");
    // Replay queries were fired at half past each hour over five days
    // (2016-02-29 through 2016-03-04) plus one planted-outlier hour at
    // 2016-03-05T00:30. A horizon reaching 02:30 on March 5th therefore
    // leaves exactly one miss per site.
    let output = run(&[
        "harvest",
        "--meta",
        corpus.path("metadata.csv").to_str().unwrap(),
        "--times",
        corpus.path("travel_times.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--interval",
        "3600",
        "--start",
        "2016-03-04T22:30:00",
        "--end",
        "2016-03-05T02:30:00",
    ]);
    assert!(output.status.success(), "{output:?}");
    let summary = stdout_json(&output);
    assert_eq!(summary["planned"], 3 * 4);
    assert_eq!(summary["misses"], 3);
    assert_eq!(summary["harvested"], 3 * 3);

    let harvested = fs::read_to_string(out.join("harvested_times.csv")).unwrap();
    assert_eq!(harvested.lines().count(), 3 * 3 + 1);
}

#[test]
fn malformed_counter_rows_fail_the_run_but_artifacts_still_appear() {
    let corpus = Corpus::generate();
    let counters = corpus.path("counters.csv");
    let mut text = fs::read_to_string(&counters).unwrap();
    text.push_str("11,Sideways,2016-02-29,08:00:00,30\n");
    let broken = corpus.dir.path().join("broken_counters.csv");
    fs::write(&broken, text).unwrap();

    let out = corpus.dir.path().join("run");
    let output = run(&[
        "pipeline",
        "--counters",
        broken.to_str().unwrap(),
        "--times",
        corpus.path("travel_times.csv").to_str().unwrap(),
        "--meta",
        corpus.path("metadata.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let summary = stdout_json(&output);
    assert_eq!(summary["counter_row_errors"], 1);
    assert!(out.join("calibration.csv").exists());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("row errors"));
}

#[test]
fn synth_rejects_invalid_specs_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("bad.toml");
    let bad = small_spec_toml().replace("n_obs = 120", "n_obs = 0");
    fs::write(&spec_path, bad).unwrap();
    let output = run(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        dir.path().join("corpus").to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("n_obs"));
}

#[test]
fn synth_seed_override_changes_noise_but_not_structure() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    fs::write(&spec_path, small_spec_toml()).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "1"), (&out_b, "2")] {
        let output = run(&[
            "synth",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(output.status.success());
    }
    // Same sites and grid, different draws.
    assert_eq!(
        fs::read(out_a.join("metadata.csv")).unwrap(),
        fs::read(out_b.join("metadata.csv")).unwrap()
    );
    assert_ne!(
        fs::read(out_a.join("travel_times.csv")).unwrap(),
        fs::read(out_b.join("travel_times.csv")).unwrap()
    );
}

#[test]
fn config_file_supplies_paths_and_flags_win() {
    let corpus = Corpus::generate();
    let out_config = corpus.dir.path().join("from_config");
    let out_flag = corpus.dir.path().join("from_flag");
    let config_path = corpus.dir.path().join("run.toml");
    fs::write(
        &config_path,
        format!(
            "counters = \"{}\"\ntimes = \"{}\"\nmeta = \"{}\"\nout = \"{}\"\ngrid = 25\n",
            corpus.path("counters.csv").display(),
            corpus.path("travel_times.csv").display(),
            corpus.path("metadata.csv").display(),
            out_config.display(),
        ),
    )
    .unwrap();

    let output = run(&["pipeline", "--config", config_path.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    assert!(out_config.join("calibration.csv").exists());

    // The --out flag overrides the config file value.
    let output = run(&[
        "pipeline",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(out_flag.join("calibration.csv").exists());
}
