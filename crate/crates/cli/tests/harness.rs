use std::path::Path;
use std::process::Command;

use greenlab_cli::pipeline::statement;
use greenlab_cli::report::Bundle;
use greenlab_cli::{run_experiment, ExperimentConfig, HarnessError, Stage};

fn config(body: &str, out: &Path) -> ExperimentConfig {
    let text = format!(
        "version = 1\nseed = 5\n[output]\ndir = {:?}\n{body}",
        out.display().to_string()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

const LINE: &str = r#"
[space]
kind = "grid"
dim = 1
side = 81
spacing = 0.025
[heat]
times = [0.0025, 0.01]
"#;

const CUBE: &str = r#"
[space]
kind = "grid"
dim = 3
side = 17
spacing = 0.1
[heat]
times = [0.04]
sources = 2
pairs = 8
[green]
sources = 3
pairs = 40
table_points = 12
triples = 200
midpoint_triples = 50
doubling_sources = 2
[maximal]
points = 6
functions = 3
pairs = 10
[flow]
field = { kind = "shear", alpha = 0.7 }
horizon = 0.2
lusin_pairs = 200
derivative_pairs = 20
vector_pairs = 10
phi_radii = 2
"#;

#[test]
fn heat_only_pipeline_on_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&config(LINE, dir.path()), &[]).unwrap();
    assert!(bundle.passed(), "{:?}", bundle.rows);
    assert_eq!(bundle.stages, ["space", "heat"]);
    let row = bundle
        .rows
        .iter()
        .find(|r| r.quantity == "semigroup_residual")
        .unwrap();
    assert_eq!(row.statement, statement::HEAT_SEMIGROUP);
    assert!(row.value < 1e-8);
    assert_eq!(Bundle::read(dir.path()).unwrap(), bundle);
}

#[test]
fn cube_pipeline_reports_every_constant() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&config(CUBE, dir.path()), &[]).unwrap();
    assert!(bundle.failure.is_none(), "{:?}", bundle.failure);
    for q in [
        "c2",
        "ct",
        "cg",
        "cm_scalar",
        "phi_star_max",
        "lusin_lipschitz_eps_0.1",
        "lusin_deficit_eps_0.1",
    ] {
        let v = bundle.value(q).unwrap_or_else(|| panic!("missing {q}"));
        assert!(v.is_finite(), "{q} = {v}");
    }
    for file in [
        "green_ratio.csv",
        "maximal.csv",
        "rows.csv",
        "space.json",
        "plots/green_ratio.dat",
    ] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    assert!(bundle.rows.iter().all(|r| !r.statement.is_empty()));
}

#[test]
fn missing_tail_model_is_a_structured_failure() {
    let dir = tempfile::tempdir().unwrap();
    let body = CUBE.replace("spacing = 0.1", "spacing = 0.1\ntail_model = false");
    let bundle = run_experiment(&config(&body, dir.path()), &[Stage::Green]).unwrap();
    let failure = bundle.failure.clone().expect("failure record");
    assert_eq!(failure.stage, "green");
    assert_eq!(failure.statement, statement::GREEN_COMPARISON);
    assert!(
        failure
            .message
            .contains("non-parabolic assumption violated"),
        "{}",
        failure.message
    );
    assert!(!bundle.passed());
    let on_disk = Bundle::read(dir.path()).unwrap();
    assert_eq!(on_disk.failure, Some(failure));
}

#[test]
fn requesting_an_unconfigured_stage_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&config(LINE, dir.path()), &[Stage::Transport]).unwrap_err();
    assert!(matches!(err, HarnessError::MissingSection("transport")));
    assert!(!dir.path().join("report.json").exists());
}

fn greenlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_greenlab"))
}

#[test]
fn cli_subcommands_honour_flags_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("line.toml");
    std::fs::write(&cfg, format!("version = 1\n{LINE}")).unwrap();
    let out = dir.path().join("bundle");
    let status = greenlab()
        .args(["verify", "heat", "--out"])
        .arg(&out)
        .env("GREENLAB_CONFIG", &cfg)
        .env("GREENLAB_SEED", "11")
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("PASS heat.semigroup_property"), "{stdout}");
    assert_eq!(Bundle::read(&out).unwrap().seed, 11);

    let emit = greenlab()
        .args(["report", "emit", "--series", "nope", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(emit.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&emit.stderr).contains("unknown plot series"));

    let missing = greenlab()
        .args(["flow", "run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn cli_exit_code_reports_failed_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    // A backend disagreement bound far below the Crank-Nicolson error.
    std::fs::write(
        &cfg,
        format!("version = 1\n{LINE}reference_steps = 4\n[tolerances]\ncross_mode = 1e-12\n"),
    )
    .unwrap();
    let run = greenlab()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stdout).contains("FAIL heat.backend_agreement"));
}
