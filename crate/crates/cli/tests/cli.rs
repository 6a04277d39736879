use std::path::Path;
use std::process::{Command, Output};

use subband_dbp::engine::compute_delta;
use subband_dbp::experiment::{ExperimentConfig, Method};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subband-dbp"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Single delta-length span without nonlinearity or noise, short records and
/// an untrained (linear) engine with long filters.
fn linear_link_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.signal.symbols_per_record = 512;
    c.fiber.n_spans = 1;
    c.fiber.gamma_per_w_km = 0.0;
    c.fiber.span_km = compute_delta(12, 8, c.base_rate(), c.fiber.beta2_ps2_per_km).unwrap().0;
    c.simulation.steps_per_span = 10;
    c.simulation.ase_noise = false;
    c.simulation.train_records = 1;
    c.simulation.validation_records = 1;
    c.simulation.test_records = 1;
    c.simulation.train_powers_dbm = vec![0.0];
    c.simulation.eval_powers_dbm = vec![0.0, 2.0];
    c.engine.step_multiple = 1;
    c.engine.cd_half_len = 32;
    c.engine.prototype_len = 257;
    c.train.iterations = 2;
    c.train.learning_rate = 0.0;
    c.train.mimo_init_scale = 0.0;
    c.train.batch_size = 1;
    c.train.sequence_symbols = 128;
    c.train.guard_symbols = 32;
    c.eval.guard_symbols = 64;
    c.eval.methods = vec![Method::Linear, Method::SubbandTddbp, Method::FullDbp];
    c
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, c.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_documents_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in ["gen-data", "train", "eval", "complexity", "selftest", "--scale", "--threads", "digest mismatch"] {
        assert!(text.contains(needle), "help lacks {needle}:\n{text}");
    }
}

#[test]
fn usage_and_configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--no-such-flag", "selftest"])), 2);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, ExperimentConfig::desk().to_toml().replace("seed = 1", "seed = 1\nextra = 2")).unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", path.to_str().unwrap(), "show-config"])), 2);
}

#[test]
fn missing_dataset_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["eval"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset.sdbp"));
}

#[test]
fn paper_complexity_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--scale", "paper", "complexity", "--nonzeros", "3812"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("66 steps, delta 19.10 km"), "{text}");
    assert!(text.contains("3812 of 48510"), "{text}");
    assert!(text.contains("CD 16.0 + MIMO 8.3 = 24.3"), "{text}");
    assert!(text.contains("optimum n = 128: 97.9"), "{text}");
}

#[test]
fn pipeline_on_a_linear_link() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write_config(d, &linear_link_config());
    let cfg = ["--config", config.as_str()];
    let with = |extra: &[&str]| -> Vec<String> { cfg.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |extra: &[&str]| {
        let args = with(extra);
        run(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    assert_eq!(code(&call(&["gen-data"])), 0);
    let first = std::fs::read(d.join("dataset.sdbp")).unwrap();
    assert_eq!(code(&call(&["gen-data"])), 4, "refuses to overwrite without --force");
    assert_eq!(code(&call(&["--force", "gen-data"])), 0);
    assert_eq!(std::fs::read(d.join("dataset.sdbp")).unwrap(), first, "same seed, same bytes");

    assert_eq!(code(&call(&["train"])), 0);
    let curve = std::fs::read_to_string(d.join("curves_p0.csv")).unwrap();
    assert!(curve.starts_with("iteration,loss,mse,l1,val_snr_db,lr\n"));
    assert_eq!(curve.lines().count(), 3);

    let o = call(&["eval"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(d.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("power_dbm,method,snr_db,seed_count"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for pair in rows.chunks(3) {
        assert_eq!((pair[0][1], pair[1][1], pair[2][1]), ("linear", "subband-tddbp", "full-dbp"));
        let lin: f64 = pair[0][2].parse().unwrap();
        let sub: f64 = pair[1][2].parse().unwrap();
        assert!((lin - sub).abs() <= 0.1, "linear {lin} vs subband {sub}");
        assert_eq!(pair[0][3], "1");
    }

    assert_eq!(code(&call(&["eval"])), 4, "refuses to overwrite without --force");
    assert_eq!(code(&call(&["--force", "eval"])), 0);
    assert_eq!(std::fs::read_to_string(d.join("results.csv")).unwrap(), results);

    let o = call(&["--seed", "9", "--force", "eval"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_passes_on_the_desk_engine() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--threads", "1", "selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 3);
}
