use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beampinn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, problem: &str) -> PathBuf {
    let path = dir.join(format!("{problem}.json"));
    let doc = format!(
        r#"{{
  "problem": {{"id": "{problem}"}},
  "arch": {{"hidden": [6, 6]}},
  "causal": {{"n_t": 4}},
  "counts": {{"n_int": 16, "n_i": 8, "n_b": 6}},
  "epochs": 4,
  "eval": {{"n_x": 40, "grid_nx": 7, "grid_nt": 3}}
}}"#
    );
    std::fs::write(&path, doc).unwrap();
    path
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key:?} in {out}"))
        .trim()
}

#[test]
fn train_evaluate_transfer_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "eb_base");
    let root = dir.path().join("runs");
    let (cfg_s, root_s) = (cfg.to_str().unwrap(), root.to_str().unwrap());

    let o = run(&["train", "--config", cfg_s, "--run-root", root_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let run_dir = PathBuf::from(field(&out, "run_dir:"));
    assert!(out.contains("R_u(t=1) = "), "{out}");
    for f in ["config.json", "checkpoint.bin", "log.csv", "field.csv", "metrics.csv"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run_dir.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    // Same config, same directory and bitwise the same checkpoint.
    let ckpt = std::fs::read(run_dir.join("checkpoint.bin")).unwrap();
    let o = run(&["train", "--config", cfg_s, "--run-root", root_s]);
    assert_eq!(PathBuf::from(field(&stdout(&o), "run_dir:")), run_dir);
    assert_eq!(std::fs::read(run_dir.join("checkpoint.bin")).unwrap(), ckpt);

    // Evaluate reads the config embedded in the checkpoint.
    let ck = run_dir.join("checkpoint.bin");
    let ck_s = ck.to_str().unwrap();
    let o = run(&["evaluate", "--checkpoint", ck_s, "--t", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("R_u(t=0.5) = "));

    let o = run(&["transfer", "--parent", ck_s, "--config", cfg_s, "--set", "problem.noise_percent=5", "--run-root", root_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let child = PathBuf::from(field(&out, "run_dir:"));
    assert_ne!(child, run_dir);
    let meta = std::fs::read_to_string(child.join("config.json")).unwrap();
    assert!(meta.contains("checkpoint"), "{meta}");

    let csv = dir.path().join("grid.csv");
    let o = run(&["export-field", "--checkpoint", ck_s, "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,t,u_pred,u_exact,abs_err\n"));
    assert_eq!(text.lines().count(), 1 + 7 * 3);
    let o = run(&["export-field", "--checkpoint", ck_s, "--out", csv.to_str().unwrap(), "--t", "1", "--nx", "5"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 6);
}

#[test]
fn sweeps_write_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let eb = tiny_config(dir.path(), "eb_base");
    let o = run(&["train", "--config", eb.to_str().unwrap(), "--run-root", root.to_str().unwrap()]);
    let ck = PathBuf::from(field(&stdout(&o), "run_dir:")).join("checkpoint.bin");
    let o = run(&["sweep-noise", "--parent", ck.to_str().unwrap(), "--config", eb.to_str().unwrap(), "--percents", "0,10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("percent,r_with_tl,r_without_tl\n"));
    assert_eq!(out.lines().count(), 3);

    let timo = tiny_config(dir.path(), "timoshenko");
    let o = run(&["train", "--config", timo.to_str().unwrap(), "--run-root", root.to_str().unwrap()]);
    let ck = PathBuf::from(field(&stdout(&o), "run_dir:")).join("checkpoint.bin");
    let table = dir.path().join("domains.csv");
    let o = run(&[
        "suite-domains",
        "--parent",
        ck.to_str().unwrap(),
        "--config",
        timo.to_str().unwrap(),
        "--domain",
        "0,3pi,0,2",
        "--domain",
        "0,5*pi,0,1",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("x_min,x_max,t_min,t_max,t_star,r_u_with_tl,r_theta_with_tl"));
    let x_max: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(x_max, 5.0 * std::f64::consts::PI);
}

#[test]
fn checks_pass_on_correct_code() {
    for p in ["eb_base", "eb_variant", "timoshenko"] {
        let o = run(&["residual-check", "--problem", p, "--points", "300"]);
        assert!(o.status.success(), "{p}: {}", stderr(&o));
        assert!(stdout(&o).contains("over 300 points"));
    }
    let o = run(&["grad-check", "--arch", "2,5,5,2", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("timoshenko causal [2,5,5,2]"));
}

#[test]
fn errors_are_categorized_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Vec<String>, &str)> = vec![
        (vec!["residual-check".into(), "--problem".into(), "eb_base".into(), "--k".into(), "2".into()], "exact solution error: "),
        (vec!["residual-check".into(), "--problem".into(), "plate".into()], "config error: "),
        (vec!["train".into(), "--set".into(), "epochz=3".into()], "config error: "),
        (vec!["train".into(), "--config".into(), dir.path().join("none.json").display().to_string()], "io error: "),
        (vec!["evaluate".into(), "--checkpoint".into(), dir.path().join("none.bin").display().to_string()], "io error: "),
    ];
    for (args, prefix) in cases {
        let o = bin().args(&args).output().unwrap();
        assert!(!o.status.success(), "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with(prefix), "{args:?}: {err}");
        assert_eq!(err.lines().count(), 1, "{err}");
    }

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let o = run(&["evaluate", "--checkpoint", junk.to_str().unwrap()]);
    assert!(stderr(&o).starts_with("bad magic"), "{}", stderr(&o));

    // Parent and child shapes differ.
    let eb = tiny_config(dir.path(), "eb_base");
    let root = dir.path().join("runs");
    let o = run(&["train", "--config", eb.to_str().unwrap(), "--run-root", root.to_str().unwrap()]);
    let ck = PathBuf::from(field(&stdout(&o), "run_dir:")).join("checkpoint.bin");
    let o = run(&["transfer", "--parent", ck.to_str().unwrap(), "--config", eb.to_str().unwrap(), "--set", "arch.hidden=[6,7]"]);
    let err = stderr(&o);
    assert!(err.starts_with("arch error: ") && err.contains("[2,6,6,1]") && err.contains("[2,6,7,1]"), "{err}");
}
