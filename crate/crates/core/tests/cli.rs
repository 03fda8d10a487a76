use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swingstop"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const TABLE_120: &str = "0 0 1\n1 0 2\n1 1 2\n2 0 0\n2 1 0\n2 2 0\n";
const BUMP: &str = "0 0 0\n1 0 0\n1 1 2\n2 0 1\n2 1 1\n2 2 1\n";

fn table_config(dir: &Path, table: &str, rights: usize, delta: f64) -> String {
    write(dir, "reward.txt", table);
    write(
        dir,
        "run.cfg",
        &format!(
            "horizon.T = 1.0\nlattice.steps = 2\nrights.L = {rights}\nrights.delta = {delta}\n\
             driver.kind = zero\npayoff.kind = table\npayoff.table_path = reward.txt\n"
        ),
    )
}

#[test]
fn price_of_deterministic_table() {
    let dir = TempDir::new().unwrap();
    let cfg = table_config(dir.path(), TABLE_120, 2, 0.5);
    let out = run(dir.path(), &["--config", &cfg, "price"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).lines().any(|l| l == "2,3.0000000000000000"), "{}", stdout(&out));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "call.cfg",
        "horizon.T = 1\nlattice.steps = 512\nrights.L = 3\nrights.delta = 0.125\n\
         driver.kind = smooth_inf\ndriver.kappa = 0.5\ndriver.epsilon = 0.05\npayoff.kind = call\npayoff.strike = 1\n",
    );
    for cmd in ["price", "boundary"] {
        let a = run(dir.path(), &["--config", &cfg, cmd]);
        let b = run(dir.path(), &["--config", &cfg, cmd]);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{cmd}");
    }
}

#[test]
fn out_flag_writes_file() {
    let dir = TempDir::new().unwrap();
    let cfg = table_config(dir.path(), TABLE_120, 2, 0.5);
    let dest = dir.path().join("price.csv");
    let out = run(dir.path(), &["--config", &cfg, "--out", dest.to_str().unwrap(), "price"]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(dest).unwrap().starts_with("j,value_at_0\n"));
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let infeasible = write(dir.path(), "bad.cfg", "rights.L = 5\nrights.delta = 0.3\nhorizon.T = 1.0\n");
    let out = run(dir.path(), &["--config", &infeasible, "price"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let empty = write(dir.path(), "empty.cfg", "");
    let out = run(dir.path(), &["--config", &empty, "price"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("horizon.T") && err.contains("rights.L") && err.contains("rights.delta"), "{err}");
}

#[test]
fn failed_assertion_exits_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "pde.cfg",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 2\nrights.delta = 0.25\nmodel.sigma = 0.2\nmodel.b = 0.05\n\
         driver.kind = inf_kappa\ndriver.kappa = 0.5\npayoff.kind = call\npayoff.strike = 1\npayoff.terminal_zero = true\n\
         pde.space_nodes = 50\npde.time_steps = 52\npde.tolerance = 1e-9\n",
    );
    let out = run(dir.path(), &["--config", &cfg, "pde-compare"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn oracle_rows_agree_on_depth_two() {
    let dir = TempDir::new().unwrap();
    let cfg = table_config(dir.path(), BUMP, 1, 0.0);
    let out = run(dir.path(), &["--config", &cfg, "oracle"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<(&str, &str)> = text.lines().skip(1).map(|l| l.split_once(',').unwrap()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r.0).collect();
    for want in ["engine_direct", "engine_auxiliary", "enumeration"] {
        assert!(names.contains(&want), "{text}");
    }
    assert!(rows.iter().all(|r| r.1 == "1.5000000000000000"), "{text}");
}

#[test]
fn converge_table_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "conv.cfg",
        "horizon.T = 1\nrights.L = 2\nrights.delta = 0.25\ndriver.kind = inf_kappa\ndriver.kappa = 0.5\n\
         payoff.kind = call\npayoff.strike = 1\nconverge.n_min = 4\nconverge.n_max = 7\n",
    );
    let out = run(dir.path(), &["--config", &cfg, "converge"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,steps,value,abs_diff_prev");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].ends_with(",NaN"));
}

#[test]
fn bundled_verify_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("check,passed,metric\n"));
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")), "{text}");
}
