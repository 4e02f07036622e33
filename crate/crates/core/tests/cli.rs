use std::fs;
use std::path::Path;
use std::process::Command as Proc;

use chb_control::harness::{run_experiment, Command, Config};

const SMALL: &[&str] = &["grid.n=24", "time.dt=5e-3", "time.horizon=0.5", "carleman.samples=4"];

fn small(extra: &[&str]) -> Config {
    let items: Vec<String> = SMALL.iter().chain(extra).map(|s| s.to_string()).collect();
    Config::from_toml("", &items).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn every_command_is_byte_deterministic() {
    for cmd in [
        Command::Steady,
        Command::Simulate,
        Command::Control,
        Command::SourceTerm,
        Command::Nonlinear,
        Command::Carleman,
        Command::Sweep,
    ] {
        let cfg = small(&["sweep.horizons=[0.5, 0.25]", "run.seed=7"]);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_experiment(cmd, &cfg, a.path()).unwrap();
        run_experiment(cmd, &cfg, b.path()).unwrap();
        assert!(!sa.outputs.is_empty());
        for p in &sa.outputs {
            let name = p.file_name().unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(b.path().join(name)).unwrap(), "{cmd:?} {name:?}");
        }
        let manifest = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains(&format!("command = {}", cmd.name())));
        assert!(manifest.contains("seed = 7"));
    }
}

#[test]
fn zero_forcing_gives_a_resting_fluid() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(Command::Steady, &small(&["steady.forcing=\"zero\""]), dir.path()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("steady.csv"));
    assert_eq!(header, ["x", "ubar", "ubar_x", "f_s"]);
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));
}

#[test]
fn sweep_table_has_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&["sweep.horizons=[0.5, 0.25, 0.125]", "sweep.epsilons=[1e-2, 1e-4]"]);
    run_experiment(Command::Sweep, &cfg, dir.path()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["T", "eps", "control_cost", "terminal_norm", "cg_iters", "fitted_M"]);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.iter().all(|v| v.is_finite())));
}

#[test]
fn csv_values_carry_seventeen_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(Command::Simulate, &small(&[]), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("terminal.csv")).unwrap();
    let first = text.lines().nth(2).unwrap();
    for field in first.split(',') {
        let mantissa = field.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{field}");
    }
}

#[test]
fn control_reduces_the_terminal_state() {
    let dir = tempfile::tempdir().unwrap();
    let sum = run_experiment(Command::Control, &small(&[]), dir.path()).unwrap();
    let get = |k: &str| -> f64 {
        sum.results.iter().find(|(key, _)| key == k).unwrap_or_else(|| panic!("{k} missing")).1.parse().unwrap()
    };
    assert!(get("terminal_norm") < get("free_terminal_norm"));
}

fn chb(dir: &Path, args: &[&str]) -> std::process::Output {
    Proc::new(env!("CARGO_BIN_EXE_chb"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_runs_with_flags_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["steady", "--seed", "3"];
    for o in SMALL {
        args.extend(["--override", o]);
    }
    let ok = chb(dir.path(), &args);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("gamma1 = "));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3"));

    let bad = chb(dir.path(), &["source-term", "--override", "source_term.q=1.2"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("2^(1/(2m))"));

    let unknown = chb(dir.path(), &["control", "--override", "hum.epsilonn=1"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("hum.epsilonn"));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[grid]\nn = 16\n[time]\ndt = 1e-2\nhorizon = 0.1\n").unwrap();
    let out = dir.path().join("o");
    let r = Proc::new(env!("CARGO_BIN_EXE_chb"))
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let (_, rows) = read_csv(&out.join("terminal.csv"));
    assert_eq!(rows.len(), 17);
}
