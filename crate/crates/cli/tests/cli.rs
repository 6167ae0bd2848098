use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_heat-inverse");

const SMALL: &str = "domain_length = 1\nT = 0.1\nmodes = 24\nbank = 12\ngrid_points = 513\n";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_1() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_documents_every_flag() {
    let out = run(&["sweep", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--out", "--seed", "--modes", "--parallel"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let text = String::from_utf8_lossy(&run(&["local-backward", "--help"]).stdout).to_string();
    assert!(text.contains("--observation") && text.contains("--report"));
}

#[test]
fn constants_prints_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", &format!("{SMALL}delta_list = 1e-3\n"));
    let out = run(&["constants", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["ln_K", "mu", "ln_c1", "c2", "ln_c3", "c4", "key,value"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn bad_config_exits_1_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", &format!("{SMALL}delta_list = 1e-3\nxi = 1.5\n"));
    let out = run(&["constants", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 7"));
    let missing = run(&["sweep", "--config", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn sweep_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "s.cfg",
        &format!("{SMALL}delta_list = 1e-3, 1e-6\nconstants_mode = empirical\n"),
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (p, threads) in [(&a, "1"), (&b, "4")] {
        let out = run(&["sweep", "--config", &cfg, "--out", p.to_str().unwrap(), "--parallel", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
    assert!(text.starts_with("delta,method,epsilon,alpha,bound,error,bound_ok,runtime_ms\n"));
}

#[test]
fn empty_sweep_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "s.cfg", &format!("{SMALL}delta_list =\n"));
    let out = run(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout.iter().filter(|&&c| c == b'\n').count(), 1);
}

#[test]
fn sabotaged_k_makes_sweep_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "s.cfg",
        &format!("{SMALL}delta_list = 1e-8\nmethods = local\nconstants_mode = empirical\nk_scale = 1e-30\n"),
    );
    let out = run(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains(",false,"));
}

#[test]
fn control_emits_per_mode_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        &format!("{SMALL}delta_list = 1e-3\nconstants_mode = empirical\n"),
    );
    let out = run(&["control", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,h_norm,psi_norm,eps_bound_ok,h_bound_ok,cg_iters"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn forward_then_local_backward_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        &format!("{SMALL}delta_list = 1e-4\nconstants_mode = empirical\n"),
    );
    let fwd = dir.path().join("f.csv");
    assert_eq!(run(&["forward", "--config", &cfg, "--out", fwd.to_str().unwrap()]).status.code(), Some(0));
    let rows = fs::read_to_string(&fwd).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('i')).count(), 24);

    // synthetic observation, with truth
    let rep = dir.path().join("r.csv");
    let out = run(&[
        "local-backward",
        "--config",
        &cfg,
        "--out",
        dir.path().join("g.csv").to_str().unwrap(),
        "--report",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(&rep).unwrap();
    assert!(report.starts_with("delta,epsilon,effective_delta,alpha,bound,error\n"));
    let cols: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    let (bound, error): (f64, f64) = (cols[4].parse().unwrap(), cols[5].parse().unwrap());
    assert!(error <= bound);

    // external observation needs noise level and priors
    let obs = dir.path().join("obs.csv");
    let samples: String = (0..513)
        .map(|k| {
            let x = 0.3 + 0.4 * k as f64 / 512.0;
            format!("{x},{}\n", (std::f64::consts::PI * x).sin() * 0.37)
        })
        .collect();
    fs::write(&obs, format!("x,value\n{samples}")).unwrap();
    let obs = obs.to_str().unwrap();
    let out = run(&["local-backward", "--config", &cfg, "--observation", obs]);
    assert_eq!(out.status.code(), Some(1));
    let cfg2 = write_cfg(
        dir.path(),
        "c2.cfg",
        &format!(
            "{SMALL}delta_list = 1e-4\nconstants_mode = empirical\nnoise_level = 1e-6\nprior_l2 = 1\nprior_h01 = 4\n"
        ),
    );
    let out = run(&["local-backward", "--config", &cfg2, "--observation", obs, "--report", rep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let row = fs::read_to_string(&rep).unwrap();
    assert!(row.lines().nth(1).unwrap().ends_with(','), "error column must be empty without truth");
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        &format!("{SMALL}delta_list = 1e-3\nseed_count = 1\nfd_points = 400\nfd_steps = 400\n"),
    );
    let out = run(&["oracle-check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
