use std::path::{Path, PathBuf};
use std::process::Command;

use fkchain::scenario::*;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn all_scenarios() -> Vec<PathBuf> {
    let mut v = scenario_files(&scenarios()).unwrap();
    v.extend(scenario_files(&scenarios().join("ident")).unwrap());
    v
}

fn fkchain(out: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fkchain"));
    c.env("FKCHAIN_OUT_DIR", out);
    c
}

fn header_of(csv: &Path) -> String {
    std::fs::read_to_string(csv).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn shipped_scenarios_round_trip() {
    let files = all_scenarios();
    assert!(files.len() >= 13);
    for f in files {
        let s = load_scenario(&f).unwrap();
        let again = parse_scenario(&s.to_toml()).unwrap();
        assert_eq!(s, again, "{}", f.display());
    }
}

#[test]
fn shipped_scenarios_run() {
    let files = all_scenarios();
    let results: Vec<_> = std::thread::scope(|scope| {
        let hs: Vec<_> = files.iter().map(|f| scope.spawn(move || run(&load_scenario(f).unwrap()))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (f, r) in files.iter().zip(results) {
        let (log, summary) = r.unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        assert!(log.rows.iter().all(|row| row.states.iter().all(|s| s.is_finite())));
        assert!(!summary.stages.is_empty());
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let err = parse_scenario("name = \"x\"\nduration = 1.0\nbogus = 3\n").unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    let err = parse_scenario("name = \"x\"\nduration = 1.0\n[params]\nn = 5\nspring = 1\n").unwrap_err();
    assert!(err.to_string().contains("spring"), "{err}");
}

#[test]
fn stage_times_must_increase() {
    let text = "name = \"x\"\nduration = 2.0\n\
        [[stage]]\nstart = 1.0\ncontroller = { kind = \"none\" }\n\
        [[stage]]\nstart = 0.5\ncontroller = { kind = \"none\" }\n";
    assert!(parse_scenario(text).is_err());
    let late = "name = \"x\"\nduration = 2.0\n[[stage]]\nstart = 3.0\ncontroller = { kind = \"none\" }\n";
    assert!(parse_scenario(late).is_err());
}

#[test]
fn column_set_depends_on_scenario_type_only() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to_dir(&load_scenario(&scenarios().join("fig9.scenario")).unwrap(), dir.path()).unwrap();
    let b = run_to_dir(&load_scenario(&scenarios().join("fig9_td2.scenario")).unwrap(), dir.path()).unwrap();
    assert_eq!(header_of(&a.csv), header_of(&b.csv));
    let h = header_of(&a.csv);
    for col in ["stage", "lambda", "esc_I", "esc_y", "esc_xi", "meas_20", "phi_m2"] {
        assert!(h.split(',').any(|c| c == col), "{col} missing from {h}");
    }
    let c = run_to_dir(&load_scenario(&scenarios().join("fig10_sync.scenario")).unwrap(), dir.path()).unwrap();
    let d = run_to_dir(&load_scenario(&scenarios().join("fig10_const.scenario")).unwrap(), dir.path()).unwrap();
    assert_eq!(header_of(&c.csv), header_of(&d.csv));
}

#[test]
fn cli_run_writes_outputs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let status = fkchain(dir.path()).arg("run").arg(scenarios().join("minimal.scenario")).status().unwrap();
    assert!(status.success());
    for f in ["minimal.csv", "minimal.summary.json", "minimal.effective.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let out = fkchain(dir.path()).arg("report").arg(dir.path().join("minimal.summary.json")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("minimal"));
}

#[test]
fn cli_out_dir_flag_beats_env() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let status = fkchain(env_dir.path())
        .arg("--out-dir")
        .arg(flag_dir.path())
        .arg("run")
        .arg(scenarios().join("minimal.scenario"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag_dir.path().join("minimal.csv").exists());
    assert!(!env_dir.path().join("minimal.csv").exists());
}

#[test]
fn cli_overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenarios().join("fig8.scenario");
    assert!(fkchain(dir.path()).args(["run", "--td", "0.09"]).arg(&path).status().unwrap().success());
    let eff = std::fs::read_to_string(dir.path().join("fig8.effective.toml")).unwrap();
    assert!(eff.contains("latency = 0.09"), "{eff}");
    let bad = fkchain(dir.path()).args(["run", "--dt", "0.007"]).arg(&path).status().unwrap();
    assert_eq!(bad.code(), Some(2));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let parse = write("parse.scenario", "name = \"p\"\nduration = \"soon\"\n");
    let infeasible = write(
        "inf.scenario",
        "name = \"i\"\nduration = 1.0\n[params]\nn = 20\n[[stage]]\nstart = 0.0\ncontroller = { kind = \"naive-wave\", i_star = 11 }\n",
    );
    let diverge = write(
        "div.scenario",
        "name = \"d\"\nduration = 1.0\n[params]\nn = 3\n[initial]\nkind = \"uniform\"\nangle = 0.0\nvelocity = 1e308\n",
    );
    let code = |p: &Path| fkchain(dir.path()).arg("run").arg(p).output().unwrap().status.code();
    assert_eq!(code(&parse), Some(2));
    assert_eq!(code(&dir.path().join("missing.scenario")), Some(2));
    assert_eq!(code(&infeasible), Some(4));
    assert_eq!(code(&diverge), Some(3));
}

#[test]
fn cli_identify_on_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = fkchain(&data).args(["run", "--all"]).arg(scenarios().join("ident")).status().unwrap();
    assert!(status.success());
    let spec = dir.path().join("quick.fit.toml");
    let text = std::fs::read_to_string(scenarios().join("ident.fit.toml")).unwrap().replace("budget = 2000", "budget = 45");
    std::fs::write(&spec, text).unwrap();
    let fit_dir = dir.path().join("fit");
    let out = fkchain(&fit_dir).arg("identify").arg(&data).arg(&spec).args(["--seed", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(fit_dir.join("fit.txt")).unwrap();
    assert!(report.contains("nrmse_mean: "));
    let csv = std::fs::read_to_string(fit_dir.join("fit.csv")).unwrap();
    assert!(csv.starts_with("k,b,gamma,objective"));
}

#[test]
fn report_measures_desync_reduction() {
    let sync = run(&load_scenario(&scenarios().join("fig10_sync.scenario")).unwrap()).unwrap().1;
    let constant = run(&load_scenario(&scenarios().join("fig10_const.scenario")).unwrap()).unwrap().1;
    let table = report(&[sync.clone(), constant.clone()]);
    assert!(table.lines().count() >= 3);
    assert!(table.contains("desync_reduction_%"));
    assert!(sync.desync_criterion.unwrap() >= 0.0 && constant.desync_criterion.unwrap() >= 0.0);
}
