use std::fs;
use std::path::{Path, PathBuf};

use cvdecouple::cli::run;
use cvdecouple::wigner::PhaseSpaceField;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["cvdecouple"];
    full.extend_from_slice(args);
    run(full)
}

fn cmd(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    let mut args = vec![sub, "--config", c, "--out", o];
    args.extend_from_slice(extra);
    cli(&args)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn summary_fidelity(dir: &Path) -> f64 {
    rows(&dir.join("summary.csv"))[0][1].parse().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn fig2_smoke_and_protocol_override() {
    let tmp = tempfile::tempdir().unwrap();
    let parity = tmp.path().join("parity");
    assert_eq!(
        cmd("simulate", &configs().join("fig2.cfg"), &parity, &[]),
        0
    );
    for f in [
        "fidelity.csv",
        "summary.csv",
        "wigner_initial.csv",
        "wigner_final.csv",
        "manifest.json",
        "mean_curve.csv",
    ] {
        assert!(parity.join(f).exists(), "{f}");
    }
    assert_eq!(
        header(&parity.join("fidelity.csv")),
        ["traj_id", "segment", "ell", "fidelity"]
    );
    assert_eq!(
        header(&parity.join("summary.csv")),
        ["n_interventions", "mean_final_fidelity", "stderr"]
    );
    assert_eq!(header(&parity.join("wigner_final.csv")), ["x", "p", "w"]);
    let s = rows(&parity.join("summary.csv"));
    assert_eq!(s.len(), 1);
    assert_eq!(s[0][0], "50");
    let f: f64 = s[0][1].parse().unwrap();
    let se: f64 = s[0][2].parse().unwrap();
    assert!((0.0..=1.0).contains(&f) && se >= 0.0);
    assert_eq!(rows(&parity.join("fidelity.csv")).len(), 200 * 51);
    let m = manifest(&parity);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 2024);

    let none = tmp.path().join("none");
    assert_eq!(
        cmd(
            "simulate",
            &configs().join("fig2.cfg"),
            &none,
            &["--protocol", "none"]
        ),
        0
    );
    assert!(summary_fidelity(&parity) > summary_fidelity(&none) + 0.2);
}

#[test]
fn malformed_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_cfg(tmp.path(), "bad.cfg", "noise.eta = -1\n");
    assert_eq!(cmd("simulate", &bad, &tmp.path().join("o"), &[]), 2);
    let unknown = write_cfg(tmp.path(), "unknown.cfg", "noise.etta = 0.1\n");
    assert_eq!(cmd("simulate", &unknown, &tmp.path().join("o"), &[]), 2);
    let syntax = write_cfg(tmp.path(), "syntax.cfg", "noise.eta = = 1\n");
    assert_eq!(cmd("simulate", &syntax, &tmp.path().join("o"), &[]), 2);
    assert_eq!(
        cmd(
            "simulate",
            &configs().join("fig2.cfg"),
            &tmp.path().join("o"),
            &["--protocol", "bogus"]
        ),
        2
    );
    assert_eq!(cli(&["simulate", "--out", "x"]), 2);
    assert_eq!(
        cmd(
            "simulate",
            &tmp.path().join("missing.cfg"),
            &tmp.path().join("o"),
            &[]
        ),
        4
    );
}

#[test]
fn simulation_failure_exits_3_and_marks_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "leak.cfg",
        "noise.sigma_disp = 0.8\nnoise.segments = 6\nsim.protocol = \"none\"\nsim.fock_dim = 8\nsim.trajectories = 4\n",
    );
    let out = tmp.path().join("o");
    assert_eq!(cmd("simulate", &cfg, &out, &[]), 3);
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("segment"));
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "small.cfg",
        "noise.segments = 10\nsim.trajectories = 16\nsim.fock_dim = 30\nstate.alpha = [0.3, 0.1]\ngrid.nx = 41\ngrid.np = 41\n",
    );
    let a = tmp.path().join("a");
    assert_eq!(
        cmd("simulate", &cfg, &a, &["--seed", "99", "--threads", "2"]),
        0
    );
    let snapshot = manifest(&a)["config"].as_str().unwrap().to_string();
    assert!(snapshot.contains("sim.seed = 99"));
    let again = write_cfg(tmp.path(), "again.cfg", &snapshot);
    let b = tmp.path().join("b");
    assert_eq!(cmd("simulate", &again, &b, &["--threads", "1"]), 0);
    for f in ["summary.csv", "fidelity.csv", "wigner_final.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn csv_round_trip_12_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let cfg = write_cfg(tmp.path(), "w.cfg", "state.components = [[0.5, 1.0, 0.0, 0.7071067811865476], [0.5, -1.0, 0.0, 0.7071067811865476]]\n");
    assert_eq!(cmd("wigner", &cfg, &out, &[]), 0);
    let field = PhaseSpaceField::read_csv(fs::File::open(out.join("wigner.csv")).unwrap()).unwrap();
    let mut buf = Vec::new();
    field.write_csv(&mut buf).unwrap();
    let again = PhaseSpaceField::read_csv(&buf[..]).unwrap();
    for (a, b) in field.values().iter().zip(again.values()) {
        assert_eq!(format!("{a:.11e}"), format!("{b:.11e}"));
    }
    assert!((field.integral() - 1.0).abs() < 1e-3);
}

#[test]
fn static_sweep_rows_are_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    assert_eq!(
        cmd("sweep", &configs().join("static_sweep.cfg"), &out, &[]),
        0
    );
    let r = rows(&out.join("summary.csv"));
    assert_eq!(r.len(), 2);
    for row in r {
        assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn fig5_trend_holds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f5");
    assert_eq!(cmd("sweep", &configs().join("fig5.cfg"), &out, &[]), 0);
    let trend = rows(&out.join("trend.csv"));
    assert_eq!(trend.len(), 4);
    assert!(trend.iter().all(|r| r[4] == "true"));
    assert!(out.join("logistic_fit.csv").exists());
}

#[test]
fn empty_sweep_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "e.cfg", "sweep.n_values = []\n");
    assert_eq!(cmd("sweep", &cfg, &tmp.path().join("o"), &[]), 2);
    let cfg = write_cfg(
        tmp.path(),
        "d.cfg",
        "noise.segments = 10\nsweep.n_values = [3]\n",
    );
    assert_eq!(cmd("sweep", &cfg, &tmp.path().join("o"), &[]), 2);
}

#[test]
fn filter_variance_and_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("iid");
    assert_eq!(
        cmd(
            "filter",
            &configs().join("filter_iid_density.cfg"),
            &out,
            &[]
        ),
        0
    );
    let s = &rows(&out.join("filter_summary.csv"))[0];
    let expected = 8.0 * 0.25f64.powi(2) * 0.09;
    for v in [&s[1], &s[2]] {
        assert!((v.parse::<f64>().unwrap() - expected).abs() < 1e-9);
    }
    assert_eq!(s[5], "false");

    let out = tmp.path().join("even");
    assert_eq!(
        cmd(
            "filter",
            &configs().join("filter_static_even.cfg"),
            &out,
            &[]
        ),
        0
    );
    assert_eq!(rows(&out.join("filter_summary.csv"))[0][5], "true");
    assert!(!out.join("filter.csv").exists());
    let input = fs::read(out.join("wigner_initial.csv")).unwrap();
    assert_eq!(input, fs::read(out.join("prediction.csv")).unwrap());
}

#[test]
fn filter_monte_carlo_fixture_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mc");
    assert_eq!(
        cmd("filter", &configs().join("filter_iid.cfg"), &out, &[]),
        0
    );
    let r = &rows(&out.join("mc_report.csv"))[0];
    assert_eq!(r[4], "true", "{r:?}");
}

#[test]
fn filter_rejects_degenerate_covariance() {
    let tmp = tempfile::tempdir().unwrap();
    // Σ = 2e-7·I: positive, but with a determinant below the closed-form cutoff.
    let cfg = write_cfg(tmp.path(), "f.cfg", "noise.segments = 2\nsim.protocol = \"none\"\nfilter.kernel = \"iid_density\"\nfilter.variance = 1e-7\n");
    let out = tmp.path().join("o");
    assert_eq!(cmd("filter", &cfg, &out, &[]), 3);
    assert!(manifest(&out)["error"]
        .as_str()
        .unwrap()
        .contains("not positive definite"));
    let cfg = write_cfg(
        tmp.path(),
        "g.cfg",
        "noise.kind = \"squeezing\"\nnoise.sigma_sqz = 0.1\n",
    );
    assert_eq!(cmd("filter", &cfg, &tmp.path().join("o2"), &[]), 2);
}

#[test]
fn check_group_exit_codes() {
    assert_eq!(cli(&["check-group", "--group", "parity"]), 0);
    assert_eq!(cli(&["check-group", "--group", "cyclic(3)"]), 0);
    assert_eq!(
        cli(&[
            "check-group",
            "--group",
            "cyclic",
            "--m",
            "3",
            "--fock-dim",
            "30"
        ]),
        0
    );
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(
        cli(&[
            "check-group",
            "--group",
            "cyclic(2)",
            "--power",
            "4",
            "--out",
            out
        ]),
        1
    );
    let r = rows(&tmp.path().join("residuals.csv"));
    assert!(r.iter().all(|row| row[2].parse::<f64>().unwrap() > 1.0));
    assert_eq!(cli(&["check-group", "--group", "dihedral"]), 2);
}
