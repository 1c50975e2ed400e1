use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn curvflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).expect("stdout is json")
}

fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let k = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[k].parse().unwrap()).collect()
}

const L2_RUN: &str = r#"
[grid]
dim = 3
n_cells = 48

[metric]
family = "round"

[f]
kind = "constant"
value = 1.0

[u0]
kind = "eigenmode"
target = -10.0
amplitude = 1e-3
volume_match = true

[integrator]
horizon = 2.0
cadence = 10
stop_tol = 0.0

[output]
dir = "l2"
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn cubic_paper_measure_gives_the_closed_form() {
    let o = curvflow(&["cubic", "--n", "3", "--measure", "paper"]);
    assert!(o.status.success());
    let v = json(&o);
    let radial = v["radial_integral"].as_f64().unwrap();
    assert!((radial + 14.0 * PI / 9.0).abs() < 1e-8);
    let f3 = v["F3"].as_f64().unwrap();
    assert!((f3 - v["prefactor"].as_f64().unwrap() * v["weighted_integral"].as_f64().unwrap()).abs() < 1e-9 * f3.abs());
    assert!(stdout(&o).contains("-4.88692190559"));

    let g = json(&curvflow(&["cubic", "--n", "3", "--measure", "geometric"]));
    assert!(g["radial_integral"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn usage_errors_exit_2() {
    let o = curvflow(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(curvflow(&["cubic", "--measure", "lebesgue"]).status.code(), Some(2));
    assert_eq!(curvflow(&["as3", "--eps", "0.7"]).status.code(), Some(2));
    assert_eq!(curvflow(&[]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    // F_p <= 0 violates the AS condition
    let o = curvflow(&["ansatz", "--p", "3", "--Fp", "-1", "--T", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_config_leaves_no_files() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        L2_RUN.replace("horizon = 2.0", "horizon = \"two\""),
        L2_RUN.replace("[grid]", "[grid]\nspacing = 0.1"),
        L2_RUN.replace("n_cells = 48", "n_cells = 4"),
        L2_RUN.replace("target = -10.0", "target = -10.0\nseed = 3"),
        L2_RUN.replace("kind = \"eigenmode\"", "kind = \"gaussian\""),
        L2_RUN.replace("family = \"round\"", "family = \"custom:missing.csv\""),
        "[grid\ndim = 3".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write(tmp.path(), &format!("bad{i}.toml"), text);
        let o = curvflow(&["flow", "run", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!tmp.path().join("l2").exists(), "case {i} wrote output");
    }
    let o = curvflow(&["flow", "run", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn critical_metric_is_a_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let text = L2_RUN
        .replace("kind = \"constant\"\nvalue = 1.0", "kind = \"curvature_normalized\"")
        .replace("kind = \"eigenmode\"\ntarget = -10.0\namplitude = 1e-3", "kind = \"constant\"\nvalue = 1.0")
        .replace("horizon = 2.0", "horizon = 0.5");
    let cfg = write(tmp.path(), "critical.toml", &text);
    let o = curvflow(&["flow", "run", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(tmp.path().join("l2/trace.csv")).unwrap();
    assert!(trace.starts_with("t,volume,f_volume,E,alpha,grad_l2,dist_sup,dist_l2\n"));
    let g = column(&trace, "grad_l2");
    assert!(g.len() > 2);
    assert!(g.iter().all(|v| *v < 1e-10));
}

#[test]
fn run_record_echo_reproduces_the_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "l2.toml", L2_RUN);
    assert!(curvflow(&["flow", "run", "--config", &cfg]).status.success());
    let first = tmp.path().join("l2");
    for f in ["trace.csv", "record.json", "fits.json", "config.toml"] {
        assert!(first.join(f).exists(), "{f} missing");
    }
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(first.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["termination"]["reason"], "horizon_reached");
    assert_eq!(record["config"]["grid"]["n_cells"], 48);
    assert_eq!(record["checks"]["energy_monotone"], true);
    assert!(record["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(record["fits"]["dist_l2"]["Ok"]["verdict"], "exponential");

    let again = tmp.path().join("again");
    let echoed = first.join("config.toml");
    let o = curvflow(&["flow", "run", "--config", echoed.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(first.join("trace.csv")).unwrap(),
        fs::read(again.join("trace.csv")).unwrap()
    );
}

#[test]
fn fit_and_lojasiewicz_read_a_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "l2.toml", L2_RUN);
    assert!(curvflow(&["flow", "run", "--config", &cfg]).status.success());
    let trace = tmp.path().join("l2/trace.csv");
    let trace = trace.to_str().unwrap();

    let fit = json(&curvflow(&["fit", "--input", trace]));
    assert_eq!(fit["verdict"], "exponential");
    let rate = fit["best"]["rate"].as_f64().unwrap();
    assert!((rate - 10.0).abs() < 1.5, "rate {rate}");

    let fixed = json(&curvflow(&[
        "fit", "--input", trace, "--model", "polynomial", "--t-min", "0.2", "--t-max", "0.8",
    ]));
    assert_eq!(fixed["model"], "polynomial");

    let theta = json(&curvflow(&["lojasiewicz", "--input", trace]));
    let theta = theta["theta"].as_f64().unwrap();
    assert!((theta - 0.5).abs() < 0.01, "theta {theta}");

    assert_eq!(curvflow(&["fit", "--input", trace, "--column", "nope"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_directory_per_config() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.toml", L2_RUN);
    let b = write(
        tmp.path(),
        "b.toml",
        &format!("seed = 5\n{}", L2_RUN.replace("kind = \"eigenmode\"\ntarget = -10.0", "kind = \"random\"")),
    );
    let out = tmp.path().join("sweep");
    let o = curvflow(&["sweep", "--out", out.to_str().unwrap(), &a, &b]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ta = fs::read_to_string(out.join("a/trace.csv")).unwrap();
    let tb = fs::read_to_string(out.join("b/trace.csv")).unwrap();
    assert_ne!(ta, tb);
    // each run matches the same config run on its own
    let solo = tmp.path().join("solo");
    assert!(curvflow(&["flow", "run", "--config", &a, "--out", solo.to_str().unwrap()]).status.success());
    assert_eq!(ta, fs::read_to_string(solo.join("trace.csv")).unwrap());

    let bad = write(tmp.path(), "c.toml", "[grid]\n");
    let o = curvflow(&["sweep", "--out", tmp.path().join("s2").to_str().unwrap(), &a, &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("s2").exists());
}

#[test]
fn positivity_loss_exits_1_and_keeps_the_trace() {
    let tmp = TempDir::new().unwrap();
    let text = L2_RUN.replace("horizon = 2.0", "horizon = 2.0\nscheme = \"rk4\"\ndt_over_h2 = 1.0");
    let cfg = write(tmp.path(), "rk4.toml", &text);
    let o = curvflow(&["flow", "run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("positivity lost"));
    let record = fs::read_to_string(tmp.path().join("l2/record.json")).unwrap();
    assert!(record.contains("positivity_lost"));
}

#[test]
fn ansatz_emits_csv() {
    let o = curvflow(&["ansatz", "--p", "3", "--Fp", "2", "--T", "10", "--emit", "csv", "--samples", "11"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let amp = column(&text, "amplitude");
    assert_eq!(amp.len(), 11);
    assert!((amp[0] - 2.0 / 15.0).abs() < 1e-15);
    assert!(column(&text, "residual").iter().all(|r| *r < 1e-12));
}

#[test]
fn spectrum_of_custom_profile_matches_round() {
    let tmp = TempDir::new().unwrap();
    let n = 32;
    let h = PI / n as f64;
    let mut text = String::from("r,w,wp,wpp\n");
    for j in 0..n {
        let r = (j as f64 + 0.5) * h;
        text.push_str(&format!("{r:.17e},{:.17e},{:.17e},{:.17e}\n", r.sin(), r.cos(), -r.sin()));
    }
    let path = write(tmp.path(), "round.csv", &text);
    let custom = curvflow(&["spectrum", "--n-cells", "32", "--metric", &format!("custom:{path}")]);
    let round = curvflow(&["spectrum", "--n-cells", "32"]);
    assert!(custom.status.success(), "{}", String::from_utf8_lossy(&custom.stderr));
    let a = column(&stdout(&custom), "eigenvalue");
    let b = column(&stdout(&round), "eigenvalue");
    assert_eq!(a.len(), 32);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
    }
    assert_eq!(stdout(&round).matches(",kernel").count(), 1);

    let short = write(tmp.path(), "short.csv", "r,w,wp,wpp\n0.1,0.1,1,0\n");
    let o = curvflow(&["spectrum", "--n-cells", "32", "--metric", &format!("custom:{short}")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn as3_reports_json() {
    let v = json(&curvflow(&["as3", "--eps", "0"]));
    assert_eq!(v["holds"], true);
    assert!(v["f3_paper_radial"]["value"].as_f64().unwrap() < 0.0);
    let w = json(&curvflow(&["as3", "--eps", "0.05"]));
    assert!(w["continuity_constant"].as_f64().unwrap().is_finite());
    assert!(w["curvature_spread"].as_f64().unwrap() > 0.0);
}
