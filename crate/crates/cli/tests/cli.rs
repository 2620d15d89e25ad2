use std::path::Path;
use std::process::{Command, Output};

fn wgqed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgqed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn wgqed_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgqed"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn connected(v: &serde_json::Value) -> (f64, f64) {
    (
        v["connected"]["re"].as_f64().unwrap(),
        v["connected"]["im"].as_f64().unwrap(),
    )
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn kerr_reference_value() {
    let o = wgqed(&[
        "eval", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--p", "0,0", "--k", "0,0", "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (re, im) = connected(&json(&o));
    // -chi/(pi gamma) s_0^2 (2 s_0) / (-2 alpha - chi) with s_0 = -2
    let want = -8.0 / std::f64::consts::PI;
    assert!((re - want).abs() < 1e-6 && (im - want).abs() < 1e-6, "{re} {im}");

    let human = stdout(&wgqed(&["eval", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--p", "0,0", "--k", "0,0"]));
    assert!(human.contains("-2.54648 - 2.54648i"), "{human}");
}

#[test]
fn linear_cavity_connected_part_vanishes() {
    let o = wgqed(&[
        "eval", "--kerr", "wc=0,chi=0,gamma=1", "--n", "2", "--p", "0.1,-0.1", "--k", "0.2,-0.2", "--format", "json",
    ]);
    assert!(o.status.success());
    let (re, im) = connected(&json(&o));
    assert!(re.hypot(im) < 1e-10);
}

#[test]
fn off_shell_is_a_validation_error() {
    let o = wgqed(&["eval", "--kerr", "wc=0,chi=1,gamma=1", "--p", "0.1,0", "--k", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("energy conservation"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn single_photon_eval_reports_transmission() {
    let o = wgqed(&["eval", "--kerr", "wc=0.5,chi=1,gamma=1", "--p", "0.5", "--k", "0.5", "--format", "json"]);
    let v = json(&o);
    assert!((v["transmission"]["re"].as_f64().unwrap() + 1.0).abs() < 1e-14);
}

#[test]
fn full_report_lists_every_support() {
    let o = wgqed(&[
        "eval", "--kerr", "wc=0,chi=1,gamma=1", "--p", "0.3,-0.1,0.2", "--k", "0.3,-0.1,0.2", "--full", "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&o);
    let terms = v["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 16);
    let on: Vec<&serde_json::Value> = terms.iter().filter(|t| t["on_support"].as_bool().unwrap()).collect();
    // identity pairing, three single pairings with a connected pair, and the connected block
    assert_eq!(on.len(), 5);
    for t in &on {
        assert!(t["density"]["abs"].as_f64().unwrap().is_finite());
    }
    let connected_term = on.iter().find(|t| t["support"] == "{p1,p2,p3|k1,k2,k3}").unwrap();
    assert_eq!(connected_term["density"]["re"], v["connected"]["re"]);
}

#[test]
fn inline_kerr_and_system_file_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys.json");
    let s = sys.to_str().unwrap();
    assert!(wgqed(&["eval", "--kerr", "wc=0,chi=1,gamma=1", "--p", "0", "--k", "0", "--save-system", s])
        .status
        .success());
    let o = wgqed(&["eval", "--kerr", "wc=0,chi=1,gamma=1", "--system", s, "--p", "0", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!("{{\"system\": {:?}}}", s)).unwrap();
    let o = wgqed(&[
        "eval", "--config", cfg.to_str().unwrap(), "--kerr", "wc=0,chi=1,gamma=1", "--p", "0", "--k", "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conflict"));
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "eval", "kerr": "wc=0,chi=1,gamma=1", "p": [0.4, -0.4], "k": [0.1, -0.1], "format": "json"}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = json(&wgqed(&["eval", "--config", c]));
    assert_eq!(from_file["p"][0], 0.4);
    let o = wgqed(&["eval", "--config", c, "--kerr", "wc=0.2,chi=1,gamma=1", "--p", "0.3,-0.3"]);
    let v = json(&o);
    assert_eq!(v["p"][0], 0.3);
    assert_eq!(v["k"][0], 0.1);
    assert!(v["system"].as_str().unwrap().contains("omega_c=0.2"));
    assert_ne!(v["connected"], from_file["connected"]);
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"kerr": "wc=0,chi=1,gamma=1", "frequencies": [1]}"#).unwrap();
    let o = wgqed(&["eval", "--config", cfg.to_str().unwrap(), "--p", "0", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"mode": "scan"}"#).unwrap();
    let o = wgqed(&["eval", "--config", cfg.to_str().unwrap(), "--kerr", "wc=0,chi=1,gamma=1", "--p", "0", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saved_system_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = ["--p", "0.31,-0.2", "--k", "0.05,0.06", "--format", "json"];
    let first = wgqed(
        &[
            &["eval", "--kerr", "wc=0.3,chi=-0.7,gamma=0.9", "--save-system", a.to_str().unwrap()][..],
            &args[..],
        ]
        .concat(),
    );
    let second = wgqed(
        &[
            &["eval", "--system", a.to_str().unwrap(), "--save-system", b.to_str().unwrap()][..],
            &args[..],
        ]
        .concat(),
    );
    assert!(first.status.success() && second.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(json(&first)["connected"], json(&second)["connected"]);
}

#[test]
fn two_photon_scan_table() {
    let o = wgqed(&["scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--total", "-5:5:101"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(!text.contains('\r'));
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, ["total", "p1", "p2", "k1", "k2", "re", "im", "abs"]);
    assert_eq!(rows.len(), 101);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    for r in &rows {
        assert!((r[1] + r[2] - r[3] - r[4]).abs() < 1e-12);
        assert!((r[5].hypot(r[6]) - r[7]).abs() <= 1e-15 * r[7].max(1.0));
    }
    // the peak sits between the single-photon resonance 2 omega_c and the
    // two-photon pole 2 omega_c + chi
    let peak = rows.iter().max_by(|a, b| a[7].total_cmp(&b[7])).unwrap()[0];
    assert!((0.0..=1.0).contains(&peak), "{peak}");
}

#[test]
fn strong_kerr_scan_with_split_inputs_shows_the_pole() {
    // inputs held far from the single-photon resonance in opposite directions
    let o = wgqed(&[
        "scan", "--kerr", "wc=0,chi=8,gamma=1", "--n", "2", "--total", "4:12:161", "--relative-p", "-4,4",
        "--relative-k", "-3,3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = csv_rows(&stdout(&o));
    let peak = rows.iter().max_by(|a, b| a[7].total_cmp(&b[7])).unwrap()[0];
    assert!((peak - 8.0).abs() < 1.0, "{peak}");
}

#[test]
fn single_photon_scan_has_unit_modulus() {
    let o = wgqed(&["scan", "--kerr", "wc=0.3,chi=1,gamma=0.7", "--n", "1", "--total", "-4:4:201"]);
    let (header, rows) = csv_rows(&stdout(&o));
    assert_eq!(header, ["total", "p1", "k1", "re", "im", "abs"]);
    assert!(rows.iter().all(|r| (r[5] - 1.0).abs() < 1e-12));
}

#[test]
fn empty_or_unbalanced_grids_are_errors() {
    let o = wgqed(&["scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--total", "-5:5:0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wgqed(&[
        "scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--total", "-5:5:3", "--relative-p", "0.1,0.2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scan_output_is_deterministic_across_thread_counts() {
    let args = ["scan", "--kerr", "wc=0.1,chi=0.8,gamma=1", "--n", "3", "--total", "-3:3:57", "--relative-p", "0.3,-0.1,-0.2"];
    let one = wgqed_env(&args, "WGQED_THREADS", "1");
    let four = wgqed_env(&args, "WGQED_THREADS", "4");
    let again = wgqed(&args);
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.stdout, again.stdout);
}

#[test]
fn scan_writes_table_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = wgqed(&[
        "scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "2", "--total", "-1:1:5", "--output", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 6);
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = wgqed_env(&["scan", "--kerr", "wc=0,chi=1,gamma=1", "--n", "1", "--total", "0:1:2"], "WGQED_THREADS", "0");
    assert_eq!(o.status.code(), Some(2));
}

fn check_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| l.starts_with("check ")).collect()
}

#[test]
fn verify_routes() {
    let o = wgqed(&["verify", "--suite", "routes", "--n", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let lines = check_lines(&text);
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l.contains(": PASS ")));
    assert!(text.contains("summary: 6 passed, 0 failed"));
}

#[test]
fn verify_strong_nonlinearity_and_pv() {
    for suite in ["chi-infinity", "pv-cancellation", "counts", "unitarity", "closed-form"] {
        let o = wgqed(&["verify", "--suite", suite, "--format", "json"]);
        assert!(o.status.success(), "{suite}: {}", stdout(&o));
        let v = json(&o);
        assert_eq!(v["failed"], 0);
        for c in v["checks"].as_array().unwrap() {
            assert!(c["max_deviation"].as_f64().unwrap() < c["tolerance"].as_f64().unwrap());
        }
    }
}

#[test]
fn verify_on_a_system_file() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys.json");
    wgqed(&["eval", "--kerr", "wc=0.2,chi=0.5,gamma=1,dim=4", "--p", "0", "--k", "0", "--save-system", sys.to_str().unwrap()]);
    let o = wgqed(&["verify", "--system", sys.to_str().unwrap(), "--suite", "all"]);
    assert!(o.status.success(), "{}", stdout(&o));
    // closed forms need the Kerr parameters
    let o = wgqed(&["verify", "--system", sys.to_str().unwrap(), "--suite", "closed-form"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_is_deterministic() {
    let a = wgqed(&["verify", "--suite", "routes", "--kerr", "wc=0.4,chi=-0.3,gamma=0.8"]);
    let b = wgqed(&["verify", "--suite", "routes", "--kerr", "wc=0.4,chi=-0.3,gamma=0.8"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn single_photon_oracle_default_run() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("spectrum.csv");
    let o = wgqed(&["oracle", "--output", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let report = stdout(&o);
    assert!(report.contains("check spectrum: PASS"), "{report}");
    assert!(report.contains("fitted_gamma"));
    let (header, rows) = csv_rows(&std::fs::read_to_string(&table).unwrap());
    assert_eq!(header, ["momentum", "energy", "re", "im", "modulus"]);
    assert_eq!(rows.len(), 49);
}

#[test]
fn two_photon_linear_oracle() {
    let o = wgqed(&["oracle", "--photons", "2", "--kerr", "wc=0,chi=0,gamma=1", "--format", "json", "--output", "/dev/null"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let v = json(&o);
    let check = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "correlated-norm")
        .unwrap();
    assert!(check["max_deviation"].as_f64().unwrap() < 1e-3);
}

#[test]
fn oversized_two_photon_request() {
    let o = wgqed(&["oracle", "--photons", "2", "--sites", "2000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("memory budget"), "{}", stderr(&o));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(wgqed(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wgqed(&["eval", "--kerr", "wc=0,chi=1"]).status.code(), Some(2));
    assert_eq!(wgqed(&["verify", "--suite", "nonsense"]).status.code(), Some(2));
    assert_eq!(wgqed(&["--help"]).status.code(), Some(0));
    assert!(Path::new(env!("CARGO_BIN_EXE_wgqed")).exists());
}
