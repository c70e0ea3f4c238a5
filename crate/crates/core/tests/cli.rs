use std::path::PathBuf;
use std::process::{Command, Output};

fn gloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gloss")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn run_machine_report_is_stable() {
    let path = scenario_file("anna-bob.gloss");
    let a = gloss(&["run", &path, "--report", "machine"]);
    let b = gloss(&["run", "anna-bob", "--report", "machine"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("delivery 4 bob cafe-tip sms\n"));
}

#[test]
fn trace_goes_to_stderr_as_xml_and_routes() {
    let o = gloss(&["run", "anna-bob", "--trace", "--report", "machine"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().all(|l| l.starts_with('<') || l.starts_with("route ")));
    assert!(err.contains("<hearsay-notice id=\"cafe-tip\" user=\"bob\""));
    assert!(err.contains("route msg=4 status=delivered:n-rue-x"));
}

#[test]
fn no_cache_flag_and_seed() {
    let o = gloss(&["run", "repeat-fetch", "--no-cache", "--seed", "5", "--report", "machine"]);
    let out = stdout(&o);
    assert!(out.contains("seed 5\n"));
    assert!(out.contains("arrivals.node n-world 0 100\n"));
}

#[test]
fn validate_and_exit_codes() {
    let ok = gloss(&["validate", "anna-bob"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("6 nodes, 2 users"));

    let dir = std::env::temp_dir().join(format!("gloss-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.gloss");
    let text = std::fs::read_to_string(scenario_file("anna-bob.gloss")).unwrap();
    std::fs::write(&bad, text.replace("carol    n-paris", "carol    n-lyon")).unwrap();
    let o = gloss(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n-lyon"));
    std::fs::remove_dir_all(&dir).unwrap();

    assert_eq!(gloss(&["run", "no-such-scenario"]).status.code(), Some(1));
    assert_eq!(gloss(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn oracle_commands() {
    let o = gloss(&["oracle", "containment", "anna-bob", "48.855", "2.345"]);
    assert_eq!(stdout(&o).trim(), "rue-x");
    let o = gloss(&["oracle", "route", "anna-bob", "n-brussels", "rue-x"]);
    assert_eq!(
        stdout(&o),
        "node n-rue-x\npath n-brussels n-belgium n-world n-france n-paris n-rue-x\n"
    );
    let o = gloss(&["oracle", "haversine", "0", "0", "0", "1"]);
    let m: f64 = stdout(&o).trim().parse().unwrap();
    assert!((m - 111_194.9).abs() < 1.0, "{m}");
    let o = gloss(&["oracle", "containment", "anna-bob", "-33.9", "151.2"]);
    assert_eq!(stdout(&o).trim(), "world");
}
