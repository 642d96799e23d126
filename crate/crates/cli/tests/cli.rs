use std::path::Path;
use std::process::{Command, Output};

fn trafficlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trafficlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn list_prints_every_experiment() {
    let out = trafficlab(&["list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with(' ') && l.contains(':'))
        .map(|l| l.split(':').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 11, "{ids:?}");
    assert!(ids.contains(&"critical-load"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "lambda = -0.5\n");
    let out = trafficlab(&["road-obstacles", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("road-obstacles.lambda"), "{err}");

    let cfg = write(dir.path(), "unknown.toml", "speed = 1.0\n");
    assert_eq!(trafficlab(&["jam", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(trafficlab(&["no-such-experiment"]).status.code(), Some(1));
    assert_eq!(trafficlab(&["jam", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(trafficlab(&["jam", "--format", "xml"]).status.code(), Some(1));
}

#[test]
fn csv_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "obst.toml", "x_max = 2000.0\nreplicas = 3\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = trafficlab(&["road-obstacles", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "replica,mean_speed,encounters");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("# ") && lines[4].contains("config-sha256="));
    assert!(lines[4].contains("seed=9"));
}

#[test]
fn json_summary_has_analytic_and_empirical() {
    let out = trafficlab(&["road-tandem", "--replicas", "2", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"analytic\": 0.818181"), "{text}");
    assert!(text.contains("\"empirical\""));
}

#[test]
fn tolerance_miss_exits_two() {
    // quiet cars at density 1/4: the single-car speed is well above 1
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", "t_max = 200.0\nreplicas = 3\n");
    let out = trafficlab(&["grammar", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("relative_velocity"));
}

#[test]
fn network_file_resolves_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "ring.toml",
        "nodes = 3\nedges = [[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]\n[[mu]]\nnode = 1\nrate = 1.0\n[[mu]]\nnode = 2\nrate = 2.0\n[[mu]]\nnode = 3\nrate = 4.0\n",
    );
    let cfg = write(dir.path(), "run.toml", "network = \"ring.toml\"\nm = 3\nt_max = 2000.0\nreplicas = 4\n");
    let out = trafficlab(&["qnet-closed", "--config", &cfg, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("mean_1"));
}
