//! End-to-end tests of the command-line interface: exit codes, artifacts,
//! and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_txsched"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join("txsched-cli-tests")
        .join(format!("{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process exited")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

const STABLE_CENTRALIZED: &str = r#"
[system]
m = 4
k = 2
horizon = 3000
seed = 11

[scheduler]
kind = "centralized"

[adversary]
kind = "token-bucket"
rho = "1/8"
b = 1
model = "queue-free"
shape = "uniform"
max_weight = 2
"#;

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = scratch("run-stable");
    let config = write(&dir, "exp.toml", STABLE_CENTRALIZED);
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for artifact in [
        "trace.csv",
        "trace.json",
        "stream.csv",
        "report.txt",
        "report.json",
    ] {
        assert!(
            dir.join("out").join(artifact).exists(),
            "{artifact} missing"
        );
    }
    let csv = fs::read_to_string(dir.join("out/trace.csv")).unwrap();
    assert!(csv.starts_with("round,generated,invoked,committed,aborted,pending\n"));
    assert!(stdout(&out).contains("bound violations     0"));
}

#[test]
fn run_twice_with_one_seed_is_byte_identical() {
    let dir = scratch("run-deterministic");
    let config = write(&dir, "exp.toml", STABLE_CENTRALIZED);
    for sub in ["a", "b"] {
        let out = bin()
            .arg("run")
            .arg(&config)
            .arg("--out")
            .arg(dir.join(sub))
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(dir.join("a/trace.json")).unwrap();
    let b = fs::read(dir.join("b/trace.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_override_changes_the_trace() {
    let dir = scratch("run-seed-override");
    let config = write(&dir, "exp.toml", STABLE_CENTRALIZED);
    for (sub, seed) in [("a", "11"), ("b", "12")] {
        let out = bin()
            .arg("run")
            .arg(&config)
            .arg("--seed")
            .arg(seed)
            .arg("--out")
            .arg(dir.join(sub))
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(dir.join("a/trace.json")).unwrap();
    let b = fs::read(dir.join("b/trace.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn invalid_config_exits_one() {
    let dir = scratch("run-bad-config");
    let config = write(
        &dir,
        "exp.toml",
        &STABLE_CENTRALIZED.replace("k = 2", "k = 9"),
    );
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must satisfy"));
}

#[test]
fn lower_bound_run_reports_growth_without_violations() {
    let dir = scratch("run-lower-bound");
    let config = write(
        &dir,
        "exp.toml",
        r#"
[system]
m = 6
k = 3
horizon = 4000
seed = 0

[scheduler]
kind = "centralized"

[adversary]
kind = "lower-bound"
rho = "3/5"
b = 2
model = "queue-free"
"#,
    );
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    // Instability is not a violation when no bound was claimed.
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = stdout(&out);
    let slope = report
        .lines()
        .find_map(|l| l.strip_prefix("growth slope"))
        .expect("slope line present")
        .trim_start();
    assert!(
        !slope.starts_with('-')
            && !slope.starts_with("0/")
            && slope.starts_with(|c: char| c.is_ascii_digit()),
        "positive growth slope expected, got {slope:?}"
    );
    assert!(report.contains("bound violations     0"), "{report}");
}

#[test]
fn distributed_run_exits_zero() {
    let dir = scratch("run-distributed");
    let config = write(
        &dir,
        "exp.toml",
        r#"
[system]
m = 2
k = 1
n = 2
horizon = 1920
seed = 3

[scheduler]
kind = "distributed"

[adversary]
kind = "token-bucket"
rho = "1/12"
b = 1
model = "queue-based"
shape = "uniform"
max_weight = 1
"#,
    );
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("bound violations     0"));
}

#[test]
fn replayed_stream_reproduces_the_trace() {
    let dir = scratch("run-replay");
    let config = write(&dir, "exp.toml", STABLE_CENTRALIZED);
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("live"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let replay_config = write(
        &dir,
        "replay.toml",
        &format!(
            r#"
[system]
m = 4
k = 2
horizon = 3000
seed = 11

[scheduler]
kind = "centralized"

[adversary]
kind = "replay"
path = "{}"
"#,
            dir.join("live/stream.csv").display()
        ),
    );
    let out = bin()
        .arg("run")
        .arg(&replay_config)
        .arg("--out")
        .arg(dir.join("replayed"))
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let live = fs::read(dir.join("live/trace.json")).unwrap();
    let replayed = fs::read(dir.join("replayed/trace.json")).unwrap();
    assert_eq!(live, replayed);
}

#[test]
fn run_exits_two_when_a_claimed_bound_breaks() {
    // A replayed burst far beyond what the declared (rho, b) admits: the
    // config claims the stable-range bounds, the trace breaks them.
    let dir = scratch("run-broken-claim");
    let mut stream = String::from("round,owner,type\n");
    for _ in 0..100 {
        stream.push_str("1,,1\n");
    }
    let stream_path = write(&dir, "stream.csv", &stream);
    let config = write(
        &dir,
        "exp.toml",
        &format!(
            r#"
[system]
m = 1
k = 1
horizon = 40
seed = 0

[scheduler]
kind = "centralized"

[adversary]
kind = "replay"
path = "{}"
rho = "1/8"
b = 1
model = "queue-free"
"#,
            stream_path.display()
        ),
    );
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        2,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("Pending"), "{}", stdout(&out));
}

#[test]
fn verify_accepts_generated_streams() {
    let dir = scratch("verify-ok");
    let config = write(&dir, "exp.toml", STABLE_CENTRALIZED);
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = bin()
        .args(["verify"])
        .arg(dir.join("out/stream.csv"))
        .args(["--rho", "1/8", "--b", "1", "--model", "qf"])
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("admissible"));
}

#[test]
fn verify_handles_queue_based_streams() {
    let dir = scratch("verify-qb");
    let config = write(
        &dir,
        "exp.toml",
        r#"
[system]
m = 2
k = 1
n = 2
horizon = 600
seed = 5

[scheduler]
kind = "distributed"

[adversary]
kind = "token-bucket"
rho = "1/12"
b = 1
model = "queue-based"
shape = "singletons"
"#,
    );
    let out = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = bin()
        .arg("verify")
        .arg(dir.join("out/stream.csv"))
        .args(["--rho", "1/12", "--b", "1", "--model", "qb"])
        .output()
        .unwrap();
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("admissible"));
}

#[test]
fn verify_flags_a_doubled_round() {
    let dir = scratch("verify-violation");
    let stream = write(
        &dir,
        "stream.csv",
        "round,owner,type\n1,,10\n1,,10\n1,,10\n",
    );
    let out = bin()
        .arg("verify")
        .arg(&stream)
        .args(["--rho", "1/2", "--b", "1", "--model", "qf"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let text = stdout(&out);
    assert!(text.contains("violation"), "{text}");
    assert!(text.contains("[1, 1]"), "{text}");
}

#[test]
fn verify_rejects_malformed_files() {
    let dir = scratch("verify-truncated");
    let stream = write(&dir, "stream.csv", "round,owner,type\n1,,10\n2,\n");
    let out = bin()
        .arg("verify")
        .arg(&stream)
        .args(["--rho", "1/2", "--b", "1", "--model", "qf"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn setfamily_prints_the_construction() {
    let out = bin().args(["setfamily", "3"]).output().unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "1 2 3\n1 4 5\n2 4 6\n3 5 6\n");
    let out = bin().args(["setfamily", "0"]).output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn color_a_triangle_uses_three_colors() {
    let dir = scratch("color");
    let graph = write(&dir, "triangle.txt", "# a triangle\n3\n0 1\n1 2\n0 2\n");
    for variant in ["primary", "alternative"] {
        let out = bin()
            .arg("color")
            .arg(&graph)
            .args(["--variant", variant])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        assert_eq!(stdout(&out), "0 1\n1 2\n2 3\n", "variant {variant}");
    }
    // A custom order recolors accordingly.
    let out = bin()
        .arg("color")
        .arg(&graph)
        .args(["--order", "2,1,0"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "0 3\n1 2\n2 1\n");
}

#[test]
fn bounds_calculators_print_formula_values() {
    let out = bin()
        .args(["bounds", "centralized", "--m", "4", "--k", "2", "--b", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("rho_max=1/8"), "{text}");
    assert!(text.contains("pending_bound=16"), "{text}");
    assert!(text.contains("latency_bound=16"), "{text}");
    assert!(text.contains("milestone_len=8"), "{text}");

    let out = bin()
        .args([
            "bounds",
            "distributed",
            "--m",
            "2",
            "--k",
            "1",
            "--b",
            "1",
            "--n",
            "2",
            "--rho",
            "1/12",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("block_size=16"), "{text}");
    assert!(text.contains("bulk=64"), "{text}");
    assert!(text.contains("bulk_ok=true"), "{text}");
    assert!(text.contains("pending_bound=1024"), "{text}");

    let out = bin()
        .args(["bounds", "distributed", "--m", "2", "--k", "1", "--b", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "distributed bounds need --n and --rho");
}
