use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ias-ipa"));
    cmd.env_remove("IAS_IPA_THREADS");
    cmd
}

fn example_config() -> json_edit::Tree {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    json_edit::Tree(std::fs::read_to_string(path).unwrap())
}

/// Minimal text edits on the shipped JSON, enough to vary a few scalars.
mod json_edit {
    pub struct Tree(pub String);

    impl Tree {
        pub fn set(mut self, key: &str, value: &str) -> Self {
            let needle = format!("\"{key}\": ");
            let start = self.0.find(&needle).unwrap_or_else(|| panic!("no key {key}")) + needle.len();
            let end = start + self.0[start..].find([',', '\n']).unwrap();
            self.0.replace_range(start..end, value);
            self
        }
    }
}

fn write_config(dir: &TempDir, name: &str, tree: json_edit::Tree) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, tree.0).unwrap();
    path
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.ends_with('\n'));
    text.lines().map(str::to_owned).collect()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", example_config().set("horizon_T", "600.0"));
    let outs: Vec<Vec<u8>> = ["a.csv", "b.csv"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let (code, _, err) = run(bin()
                .args(["simulate", "--seed", "42", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out));
            assert_eq!(code, 0, "{err}");
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert!(text.starts_with("t,mode,x1,x2,x3,psa,z1,z2\n"));
    assert_eq!(text.lines().count(), 1 + 60_001);
}

#[test]
fn simulate_writes_events_and_honours_stride() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.csv");
    let events = dir.path().join("e.csv");
    let (code, _, err) = run(bin()
        .args(["simulate", "--deterministic", "--stride", "1000", "--out"])
        .arg(&out)
        .arg("--events")
        .arg(&events));
    assert_eq!(code, 0, "{err}");
    assert_eq!(csv_rows(&out).len(), 1 + 251);
    let ev = csv_rows(&events);
    assert_eq!(ev[0], "tau,event,psa,x3,h_pre,drift_sum,delta_f1,delta_f2");
    assert!(ev.len() > 4);
    assert!(ev[1].contains(",e1,") && ev[2].contains(",e2,"));
}

#[test]
fn grad_writes_six_rows_to_stdout() {
    let (code, out, err) = run(bin().args(["grad", "--deterministic"]));
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "theta_index,ipa_value");
    for (k, line) in lines[1..].iter().enumerate() {
        let (i, v) = line.split_once(',').unwrap();
        assert_eq!(i, (k + 1).to_string());
        assert!(v.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn fdcheck_single_interval_passes_and_strict_tolerance_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", example_config().set("horizon_T", "100.0"));
    let (code, out, err) = run(bin()
        .args(["fdcheck", "--deterministic", "--tol", "1e-4", "--config"])
        .arg(&cfg));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 7);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",pass")), "{out}");

    let (code, _, err) = run(bin()
        .args(["fdcheck", "--deterministic", "--tol", "1e-14", "--index", "3", "--config"])
        .arg(&cfg));
    assert_eq!(code, 3);
    assert!(err.starts_with("ERROR:validation:"), "{err}");
}

#[test]
fn fdcheck_rejects_tolerance_for_noisy_runs() {
    let (code, _, err) = run(bin().args(["fdcheck", "--tol", "1e-3", "--reps", "2"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("ERROR:config:"), "{err}");
}

#[test]
fn sweep_emits_one_row_per_valid_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", example_config().set("horizon_T", "150.0"));
    let mut csvs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("s{threads}.csv"));
        let (code, _, err) = run(bin()
            .args(["sweep", "--theta1", "1.5:7.5:1.0", "--theta2", "8:15:1.0", "--reps", "2"])
            .args(["--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out));
        assert_eq!(code, 0, "{err}");
        assert!(err.contains("argmin"), "{err}");
        let rows = csv_rows(&out);
        assert_eq!(rows[0], "theta1,theta2,L_mean,dL3,dL4,dL5,dL6,scenario,n_ok,n_diverged");
        assert_eq!(rows.len(), 1 + 56);
        csvs.push(rows);
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn perturb_emits_rows_per_index_and_percent() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", example_config().set("horizon_T", "300.0"));
    let (code, out, err) = run(bin().args(["perturb", "--reps", "1", "--config"]).arg(&cfg));
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "theta_index,percent,scenario,L_mean,n_ok,n_diverged");
    assert_eq!(lines.len(), 1 + 4 * 5);

    let (code, out, err) = run(bin()
        .args(["perturb", "--reps", "1", "--index", "5", "--percents", "-10,10", "--config"])
        .arg(&cfg));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let (code, _, err) = run(bin().args(["simulate", "--bogus"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("ERROR:usage:"), "{err}");

    let (code, _, err) = run(bin().arg("frobnicate"));
    assert_eq!(code, 1);
    assert!(err.starts_with("ERROR:usage:"), "{err}");

    let (code, _, err) = run(bin().args(["simulate", "--config", "/nonexistent/c.json"]));
    assert_eq!(code, 1);
    assert!(err.starts_with("ERROR:config:"), "{err}");

    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.json", example_config().set("theta1", "9.0"));
    let (code, _, err) = run(bin().arg("simulate").arg("--config").arg(&cfg));
    assert_eq!(code, 1);
    assert!(err.contains("theta1 < theta2 violated"), "{err}");

    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, "{\n  \"model\": [\n").unwrap();
    let (code, _, err) = run(bin().arg("simulate").arg("--config").arg(&cfg));
    assert_eq!(code, 1);
    assert!(err.starts_with("ERROR:parse:"), "{err}");

    let (code, _, err) = run(bin().args(["grad", "--deterministic"]).env("IAS_IPA_THREADS", "many"));
    assert_eq!(code, 1);
    assert!(err.contains("IAS_IPA_THREADS"), "{err}");

    let (code, out, _) = run(bin().arg("--help"));
    assert_eq!(code, 0);
    assert!(out.contains("fdcheck"));
}

#[test]
fn divergence_exits_two() {
    // Large CRC noise from an empty CRC population crosses zero at once.
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "noisy.json",
        example_config().set("x2", "0.0").set("std2", "1.0").set("horizon_T", "10.0"),
    );
    let (code, _, err) = run(bin().arg("simulate").arg("--config").arg(&cfg));
    assert_eq!(code, 2);
    assert!(err.starts_with("ERROR:divergence:"), "{err}");
}
