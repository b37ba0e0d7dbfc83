use std::path::Path;
use std::process::{Command, Output};

fn branchlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_branchlab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CONSTRUCT: &str = r#"
s_values = [0.6, 0.75]
seeds = [
  { kind = "dirac_grid", N = 4, T = 0.1 },
  { kind = "uniform_grid", N = 2, r = 0.25, T = 0.1, depth = 2 },
]
"#;

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for rel in ["results.csv", "results.json"] {
        files.push((rel.to_string(), std::fs::read(dir.join(rel)).unwrap()));
    }
    let mut plots: Vec<_> = std::fs::read_dir(dir.join("plotdata")).unwrap().map(|e| e.unwrap().path()).collect();
    plots.sort();
    for p in plots {
        files.push((p.display().to_string(), std::fs::read(&p).unwrap()));
    }
    files
}

#[test]
fn construct_writes_outputs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", CONSTRUCT);
    let out = tmp.path().join("out");
    let o = branchlab(&["construct", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = read_outputs(&out);
    let csv = String::from_utf8(first[0].1.clone()).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("config_hash,core_version,cli_version,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    let hash = rows[0].split(',').next().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(rows.iter().all(|r| r.starts_with(hash)));
    for line in std::fs::read_to_string(out.join("plotdata/construct_seed0_dirac_grid.tsv")).unwrap().lines().skip(1) {
        assert_eq!(line.split('\t').count(), 2);
    }

    let o = branchlab(&["construct", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cached"));
    assert_eq!(read_outputs(&out), first);

    // A cold rerun into a fresh directory matches byte for byte too.
    let out2 = tmp.path().join("out2");
    let o = branchlab(&["construct", "--config", &cfg, "--out", out2.to_str().unwrap()]);
    assert!(o.status.success());
    let second = read_outputs(&out2);
    assert_eq!(second.len(), first.len());
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.1, b.1);
    }
}

#[test]
fn overrides_change_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", CONSTRUCT);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(branchlab(&["construct", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let o = branchlab(&["construct", "--config", &cfg, "--out", b.to_str().unwrap(), "--s_values=[0.9]"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ca = std::fs::read_to_string(a.join("results.csv")).unwrap();
    let cb = std::fs::read_to_string(b.join("results.csv")).unwrap();
    assert_ne!(ca.lines().nth(1).unwrap()[..64], cb.lines().nth(1).unwrap()[..64]);
    assert_eq!(cb.lines().count(), 3);
}

#[test]
fn config_errors_exit_one_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad_syntax = write(tmp.path(), "syntax.toml", "s_values = [0.5]\nK = = 3\n");
    let o = branchlab(&["construct", "--config", &bad_syntax, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("syntax.toml:2:"), "{}", String::from_utf8_lossy(&o.stderr));

    let unknown = write(tmp.path(), "unknown.toml", "s_values = [0.5]\n\nbogus_key = 1\n");
    let o = branchlab(&["construct", "--config", &unknown, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown.toml:3:"), "{}", String::from_utf8_lossy(&o.stderr));

    let wrong_verb = write(tmp.path(), "verb.toml", "experiment = \"global_scaling\"\ns_values = [0.5]\n");
    let o = branchlab(&["construct", "--config", &wrong_verb, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let decreasing = write(tmp.path(), "grid.toml", "s_values = [0.5]\nT_values = [0.1, 0.01, 0.001, 0.0001]\n");
    let o = branchlab(&["global-scaling", "--config", &decreasing, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergent_atomic_norm_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "s_values = [0.4]\nboundary_mode = { mode = \"atomic\" }\nseeds = [{ kind = \"dirac_grid\", N = 4, T = 0.1 }]\n",
    );
    let o = branchlab(&["construct", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn global_scaling_reports_fit_per_s() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.toml", "s_values = [0.2, 0.75]\nT_range = [1e-4, 1e-1]\n");
    let out = tmp.path().join("out");
    let o = branchlab(&["global-scaling", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let res = json["results"].as_array().unwrap();
    assert_eq!(res.len(), 2);
    for (g, want) in res.iter().zip([1.0 / 3.0, 0.6]) {
        let e = g["best_fit"]["exponent"].as_f64().unwrap();
        assert!((e - want).abs() < 0.05, "{e} vs {want}");
        assert_eq!(g["points"].as_array().unwrap().len(), 25);
    }
    assert!(out.join("plotdata/global_s0.75_fit.tsv").exists());
}

#[test]
fn validator_suite_reports_fixture_failures_without_failing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "v.toml", "seeds = [{ kind = \"dirac_grid\", N = 3, T = 0.5 }]\n");
    let out = tmp.path().join("out");
    let o = branchlab(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains("fixture:crossing") && l.contains(",false,")));
    assert!(csv.lines().any(|l| l.contains("fixture:loop") && l.contains("no_loop,false")));
}
