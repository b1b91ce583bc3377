use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
}

fn mcurv(dir: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_mcurv")).args(args).current_dir(dir).output().expect("spawn mcurv");
    Run { code: out.status.code().expect("exit code"), stdout: String::from_utf8(out.stdout).expect("utf-8 stdout") }
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let s: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// CSV rows as JSON objects keyed by the header.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Value>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            Value::Object(header.iter().cloned().zip(rec.iter().map(|c| Value::String(c.into()))).collect())
        })
        .collect();
    (header, rows)
}

fn cell(row: &Value, key: &str) -> f64 {
    row[key].as_str().unwrap().parse().unwrap()
}

fn write_spec(dir: &Path, name: &str, states: &[&str], rates: &[(&str, &str, f64)]) -> String {
    let spec = serde_json::json!({
        "states": states,
        "rates": rates.iter().map(|(f, t, r)| serde_json::json!({"from": f, "to": t, "rate": r})).collect::<Vec<_>>(),
    });
    assert_valid("chain_spec.schema.json", &spec);
    fs::write(dir.join(name), spec.to_string()).unwrap();
    name.to_string()
}

#[test]
fn validate_accepts_the_triangle() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["family", "complete", "3", "--out", "k3"]);
    assert_eq!(r.code, 0);
    assert_valid("chain_spec.schema.json", &read_json(&dir.path().join("k3.json")));
    let r = mcurv(dir.path(), &["validate", "k3.json", "--out", "v"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let v = read_json(&dir.path().join("v.json"));
    assert_valid("validate.schema.json", &v);
    assert_eq!(v["states"], 3);
    assert_eq!(v["table"][0]["m1"], 2.0);
    assert_eq!(serde_json::from_str::<Value>(&r.stdout).unwrap(), v);
}

#[test]
fn validate_rejects_a_non_reversible_spec() {
    let dir = TempDir::new().unwrap();
    let rates = [("a", "b", 1.0), ("b", "a", 1.0), ("b", "c", 1.0), ("c", "b", 1.0), ("a", "c", 1.0), ("c", "a", 2.0)];
    let f = write_spec(dir.path(), "nr.json", &["a", "b", "c"], &rates);
    let r = mcurv(dir.path(), &["validate", &f, "--out", "d"]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains("NotReversible"), "{}", r.stdout);
    let d = read_json(&dir.path().join("d.json"));
    assert_valid("diagnostic.schema.json", &d);
    assert_eq!(d["kind"], "NotReversible");
}

#[test]
fn validate_rejects_a_disconnected_spec() {
    let dir = TempDir::new().unwrap();
    let f = write_spec(dir.path(), "dc.json", &["a", "b", "c"], &[("a", "b", 1.0), ("b", "a", 1.0)]);
    let r = mcurv(dir.path(), &["validate", &f]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains("NotIrreducible"), "{}", r.stdout);
    assert_valid("diagnostic.schema.json", &serde_json::from_str(&r.stdout).unwrap());
}

fn global_row(dir: &Path, prefix: &str) -> Value {
    let (header, rows) = read_csv(&dir.join(format!("{prefix}.csv")));
    assert_eq!(header, ["vertex", "kappa_be", "kappa_upsilon"]);
    for row in &rows {
        assert_valid("curvature_csv.schema.json", row);
    }
    let last = rows.last().unwrap().clone();
    assert_eq!(last["vertex"], "*");
    last
}

#[test]
fn curvature_of_the_cube_and_the_edge() {
    let dir = TempDir::new().unwrap();
    for (family, n, kappa) in [("hypercube", "3", 2.0), ("complete", "2", 2.0)] {
        let r = mcurv(dir.path(), &["curvature", "family", family, n, "--out", family]);
        assert_eq!(r.code, 0);
        assert_valid("curvature_report.schema.json", &read_json(&dir.path().join(format!("{family}.json"))));
        let g = global_row(dir.path(), family);
        assert!((cell(&g, "kappa_upsilon") - kappa).abs() < 1e-5, "{family}: {g}");
    }
}

#[test]
fn branched_tree_has_no_lower_bound() {
    let dir = TempDir::new().unwrap();
    assert_eq!(mcurv(dir.path(), &["family", "graph", "5", "0-1,1-2,2-3,1-4", "--out", "tree"]).code, 0);
    let r = mcurv(dir.path(), &["curvature", "tree.json", "--out", "c"]);
    assert_eq!(r.code, 0);
    let report = read_json(&dir.path().join("c.json"));
    assert_valid("curvature_report.schema.json", &report);
    let per_vertex = report["per_vertex"].as_array().unwrap();
    assert!(per_vertex.iter().any(|v| v["kappa_upsilon"] == "minus_infinity"));
    assert_eq!(report["global"]["kappa_upsilon"], "minus_infinity");
    assert_eq!(global_row(dir.path(), "c")["kappa_upsilon"], "minus_infinity");
}

#[test]
fn iteration_cap_reports_nonconvergence_but_still_writes() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["curvature", "family", "complete", "4", "--max-iter", "1", "--out", "c"]);
    assert_eq!(r.code, 3);
    let report = read_json(&dir.path().join("c.json"));
    assert_valid("curvature_report.schema.json", &report);
    assert_eq!(report["global"]["converged"], false);
    assert!(dir.path().join("c.csv").exists());
}

fn check_flow(dir: &Path, prefix: &str, power: bool) -> Vec<Value> {
    let summary = read_json(&dir.join(format!("{prefix}.json")));
    assert_valid("flow_summary.schema.json", &summary);
    let (header, rows) = read_csv(&dir.join(format!("{prefix}.csv")));
    let want: &[&str] = if power { &["t", "H", "I", "d2H", "Hp", "Ip"] } else { &["t", "H", "I", "d2H"] };
    assert_eq!(header, want);
    for row in &rows {
        assert_valid("flow_trace_csv.schema.json", row);
    }
    rows
}

#[test]
fn flow_on_the_cube_passes_every_check() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["flow", "family", "hypercube", "3", "--T", "3", "--out", "f", "--densities"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let rows = check_flow(dir.path(), "f", false);
    assert_eq!(cell(rows.last().unwrap(), "t"), 3.0);
    let s = read_json(&dir.path().join("f.json"));
    assert_eq!(s["all_pass"], true);
    assert_eq!(s["kappa_source"], "estimated");
    assert!((s["decay"]["kappa"].as_f64().unwrap() - 2.0).abs() < 1e-5);
    let dens = read_json(&dir.path().join("f.densities.json"));
    assert_valid("densities.schema.json", &dens);
    assert_eq!(dens.as_array().unwrap().len(), rows.len());
}

#[test]
fn power_exponent_adds_columns() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["flow", "family", "hypercube", "3", "--T", "3", "--p", "1.5", "--out", "f"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    check_flow(dir.path(), "f", true);
    let s = read_json(&dir.path().join("f.json"));
    assert_eq!(s["p_de_bruijn"]["within_bound"], true);
    assert_eq!(s["p_second_derivative"]["within_bound"], true);
}

#[test]
fn stationary_start_gives_a_flat_trace() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["flow", "family", "hypercube", "3", "--rho0", "stationary", "--out", "f"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    for row in check_flow(dir.path(), "f", false) {
        for k in ["H", "I", "d2H"] {
            assert_eq!(cell(&row, k), 0.0);
        }
    }
    assert_eq!(read_json(&dir.path().join("f.json"))["decay"]["trivial"], true);
}

#[test]
fn density_file_and_too_fast_decay_rate() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("rho.json"), "[1.6, 0.8, 0.8, 0.8]").unwrap();
    let r = mcurv(dir.path(), &["flow", "family", "hypercube", "2", "--rho0", "rho.json", "--kappa", "2", "--out", "ok"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let r = mcurv(dir.path(), &["flow", "family", "hypercube", "2", "--rho0", "rho.json", "--kappa", "3", "--out", "bad"]);
    assert_eq!(r.code, 4);
    let s = read_json(&dir.path().join("bad.json"));
    assert_eq!(s["decay"]["holds"], false);
    assert_eq!(s["all_pass"], false);
}

#[test]
fn inequality_commands() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["mlsi", "family", "hypercube", "2", "--out", "m"]);
    assert_eq!(r.code, 0);
    let m = read_json(&dir.path().join("m.json"));
    assert_valid("inequality.schema.json", &m);
    assert_eq!(m["alpha_source"], "estimated");
    assert_eq!(mcurv(dir.path(), &["mlsi", "family", "hypercube", "2", "--kappa", "2.2"]).code, 4);
    let r = mcurv(dir.path(), &["beckner", "family", "complete", "2", "--p", "1.5", "--kappa", "1.75", "--out", "b"]);
    assert_eq!(r.code, 0);
    assert_valid("inequality.schema.json", &read_json(&dir.path().join("b.json")));
    assert_eq!(mcurv(dir.path(), &["beckner", "family", "complete", "2", "--p", "1.5", "--kappa", "10"]).code, 4);
}

#[test]
fn tensor_of_two_complete_graphs() {
    let dir = TempDir::new().unwrap();
    let r = mcurv(dir.path(), &["tensor", "family", "complete", "2", "--with", "family complete 3", "--out", "t"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let t = read_json(&dir.path().join("t.json"));
    assert_valid("tensor_report.schema.json", &t);
    assert_eq!(t["report"]["vertices"].as_array().unwrap().len(), 6);
    assert_eq!(t["report"]["kappa"], t["kappa_1"]);
    let r = mcurv(dir.path(), &["tensor", "family", "complete", "2", "--with", "family complete 2", "--kappa", "2.5"]);
    assert_eq!(r.code, 4);
    assert!(r.stdout.contains("PrerequisiteFailed"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let runs = [
        vec!["curvature", "family", "hypercube", "3", "--seed", "7"],
        vec!["flow", "family", "poisson", "1", "10", "--seed", "7", "--T", "2", "--p", "1.5"],
        vec!["tensor", "family", "complete", "2", "--with", "family cycle 5", "--seed", "7"],
    ];
    for args in runs {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let prefix = format!("run{k}");
            let mut a = args.clone();
            a.extend(["--out", &prefix]);
            let r = mcurv(dir.path(), &a);
            let mut files = vec![r.stdout];
            for ext in ["json", "csv"] {
                files.push(fs::read_to_string(dir.path().join(format!("{prefix}.{ext}"))).unwrap_or_default());
            }
            outputs.push(files);
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(mcurv(dir.path(), &[]).code, 1);
    assert_eq!(mcurv(dir.path(), &["curvature"]).code, 1);
    assert_eq!(mcurv(dir.path(), &["flow", "family", "complete", "3", "--T", "abc"]).code, 1);
    let r = mcurv(dir.path(), &["family", "nope", "3"]);
    assert_eq!(r.code, 1);
    assert_valid("diagnostic.schema.json", &serde_json::from_str(&r.stdout).unwrap());
    assert_eq!(mcurv(dir.path(), &["validate", "missing.json"]).code, 1);
    assert_eq!(mcurv(dir.path(), &["curvature", "family", "hypercube", "x"]).code, 1);
    assert_eq!(mcurv(dir.path(), &["beckner", "family", "complete", "2", "--p", "3", "--kappa", "1"]).code, 1);
    assert_eq!(mcurv(dir.path(), &["--help"]).code, 0);
}
