use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use markov_curv::curvature::{CurvatureReport, KappaValue};

use crate::commands::Failure;

/// Pretty JSON with a trailing newline. Struct fields keep their declaration order.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// `<prefix>.<ext>`; the extension is appended, not substituted.
pub fn with_ext(prefix: &str, ext: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.{ext}"))
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// Prints the JSON document and, with a prefix, also stores it as `<prefix>.json`.
pub fn emit_json<T: Serialize>(value: &T, prefix: Option<&str>) -> Result<(), Failure> {
    let text = to_json(value);
    if let Some(p) = prefix {
        write_atomic(&with_ext(p, "json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Row label of the global minimum in the curvature CSV.
pub const GLOBAL_ROW: &str = "*";

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_kappa(k: KappaValue) -> String {
    match k {
        KappaValue::Finite(v) => fmt_num(v),
        KappaValue::MinusInfinity => "minus_infinity".into(),
    }
}

/// `vertex,kappa_be,kappa_upsilon`, one row per vertex and a final `*` row with the minima.
pub fn curvature_csv(report: &CurvatureReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["vertex", "kappa_be", "kappa_upsilon"]).expect("in-memory write");
    for v in &report.per_vertex {
        w.write_record([v.vertex.clone(), fmt_num(v.kappa_be), fmt_kappa(v.kappa_upsilon)]).expect("in-memory write");
    }
    let g = &report.global;
    w.write_record([GLOBAL_ROW.to_string(), fmt_num(g.kappa_be), fmt_kappa(g.kappa_upsilon)]).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 labels")
}
