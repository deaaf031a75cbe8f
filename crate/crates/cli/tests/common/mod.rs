#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn hob(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hob"))
        .args(args)
        .current_dir(dir)
        .env_remove("HOB_THREADS")
        .output()
        .expect("hob runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hob(dir, args);
    assert!(
        out.status.success(),
        "hob {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn schema_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/report.schema.json")
}

/// Validates a JSON file against the shipped report schema.
pub fn check_schema(path: &Path) {
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path()).unwrap()).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut schemas = boon::Schemas::new();
    let mut compiler = boon::Compiler::new();
    compiler.add_resource("report.schema.json", schema).unwrap();
    let idx = compiler.compile("report.schema.json", &mut schemas).unwrap();
    if let Err(e) = schemas.validate(&instance, idx) {
        panic!("{} does not match the report schema: {e:#}", path.display());
    }
}

/// A minimal run config in `dir` against `dataset`, with `extra` appended.
pub fn write_config(dir: &Path, dataset: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "[paths]\ndataset = \"{dataset}\"\noutput_dir = \"out\"\nmodels = {{ zie = \"fit/model-zie.txt\" }}\n\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}
