//! Shared helpers for the end-to-end tests: running the binary on the bundled
//! configurations and comparing outputs with the stored golden files.
//!
//! Every case runs twice; the two output directories must agree byte for byte
//! outside `#` comment lines. Text outputs are also compared with the files
//! under `tests/golden/`, token by token with a relative tolerance on numbers.
//! Set `HALFCELL_BLESS=1` to rewrite the stored files.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> PathBuf {
    root().join("configs").join(format!("{name}.cfg"))
}

pub fn run(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_halfcell"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HALFCELL_THREADS", "1")
        .output()
        .expect("binary runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into_owned())
}

pub fn strip_comments(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        if !line.starts_with(b"#") {
            out.extend_from_slice(line);
        }
    }
    out
}

pub fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn is_text(name: &str) -> bool {
    [".json", ".csv", ".dat"].iter().any(|s| name.ends_with(s))
}

pub fn tokens(s: &str) -> Vec<&str> {
    s.split(|c: char| c.is_whitespace() || ",:[]{}\"".contains(c)).filter(|t| !t.is_empty()).collect()
}

pub fn close(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-300) || (x - y).abs() < 1e-14,
        _ => a == b,
    }
}

pub type Files = BTreeMap<String, Vec<u8>>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs a case twice, checks reproducibility and the stored outputs; returns stdout and the files.
pub fn try_case(name: &str, args: &[&str], expected_code: i32) -> Result<(String, Files), String> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code, stdout) = run(args, a.path());
    ensure(code == expected_code, || format!("{name}: exit code {code}, expected {expected_code}; stdout {stdout}"))?;
    let (code_b, _) = run(args, b.path());
    ensure(code_b == code, || format!("{name}: second run exited with {code_b}"))?;
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    ensure(fa.keys().eq(fb.keys()), || format!("{name}: file sets differ between runs"))?;
    for (file, bytes) in &fa {
        ensure(strip_comments(bytes) == strip_comments(&fb[file]), || format!("{name}/{file} is not reproducible"))?;
    }

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("HALFCELL_BLESS").is_some() {
        let _ = fs::remove_dir_all(&golden);
        fs::create_dir_all(&golden).unwrap();
        for (file, bytes) in fa.iter().filter(|(f, _)| is_text(f)) {
            fs::write(golden.join(file), strip_comments(bytes)).unwrap();
        }
        return Ok((stdout, fa));
    }
    ensure(golden.is_dir(), || format!("{name}: no golden files"))?;
    let stored = read_dir(&golden);
    ensure(stored.keys().eq(fa.keys().filter(|f| is_text(f))), || format!("{name}: golden file set differs"))?;
    for (file, want) in &stored {
        let got = String::from_utf8(strip_comments(&fa[file])).unwrap();
        let want = String::from_utf8(want.clone()).unwrap();
        let (tg, tw) = (tokens(&got), tokens(&want));
        ensure(tg.len() == tw.len(), || format!("{name}/{file}: {} tokens, golden has {}", tg.len(), tw.len()))?;
        for (x, y) in tg.iter().zip(&tw) {
            ensure(close(x, y), || format!("{name}/{file}: {x} vs golden {y}"))?;
        }
    }
    Ok((stdout, fa))
}

pub fn case(name: &str, args: &[&str], expected_code: i32) -> (String, Files) {
    try_case(name, args, expected_code).unwrap_or_else(|e| panic!("{e}"))
}

pub fn json(files: &Files, name: &str) -> serde_json::Value {
    serde_json::from_slice(&files[name]).unwrap()
}

