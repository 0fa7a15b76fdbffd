//! Runs `verify-all --seed 7` twice and prints one line per acceptance
//! criterion. Criteria 1 to 10 come from the first run's report; criterion 11
//! compares every CSV the two runs wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use serde_json::Value;

fn run_verify(dir: &Path) -> (i32, f64) {
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_prefgap"))
        .args(["verify-all", "--seed", "7", "--out"])
        .arg(dir)
        .status()
        .expect("spawn prefgap");
    (status.code().unwrap_or(-1), t.elapsed().as_secs_f64())
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read output dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).expect("inside root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("read csv"));
            }
        }
    }
    out
}

fn main() -> ExitCode {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let (code_a, secs_a) = run_verify(a.path());
    let (code_b, secs_b) = run_verify(b.path());
    println!("verify-all exit codes {code_a} and {code_b}; {secs_a:.1}s and {secs_b:.1}s");

    let mut lines = Vec::new();
    let report: Value = std::fs::read_to_string(a.path().join("report.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    let criteria = report["criteria"].as_array().cloned().unwrap_or_default();
    for id in 1..=10u64 {
        let line = match criteria.iter().find(|c| c["id"].as_u64() == Some(id)) {
            Some(c) => {
                let ok = c["passed"].as_bool() == Some(true)
                    && c["seconds"].as_f64().zip(c["budget_seconds"].as_f64()).is_some_and(|(s, b)| s < b);
                let detail = format!(
                    "{} [{:.2}s / {}s] {}",
                    c["name"].as_str().unwrap_or(""),
                    c["seconds"].as_f64().unwrap_or(f64::NAN),
                    c["budget_seconds"],
                    c["detail"].as_str().unwrap_or("")
                );
                (ok, detail)
            }
            None => (false, "missing from report.json".to_string()),
        };
        lines.push((id, line));
    }

    let fa = csv_files(a.path());
    let fb = csv_files(b.path());
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let same = !fa.is_empty() && differing.is_empty();
    let detail = if same {
        format!("determinism: {} CSV files byte-identical across two runs", fa.len())
    } else {
        format!("determinism: differing files {differing:?}")
    };
    lines.push((11, (same, detail)));

    let mut all = true;
    for (id, (ok, detail)) in &lines {
        all &= ok;
        println!("criterion {id:>2} {}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    if all {
        println!("acceptance: all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
