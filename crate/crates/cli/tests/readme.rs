//! Runs the shell examples in the top-level README.
//!
//! `console` blocks hold `$ command` lines followed by the exact expected
//! standard output. `sh` blocks must exit successfully. `bash` blocks are
//! long-running and skipped. All blocks share one scratch directory, in
//! order, so later examples can use files made by earlier ones.

use std::path::{Path, PathBuf};
use std::process::Command;

struct Example {
    command: String,
    expected: Option<String>,
}

fn examples(readme: &str) -> Vec<Example> {
    let mut out = Vec::new();
    let mut lines = readme.lines();
    while let Some(line) = lines.next() {
        let Some(lang) = line.strip_prefix("```") else { continue };
        let body: Vec<&str> = lines.by_ref().take_while(|l| !l.starts_with("```")).collect();
        match lang.trim() {
            "console" => {
                for line in &body {
                    if let Some(cmd) = line.strip_prefix("$ ") {
                        out.push(Example {
                            command: cmd.to_owned(),
                            expected: Some(String::new()),
                        });
                    } else if let Some(Example { expected: Some(e), .. }) = out.last_mut() {
                        e.push_str(line);
                        e.push('\n');
                    }
                }
            }
            "sh" => out.push(Example {
                command: body.join("\n"),
                expected: None,
            }),
            _ => {}
        }
    }
    out
}

fn bin_dir() -> PathBuf {
    Path::new(env!("CARGO_BIN_EXE_caplab")).parent().unwrap().to_owned()
}

#[test]
fn readme_examples_run() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let all = examples(&readme);
    assert!(all.len() >= 10, "found only {} examples", all.len());

    let dir = tempfile::tempdir().unwrap();
    let path = format!("{}:{}", bin_dir().display(), std::env::var("PATH").unwrap_or_default());
    for ex in all {
        // `cargo ...` lines describe the workspace itself.
        if ex.command.starts_with("cargo ") {
            continue;
        }
        let out = Command::new("sh")
            .arg("-c")
            .arg(&ex.command)
            .current_dir(dir.path())
            .env("PATH", &path)
            .env_remove("CAPLAB_SEED")
            .output()
            .unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(out.status.success(), "`{}` failed: {stderr}", ex.command);
        if let Some(expected) = ex.expected {
            assert_eq!(String::from_utf8_lossy(&out.stdout), expected, "output of `{}`", ex.command);
        }
    }
}
