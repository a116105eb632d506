#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};

use clap::Parser;
use hypertype_cli::{run, Cli};

pub fn worked_example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/worked_example")
}

pub fn example_file(name: &str) -> String {
    worked_example().join(name).display().to_string()
}

/// Ontology, verbalizer, patterns and fixture store of the worked example.
pub fn config_args() -> Vec<String> {
    vec![
        "--ontology".into(),
        example_file("ontology.txt"),
        "--verbalizer".into(),
        example_file("verbalizer.json"),
        "--patterns".into(),
        example_file("patterns.txt"),
        "--fixtures-dir".into(),
        example_file("store"),
    ]
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process with the given arguments and standard input.
pub fn cli_with_stdin<S: AsRef<str>>(args: &[S], stdin: &str) -> Outcome {
    let argv = std::iter::once("hypertype").chain(args.iter().map(AsRef::as_ref));
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return Outcome {
                code: 1,
                stdout: String::new(),
                stderr: e.to_string(),
            }
        }
    };
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = match run(cli, &mut Cursor::new(stdin.as_bytes()), &mut out, &mut err) {
        Ok(()) => 0,
        Err(e) => {
            err.extend_from_slice(format!("error: {e}\n").as_bytes());
            e.exit_code()
        }
    };
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn cli<S: AsRef<str>>(args: &[S]) -> Outcome {
    cli_with_stdin(args, "")
}

/// `type` over the worked-example dataset with extra flags.
pub fn type_example(extra: &[&str]) -> Outcome {
    let mut args = vec!["type".to_string()];
    args.extend(config_args());
    args.extend(extra.iter().map(|s| s.to_string()));
    args.push(example_file("dataset.jsonl"));
    cli(&args)
}

pub fn decision_paths(stdout: &str) -> Vec<String> {
    stdout
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["path"].as_str().unwrap().to_string()
        })
        .collect()
}
