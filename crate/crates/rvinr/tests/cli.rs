use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvinr::io::{read_image, read_stack};
use rvinr::manifest::Manifest;
use rvinr::pipeline::{stage_phantom, RunDir, SR_DWIS, TIMING};

const SMALL: [&str; 8] = ["--size", "32", "--dirs", "10", "--train-dirs", "8", "--iters", "12"];

fn rvinr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvinr")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    rvinr(args).status.code().expect("exit code")
}

fn with_out<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out];
    v.extend_from_slice(extra);
    v
}

/// Relative path -> contents for every file below `root`, minus wall-clock data.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                if rel != Path::new(TIMING) {
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["reproduce", "--out", "/nonexistent", "--iters", "many"]), 1);
    assert_eq!(code(&["phantom", "--out", "/nonexistent", "--size", "32", "--ts", "3"]), 1);
    assert_eq!(code(&["phantom", "--out", "/nonexistent", "--train-dirs", "5"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn missing_inputs_exit_with_two_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for stage in ["acquire", "train", "infer", "dti", "evaluate"] {
        let o = rvinr(&[stage, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{stage}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.toml"), "{stage}");
    }
}

#[test]
fn stage_chain_equals_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    let again = dir.path().join("again");
    let s = staged.to_str().unwrap();

    assert_eq!(code(&with_out("phantom", s, &SMALL)), 0);
    for stage in ["acquire", "train", "infer", "dti", "evaluate"] {
        assert_eq!(code(&[stage, "--out", s]), 0, "{stage}");
    }
    assert_eq!(code(&with_out("reproduce", whole.to_str().unwrap(), &SMALL)), 0);
    assert_eq!(code(&with_out("reproduce", again.to_str().unwrap(), &SMALL)), 0);

    let a = tree(&staged);
    assert!(a.len() > 60, "{} files", a.len());
    assert_eq!(a, tree(&whole));
    assert_eq!(a, tree(&again));
    assert!(staged.join(TIMING).exists());

    // querying one trained direction reproduces its slice of the full render
    assert_eq!(code(&["infer", "--out", s, "--direction", "3"]), 0);
    let run = RunDir::new(&staged);
    let one = read_image(&run.sr_direction(3)).unwrap();
    assert_eq!(one, read_stack(&run.path(SR_DWIS)).unwrap()[3]);
    assert_eq!(code(&["infer", "--out", s, "--direction", "10"]), 2);

    let summary = fs::read_to_string(staged.join("summary.txt")).unwrap();
    assert!(summary.contains("trained") && summary.contains("unseen"));
    let table = fs::read_to_string(staged.join("tables/table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(2).unwrap().starts_with("trained,SR,"));
}

#[test]
fn ablation_row_is_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = SMALL.to_vec();
    args.push("--use-prior=false");
    assert_eq!(code(&with_out("reproduce", out, &args)), 0);
    let table = fs::read_to_string(dir.path().join("tables/table1.csv")).unwrap();
    assert!(table.contains("trained,SR w/o b=0,"));
    assert!(table.contains("unseen,SR w/o b=0,"));
    assert!(fs::read_to_string(dir.path().join("manifest.toml")).unwrap().contains("use_prior = false"));
}

#[test]
fn dti_with_too_few_directions_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let manifest = Manifest {
        size: 32,
        directions: 8,
        train_directions: 5,
        directions_per_step: 4,
        iterations: 2,
        ..Manifest::default()
    };
    stage_phantom(&RunDir::new(dir.path()), &manifest).unwrap();
    for stage in ["acquire", "train", "infer"] {
        assert_eq!(code(&[stage, "--out", out]), 0);
    }
    let o = rvinr(&["dti", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fewer than 6"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["--size", "32", "--dirs", "10", "--train-dirs", "8", "--iters", "20", "--lr", "1e200"];
    assert_eq!(code(&with_out("reproduce", out, &args)), 3);
}
