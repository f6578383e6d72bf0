#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

pub struct Fixture {
    pub root: PathBuf,
    pub group: PathBuf,
    pub sample: PathBuf,
    pub model: PathBuf,
}

/// A small synthetic group and a model fitted to it, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let syn = root.join("syn");
        assert_eq!(run(&["synth", "--bins", "60", "--groups", "1", "--samples", "2", "--seed", "4", "--out", s(&syn)]), 0);
        let group = syn.join("group00");
        let fit = root.join("fit");
        assert_eq!(run(&["fit", "--data", s(&group), "--restarts", "1", "--out", s(&fit)]), 0);
        Fixture {
            sample: group.join("sample00"),
            group,
            model: fit.join("model.json"),
            root,
        }
    })
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn run(args: &[&str]) -> i32 {
    let mut full = vec!["omm"];
    full.extend(args);
    omm::main_with_args(full)
}

pub fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}
