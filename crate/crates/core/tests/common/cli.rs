//! Running the `lrlm` command surface in-process.

use std::fs;
use std::path::{Path, PathBuf};

use lowres_landmarks::cli::run_code;

/// Exit code of `lrlm <args>`.
pub fn lrlm(args: &[&str]) -> u8 {
    run_code(std::iter::once("lrlm").chain(args.iter().copied()))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Every file under `dir` with one of `extensions`, relative to `dir`, sorted.
pub fn files_with(dir: &Path, extensions: &[&str]) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, ext: &[&str], out: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, ext, out);
            } else if path.extension().and_then(|e| e.to_str()).is_some_and(|e| ext.contains(&e)) {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, extensions, &mut out);
    out.sort();
    out
}

/// Names of files with those extensions whose bytes differ between the two trees
/// (a file present in only one tree counts as differing).
pub fn differing(a: &Path, b: &Path, extensions: &[&str]) -> Vec<PathBuf> {
    let (fa, fb) = (files_with(a, extensions), files_with(b, extensions));
    let mut diff: Vec<PathBuf> = fa.iter().filter(|f| !fb.contains(f)).cloned().collect();
    diff.extend(fb.iter().filter(|f| !fa.contains(f)).cloned());
    for f in fa.iter().filter(|f| fb.contains(f)) {
        if fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() {
            diff.push(f.clone());
        }
    }
    diff
}

/// Small synth → train → eval chain under `root/<tag>`, each later run fed from
/// the first run's manifest when `from` is given.
pub fn pipeline(root: &Path, tag: &str, from: Option<&str>) -> Vec<PathBuf> {
    let dir = root.join(tag);
    let (data, train, eval) = (dir.join("data"), dir.join("train"), dir.join("eval"));
    let manifest = |step: &str| from.map(|f| root.join(f).join(step).join("manifest.json"));
    let with = |mut args: Vec<String>, step: &str| -> Vec<String> {
        if let Some(m) = manifest(step) {
            args.extend(["--config".to_string(), m.to_str().expect("utf-8").to_string()]);
        }
        args
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(lrlm(&refs), 0, "lrlm {refs:?} failed");
    };
    if from.is_some() {
        run(with(s(&["synth", "--out", p(&data)]), "data"));
        run(with(s(&["train", "lm", "--out", p(&train), "--data", p(&data)]), "train"));
        run(with(
            s(&["eval", "--out", p(&eval), "--checkpoint", p(&train.join("s1.ckpt")), "--data", p(&data.join("test_real_lr"))]),
            "eval",
        ));
    } else {
        run(s(&["synth", "--out", p(&data), "--seed", "3", "--train", "16", "--val", "8", "--test", "8", "--real-lr", "8"]));
        run(s(&[
            "train", "lm", "--setting", "s1", "--out", p(&train), "--data", p(&data), "--epochs", "2", "--seed", "5",
        ]));
        run(s(&[
            "eval", "--out", p(&eval), "--checkpoint", p(&train.join("s1.ckpt")), "--data", p(&data.join("test_real_lr")),
            "--setting", "S1",
        ]));
    }
    vec![data, train, eval]
}
