#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn edsh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edsh"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("failed to spawn edsh")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = edsh(args);
    assert!(
        out.status.success(),
        "edsh {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Files written by one synth → split → train → encode → retrieve → eval run.
pub struct Pipeline {
    pub root: PathBuf,
    pub map_img_to_txt: f64,
    pub map_txt_to_img: f64,
}

pub struct PipelineSpec {
    pub n: usize,
    pub classes: usize,
    pub d1: usize,
    pub d2: usize,
    pub noise: f64,
    pub query_fraction: f64,
    pub bits: usize,
    pub seed: u64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            n: 2200,
            classes: 10,
            d1: 64,
            d2: 32,
            noise: 0.15,
            query_fraction: 200.0 / 2200.0,
            bits: 16,
            seed: 7,
        }
    }
}

fn read_map(path: &Path) -> f64 {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["map_at_m"].as_f64().unwrap()
}

pub fn pipeline(root: &Path, spec: &PipelineSpec) -> Pipeline {
    let p = |name: &str| root.join(name);
    let seed = spec.seed.to_string();
    run_ok(&[
        "synth",
        "--n",
        &spec.n.to_string(),
        "--classes",
        &spec.classes.to_string(),
        "--d1",
        &spec.d1.to_string(),
        "--d2",
        &spec.d2.to_string(),
        "--noise",
        &spec.noise.to_string(),
        "--seed",
        &seed,
        "--out",
        s(&p("all")),
    ]);
    run_ok(&[
        "split",
        "--data",
        s(&p("all")),
        "--query-fraction",
        &spec.query_fraction.to_string(),
        "--seed",
        &seed,
        "--train-out",
        s(&p("train")),
        "--query-out",
        s(&p("query")),
    ]);
    run_ok(&[
        "train",
        "--data",
        s(&p("train")),
        "--out",
        s(&p("model")),
        "--bits",
        &spec.bits.to_string(),
        "--seed",
        &seed,
    ]);
    for (set, m) in [
        ("train", "1"),
        ("train", "2"),
        ("query", "1"),
        ("query", "2"),
    ] {
        run_ok(&[
            "encode",
            "--model",
            s(&p("model")),
            "--input",
            s(&p(set).join(format!("x{m}.edshmat"))),
            "--modality",
            m,
            "--out",
            s(&p(&format!("{set}{m}.edshbin"))),
        ]);
    }
    for (q, db, name) in [("query1", "train2", "i2t"), ("query2", "train1", "t2i")] {
        run_ok(&[
            "retrieve",
            "--query",
            s(&p(&format!("{q}.edshbin"))),
            "--db",
            s(&p(&format!("{db}.edshbin"))),
            "--out",
            s(&p(&format!("{name}.json"))),
        ]);
        run_ok(&[
            "eval",
            "--rankings",
            s(&p(&format!("{name}.json"))),
            "--query-labels",
            s(&p("query").join("labels.edshmat")),
            "--db-labels",
            s(&p("train").join("labels.edshmat")),
            "--out",
            s(&p(&format!("eval_{name}"))),
        ]);
    }
    Pipeline {
        root: root.to_path_buf(),
        map_img_to_txt: read_map(&p("eval_i2t").join("metrics.json")),
        map_txt_to_img: read_map(&p("eval_t2i").join("metrics.json")),
    }
}

/// Every artifact of a pipeline run with timing fields removed from the
/// training report, keyed by path relative to the run root.
pub fn numeric_artifacts(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if path.file_name().unwrap() == "train_report.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let obj = v.as_object_mut().unwrap();
                for key in ["wall_seconds", "loop_seconds", "seconds_per_iteration"] {
                    obj.remove(key);
                }
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}
