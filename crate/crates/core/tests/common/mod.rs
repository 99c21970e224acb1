use std::fs;
use std::path::Path;
use std::process::Command;

pub const SCENE_JSON: &str =
    r#"{"height":32,"width":32,"bands":8,"generator":"blobs","seed":11,"blobs":4}"#;

pub fn cid(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cid")
}

pub fn cid_ok(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = cid(dir, args);
    assert!(
        out.status.success(),
        "cid {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// mask -> simulate -> reconstruct -> evaluate in `dir`.
pub fn run_pipeline(dir: &Path) {
    fs::write(dir.join("spec.json"), SCENE_JSON).unwrap();
    cid_ok(
        dir,
        &[
            "mask", "--height", "32", "--width", "32", "--seed", "3", "--out", "mask.pgm",
        ],
    );
    cid_ok(
        dir,
        &[
            "simulate",
            "--scene",
            "spec.json",
            "--mask",
            "mask.pgm",
            "--d",
            "2",
            "--axis",
            "h",
            "--sigma",
            "0.01",
            "--seed",
            "7",
            "--out-meas",
            "m.cidc",
            "--out-pan",
            "pan.cidc",
            "--out-truth",
            "x.cidc",
        ],
    );
    cid_ok(
        dir,
        &[
            "reconstruct",
            "--meas",
            "m.cidc",
            "--pan",
            "pan.cidc",
            "--mask",
            "mask.pgm",
            "--d",
            "2",
            "--axis",
            "h",
            "--solver",
            "cid-tv",
            "--stages",
            "10",
            "--tau",
            "0.05",
            "--sigma",
            "0.01",
            "--out",
            "rec.cidc",
            "--trace",
            "trace.csv",
        ],
    );
    cid_ok(
        dir,
        &[
            "evaluate",
            "--ref",
            "x.cidc",
            "--rec",
            "rec.cidc",
            "--out",
            "report.csv",
        ],
    );
}
