use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nwsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nwsr"))
        .args(args)
        .output()
        .expect("spawn nwsr")
}

fn ok(args: &[&str]) -> String {
    let out = nwsr(args);
    assert!(
        out.status.success(),
        "nwsr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One synthetic source plus a small simulated sequence.
fn simulated(dir: &Path, seed: &str) -> PathBuf {
    let src = dir.join("src");
    ok(&["synth", "--count", "1", "--size", "64", "--seed", "4", "--out-dir", s(&src)]);
    let sim = dir.join(format!("sim_{seed}"));
    ok(&[
        "simulate",
        "--input",
        s(&src.join("source_0000.png")),
        "--layout",
        "gen:20,2.5",
        "--seed",
        seed,
        "--out-dir",
        s(&sim),
    ]);
    sim
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["frobnicate"][..], &["simulate"], &["train", "--mode", "cart"], &["reconstruct", "--method", "cubic"]] {
        let out = nwsr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error: kind=usage msg="), "{err}");
    }
}

#[test]
fn data_errors_exit_1_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = nwsr(&["eval", "--sr-dir", s(&dir.path().join("none")), "--hr-dir", s(dir.path()), "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: kind=io msg="));

    let src = dir.path().join("src");
    ok(&["synth", "--count", "1", "--size", "32", "--out-dir", s(&src)]);
    let out = nwsr(&[
        "simulate",
        "--input",
        s(&src.join("source_0000.png")),
        "--layout",
        "gen:40,2.5",
        "--out-dir",
        s(&dir.path().join("sim")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: kind=size"));
}

#[test]
fn version_flag() {
    let v = ok(&["--version"]);
    assert!(v.starts_with("nwsr "), "{v}");
}

#[test]
fn simulate_is_byte_identical_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "3");
    let b = dir.path().join("again");
    std::fs::rename(&a, &b).unwrap();
    let a = simulated(dir.path(), "3");
    let names: Vec<_> = files(&a).iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    assert!(names.iter().any(|n| n == "layout.csv"));
    assert!(names.iter().any(|n| n == "signals_0003.csv"));
    for p in files(&a) {
        if p.file_name().unwrap() == "manifest.json" {
            continue;
        }
        let q = b.join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{}", p.display());
    }
    let c = simulated(dir.path(), "4");
    assert_ne!(
        std::fs::read(a.join("signals_0000.csv")).unwrap(),
        std::fs::read(c.join("signals_0000.csv")).unwrap()
    );
}

#[test]
fn reconstruct_eval_compare() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "1");
    let inter = dir.path().join("inter");
    let gauss = dir.path().join("gauss");
    ok(&["reconstruct", "--method", "delaunay", "--sim-dir", s(&sim), "--out-dir", s(&inter)]);
    ok(&["reconstruct", "--method", "nwgauss", "--sim-dir", s(&sim), "--out-dir", s(&gauss)]);
    let frames = files(&inter).iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(frames, 4);

    let single = dir.path().join("one.png");
    ok(&[
        "reconstruct",
        "--method",
        "delaunay",
        "--signals",
        s(&sim.join("signals_0000.csv")),
        "--layout",
        s(&sim.join("layout.csv")),
        "--out",
        s(&single),
    ]);
    assert_eq!(std::fs::read(&single).unwrap(), std::fs::read(inter.join("frame_0000.png")).unwrap());

    let hr = dir.path().join("hr");
    std::fs::create_dir_all(&hr).unwrap();
    for p in files(&sim) {
        let name = p.file_name().unwrap().to_str().unwrap();
        if let Some(rest) = name.strip_prefix("hr_") {
            std::fs::copy(&p, hr.join(format!("frame_{rest}"))).unwrap();
        }
    }
    let r1 = dir.path().join("inter.csv");
    let r2 = dir.path().join("gauss.csv");
    ok(&["eval", "--sr-dir", s(&inter), "--hr-dir", s(&hr), "--out", s(&r1)]);
    ok(&["eval", "--sr-dir", s(&gauss), "--hr-dir", s(&hr), "--out", s(&r2)]);
    let text = std::fs::read_to_string(&r1).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "frame,psnr_db,ssim");
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[5].starts_with("mean,") && lines[6].starts_with("std,"));

    let table = dir.path().join("table.csv");
    let shown = ok(&[
        "compare",
        "--report",
        &format!("INTER={}", s(&r1)),
        "--report",
        &format!("NWGAUSS={}", s(&r2)),
        "--report",
        &format!("AGAIN={}", s(&r1)),
        "--out",
        s(&table),
    ]);
    assert!(shown.contains("INTER") && shown.contains("NWGAUSS"));
    let rows: Vec<String> = std::fs::read_to_string(&table).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 4);
    let strip = |r: &str| r.split_once(',').unwrap().1.to_string();
    assert_eq!(strip(&rows[1]), strip(&rows[3]));
    // row values equal the summaries of the source CSV
    let mean: Vec<&str> = lines[5].split(',').collect();
    let row: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), mean[2].parse::<f64>().unwrap());
    assert_eq!(row[3].parse::<f64>().unwrap(), mean[1].parse::<f64>().unwrap());

    let out = nwsr(&["compare", "--report", &format!("ONLY={}", s(&r1))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_small_error() {
    for layer in ["nw", "conv", "loss"] {
        let out = ok(&["gradcheck", "--layer", layer, "--samples", "40"]);
        let err: f64 = out.trim().rsplit('=').next().unwrap().parse().unwrap();
        assert!(err < 1e-4, "{layer}: {out}");
    }
}

#[test]
fn manifest_records_seeds_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "8");
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seeds"]["seed"], 8);
    assert!(m["artifacts"].as_array().unwrap().len() > 4);

    let again = dir.path().join("replayed");
    ok(&["replay", "--manifest", s(&sim.join("manifest.json")), "--out-dir", s(&again)]);
    for p in files(&sim) {
        if p.file_name().unwrap() != "manifest.json" {
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(again.join(p.file_name().unwrap())).unwrap());
        }
    }
}
