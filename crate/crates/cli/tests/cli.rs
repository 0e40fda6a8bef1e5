use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn saliex(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saliex"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SALIEX_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn toyset(dir: &Path, subjects: &str, per: &str) -> PathBuf {
    let out = saliex(
        &[
            "make-toyset",
            "--out-dir",
            "toy",
            "--subjects",
            subjects,
            "--images-per-subject",
            per,
            "--seed",
            "3",
        ],
        dir,
    );
    ok(&out);
    dir.join("toy")
}

fn explain_args<'a>(out_dir: &'a str, masks: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "explain",
        "--image-a",
        "toy/images/s000_v00.png",
        "--image-b",
        "toy/planted/s000_p.png",
        "--masks",
        masks,
        "--out-dir",
        out_dir,
    ];
    v.extend_from_slice(extra);
    v
}

fn pfm_values(path: &Path) -> Vec<f32> {
    let bytes = fs::read(path).unwrap();
    let start = bytes.windows(5).position(|w| w == b"-1.0\n").unwrap() + 5;
    bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

#[test]
fn make_toyset_counts_and_records_patches() {
    let dir = tempfile::tempdir().unwrap();
    let toy = toyset(dir.path(), "10", "4");
    assert_eq!(fs::read_dir(toy.join("images")).unwrap().count(), 40);
    let pairs = fs::read_to_string(toy.join("pairs.txt")).unwrap();
    assert_eq!(pairs.lines().filter(|l| l.ends_with("\t1")).count(), 10 * 6);
    assert_eq!(pairs.lines().filter(|l| l.ends_with("\t0")).count(), 10);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(toy.join("toyset.json")).unwrap()).unwrap();
    assert_eq!(meta["planted"].as_array().unwrap().len(), 10);
    assert_eq!(meta["planted"][0]["size"], 24);

    let again = tempfile::tempdir().unwrap();
    let toy2 = toyset(again.path(), "10", "4");
    for name in [
        "pairs.txt",
        "toyset.json",
        "images/s004_v02.png",
        "planted/s007_p.png",
    ] {
        assert_eq!(
            fs::read(toy.join(name)).unwrap(),
            fs::read(toy2.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn explain_writes_maps_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "2", "2");
    ok(&saliex(&explain_args("one", "60", &[]), dir.path()));
    ok(&saliex(
        &explain_args("two", "60", &["--workers", "3"]),
        dir.path(),
    ));
    let names = [
        "s000_v00_sim.pfm",
        "s000_v00_dissim.pfm",
        "s000_p_sim.pfm",
        "s000_p_dissim.pfm",
        "s000_v00_sim.png",
        "s000_v00_dissim.png",
        "s000_p_sim.png",
        "s000_p_dissim.png",
        "scores.csv",
    ];
    for name in names {
        let a = fs::read(dir.path().join("one").join(name)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.path().join("two").join(name)).unwrap(),
            "{name}"
        );
    }
    let scores = fs::read_to_string(dir.path().join("one/scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("mask_index,sc_a,sc_b"));
    assert_eq!(scores.lines().count(), 61);
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("one/run-manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["job"]["command"], "explain");
    assert_eq!(manifest["job"]["maps"]["masks"], 60);
    assert_eq!(manifest["job"]["maps"]["patches"], 10);
    assert_eq!(manifest["job"]["maps"]["patch_size"], 30);
    assert_eq!(manifest["job"]["maps"]["mask_type"], "binary");
}

#[test]
fn explain_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "2", "2");
    let one_mask = saliex(&explain_args("x", "1", &[]), dir.path());
    assert_eq!(one_mask.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&one_mask.stderr).contains("insufficient samples"));
    let bad_flag = saliex(
        &explain_args("x", "60", &["--mask-type", "striped"]),
        dir.path(),
    );
    assert_eq!(bad_flag.status.code(), Some(2));
    let missing = saliex(
        &[
            "explain",
            "--image-a",
            "nope.png",
            "--image-b",
            "nope.png",
            "--out-dir",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.png"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "2", "2");
    let out = Command::new(env!("CARGO_BIN_EXE_saliex"))
        .args(explain_args("env", "60", &[]))
        .current_dir(dir.path())
        .env("SALIEX_SEED", "42")
        .output()
        .unwrap();
    ok(&out);
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("env/run-manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["job"]["maps"]["seed"], 42);
}

#[test]
fn rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "2", "2");
    ok(&saliex(
        &explain_args("first", "60", &["--regularize"]),
        dir.path(),
    ));
    ok(&saliex(
        &["rerun", "first/run-manifest.json", "--out-dir", "again"],
        dir.path(),
    ));
    for name in ["s000_p_dissim.pfm", "s000_v00_sim.pfm", "scores.csv"] {
        assert_eq!(
            fs::read(dir.path().join("first").join(name)).unwrap(),
            fs::read(dir.path().join("again").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn external_command_embedder_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "2", "2");
    let server = format!(
        "ext:cmd={} serve-embedder --model toy:block-avg:g=8",
        env!("CARGO_BIN_EXE_saliex")
    );
    ok(&saliex(&explain_args("local", "60", &[]), dir.path()));
    ok(&saliex(
        &explain_args("remote", "60", &["--model", &server]),
        dir.path(),
    ));
    for name in ["s000_p_dissim.pfm", "s000_v00_sim.pfm"] {
        let a = pfm_values(&dir.path().join("local").join(name));
        let b = pfm_values(&dir.path().join("remote").join(name));
        assert_eq!(a.len(), 112 * 112);
        let worst = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "{name}: {worst}");
    }
}

#[test]
fn identify_ranks_gallery_and_writes_per_rank_maps() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "6", "2");
    let args = [
        "identify",
        "--probe",
        "toy/images/s002_v01.png",
        "--gallery-manifest",
        "toy/gallery.txt",
        "--masks",
        "40",
        "--out-dir",
        "id",
    ];
    ok(&saliex(&args, dir.path()));
    let ranking = fs::read_to_string(dir.path().join("id/ranking.csv")).unwrap();
    let rows: Vec<&str> = ranking.lines().collect();
    assert_eq!(rows[0], "rank,path,identity,score");
    assert_eq!(rows.len(), 7);
    assert!(
        rows[1].starts_with("1,") && rows[1].contains(",s002,"),
        "{}",
        rows[1]
    );
    for r in 1..=5 {
        for side in ["probe", "gallery"] {
            assert!(dir
                .path()
                .join(format!("id/rank{r:02}_{side}_dissim.pfm"))
                .exists());
        }
    }
    assert!(!dir.path().join("id/rank06_probe_sim.pfm").exists());

    fs::write(dir.path().join("empty.txt"), "").unwrap();
    let empty = saliex(
        &[
            "identify",
            "--probe",
            "toy/images/s002_v01.png",
            "--gallery-manifest",
            "empty.txt",
            "--out-dir",
            "e",
        ],
        dir.path(),
    );
    assert_eq!(empty.status.code(), Some(1));
}

#[test]
fn evaluate_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    toyset(dir.path(), "3", "2");
    let args = [
        "evaluate",
        "verification",
        "--pairs",
        "toy/pairs.txt",
        "--maps",
        "random",
        "--mode",
        "insertion",
        "--steps",
        "5",
        "--out-dir",
        "ev",
    ];
    ok(&saliex(&args, dir.path()));
    let curve = fs::read_to_string(dir.path().join("ev/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);
    assert_eq!(curve.lines().nth(5).unwrap().split(',').next(), Some("1"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ev/summary.json")).unwrap())
            .unwrap();
    for key in ["mode", "which", "n", "sigma", "auc", "threshold"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert_eq!(summary["mode"], "insertion");
    assert_eq!(summary["which"], "similarity");
    assert_eq!(summary["n"], 5);

    let ident = [
        "evaluate",
        "identification",
        "--probes",
        "toy/probes.txt",
        "--gallery",
        "toy/gallery.txt",
        "--top-k",
        "2",
        "--maps",
        "center",
        "--steps",
        "4",
        "--out-dir",
        "evi",
    ];
    ok(&saliex(&ident, dir.path()));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("evi/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["which"], "signed");
    assert_eq!(summary["probes"], 3);

    let unknown = saliex(
        &[
            "evaluate",
            "verification",
            "--pairs",
            "toy/pairs.txt",
            "--maps",
            "gradcam",
            "--out-dir",
            "u",
        ],
        dir.path(),
    );
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn sanity_check_reports_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = saliex(
        &[
            "sanity-check",
            "--subjects",
            "2",
            "--images-per-subject",
            "2",
            "--trials",
            "2",
            "--masks",
            "20",
            "--random-dim",
            "8",
            "--size",
            "32",
            "--patch-size",
            "8",
            "--out-dir",
            "san",
        ],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("trial")).count(),
        2,
        "{stdout}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("san/sanity.json")).unwrap())
            .unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 2);
    let passed = report["passed"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if passed { 0 } else { 1 }));
}
