use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dlnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlnlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn last_rel_loss(csv: &str) -> f64 {
    let line = csv.lines().last().unwrap();
    line.split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_prints_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = dlnlab(&["gen-data", "--dx", "32", "--dy", "3", "--n", "8", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{out:?}");
        let text = stdout(&out);
        assert!(text.contains("rank=8") && text.contains("kappa=") && text.contains("stable_rank="));
    }
    assert!(!dir_bytes(&a).is_empty());
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn bad_gen_data_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&["gen-data", "--dx", "0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = dlnlab(&["gen-data", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&dlnlab(&["gen-data", "--bogus"])), 2);
    assert_eq!(code(&dlnlab(&[])), 2);
}

#[test]
fn zero_step_train_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&["train", "--dx", "8", "--dy", "2", "--n", "4", "--depth", "3", "--width", "8", "--steps", "0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let csv = fs::read_to_string(tmp.path().join("record.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("t,loss,rel_loss,"));
    assert!(tmp.path().join("meta.json").exists());
    assert!(tmp.path().join("init").join("W_3.mat").exists());
}

#[test]
fn orthogonal_train_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&[
        "train", "--scheme", "orthogonal", "--depth", "16", "--width", "64", "--steps", "2000", "--eta", "auto",
        "--dx", "16", "--dy", "4", "--n", "16", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let csv = fs::read_to_string(tmp.path().join("record.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2002);
    assert!(last_rel_loss(&csv) < 1e-3);
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&[
        "train", "--dx", "8", "--dy", "2", "--n", "4", "--depth", "4", "--width", "8", "--steps", "200",
        "--eta", "50", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{out:?}");
    assert!(tmp.path().join("record.csv").exists());
}

#[test]
fn config_file_merges_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small run\ndx=8\ndy=2\nn=4\ndepth=3\nwidth=8\nsteps=7\n").unwrap();
    let run = tmp.path().join("run");
    let out = dlnlab(&["train", "--config", cfg.to_str().unwrap(), "--steps", "3", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let csv = fs::read_to_string(run.join("record.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap().split(',').next(), Some("3"));

    fs::write(&cfg, "depht=3\n").unwrap();
    let out = dlnlab(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn small_scan_writes_csv_and_heatmaps_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let dir = tmp.path().join(name);
        let out = dlnlab(&[
            "scan", "--depths", "2,4", "--widths", "8,16", "--schemes", "orthogonal,gaussian", "--trials", "2",
            "--checkpoints", "5,20", "--dx", "6", "--dy", "2", "--n", "4", "--jobs", jobs, "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        outputs.push(dir_bytes(&dir));
    }
    assert_eq!(outputs[0], outputs[1]);
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "heatmap_gaussian_t20.csv",
            "heatmap_gaussian_t20.ppm",
            "heatmap_gaussian_t5.csv",
            "heatmap_gaussian_t5.ppm",
            "heatmap_orthogonal_t20.csv",
            "heatmap_orthogonal_t20.ppm",
            "heatmap_orthogonal_t5.csv",
            "heatmap_orthogonal_t5.ppm",
            "scan.csv",
        ]
    );
    let csv = String::from_utf8(outputs[0].last().unwrap().1.clone()).unwrap();
    assert_eq!(csv.lines().next(), Some("depth,width,scheme,trial,eta,checkpoint,rel_loss_log10,status"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2 * 2 * 2);
    let ppm = &outputs[0][1].1;
    assert!(ppm.starts_with(b"P6\n2 2\n255\n"));
}

#[test]
fn bad_scan_config_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&["scan", "--steps", "10", "--checkpoints", "20", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_filters_families() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dlnlab(&["verify", "--only", "grad-check", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let csv = fs::read_to_string(tmp.path().join("verify.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("grad-check/")));
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(code(&dlnlab(&["verify", "--only", "nope"])), 2);
}

#[test]
fn perturbed_run_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = dlnlab(&[
        "train", "--dx", "8", "--dy", "2", "--n", "8", "--depth", "6", "--width", "32", "--steps", "5",
        "--out", run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    // Replace one trained layer by a large multiple of itself.
    let path = run.join("final").join("W_3.mat");
    let w = dln_core::linalg::Matrix::load(&path).unwrap();
    w.scale(3.0).save(&path).unwrap();
    let out = dlnlab(&["verify", "--only", "trajectory", "--run", run.to_str().unwrap(), "--out", tmp.path().join("v").to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("FAIL B_hi(") || text.contains("FAIL C_drift"), "{text}");
}
