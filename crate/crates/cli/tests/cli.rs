use std::path::Path;
use std::process::{Command, Output};

use voxelrec::mesh::TriMesh;
use voxelrec::model::{Model, NetworkConfig};

fn voxelrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxelrec"))
        .args(args)
        .env_remove("VOXELREC_THREADS")
        .output()
        .expect("run voxelrec")
}

fn ok(args: &[&str]) -> String {
    let out = voxelrec(args);
    assert!(
        out.status.success(),
        "voxelrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf8 path")
}

fn gen(dir: &Path, name: &str, shapes: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--family", "head", "--shapes", shapes, "--res", "32", "--seed", seed, "--out", p(&out)]);
    out
}

#[test]
fn gen_data_writes_the_factor_grid_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let stdout = ok(&["gen-data", "--family", "head", "--shapes", "10", "--res", "32", "--seed", "7", "--out", p(&a)]);
    assert!(stdout.contains("wrote 150 image examples"), "{stdout}");
    let b = gen(dir.path(), "b", "10", "7");
    let data = voxelrec::datagen::Dataset::load(&a).unwrap();
    assert_eq!(data.len(), 150);
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| voxelrec(args).status.code();
    assert_eq!(code(&["gen-data", "--family", "head", "--shapes", "1"]), Some(2));
    assert_eq!(code(&["eval", "--suite", "bogus", "--model", "m", "--data", "d", "--out", "o"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    let missing = dir.path().join("missing");
    assert_eq!(code(&["train", "--data", p(&missing), "--out", p(&dir.path().join("m"))]), Some(1));

    let data = gen(dir.path(), "d", "1", "0");
    let reports = dir.path().join("r");
    let out = p(&reports);
    // suite needs a flag the parser cannot require on its own
    assert_eq!(code(&["eval", "--suite", "nn", "--model", "m", "--data", p(&data), "--out", out]), Some(2));
    assert_eq!(
        code(&["eval", "--suite", "rank", "--model", "m", "--data", p(&data), "--score-threshold", "x", "--out", out]),
        Some(2)
    );

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_voxelrec"))
        .args(["gen-data", "--family", "head", "--shapes", "1", "--out", p(&dir.path().join("t"))])
        .env("VOXELREC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d", "2", "3");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["train", "--data", p(&data), "--mode", "twin", "--seed", seed, "--out", p(&out)]);
        std::fs::read(out.join("weights.vxrc")).unwrap()
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    assert_ne!(a, run("c", "6"));
}

#[test]
fn volume_mode_leaves_the_image_decoder_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d", "2", "1");
    let out = dir.path().join("m");
    ok(&["train", "--data", p(&data), "--mode", "volume", "--seed", "4", "--out", p(&out)]);
    let text = std::fs::read_to_string(out.join("network.cfg")).unwrap();
    let cfg = NetworkConfig::from_kv(&text).unwrap();
    let trained = Model::load_weights(&cfg, out.join("weights.vxrc")).unwrap();
    let fresh = Model::build(&cfg).unwrap();
    let (mut image, mut moved) = (0, 0);
    for ((_, a), (_, b)) in trained.params().iter().zip(fresh.params().iter()) {
        if Model::is_image_decoder_param(&a.name) {
            image += 1;
            assert_eq!(a.value, b.value, "{} changed", a.name);
        } else if a.value != b.value {
            moved += 1;
        }
    }
    assert!(image > 0 && moved > 0);

    let config = std::fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(config.contains("mode=volume"), "{config}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,decoder,loss\n"));
    assert!(metrics.lines().skip(1).all(|l| l.split(',').nth(1) == Some("volume")));
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d", "1", "2");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "lr=0.5\nbatchnorm=off\nbatch_size=5\n").unwrap();
    let out = dir.path().join("m");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--lr", "0.002", "--epochs", "1", "--out", p(&out)]);
    let text = std::fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(text.contains("lr=0.002"), "{text}");
    assert!(text.contains("batchnorm=off"), "{text}");
    // 15 examples in batches of 5
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);

    std::fs::write(&cfg, "unknown_key=1\n").unwrap();
    let bad = voxelrec(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn predict_export_and_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train", "4", "1");
    let test = gen(dir.path(), "test", "3", "2");
    let model = dir.path().join("m");
    ok(&["train", "--data", p(&train), "--mode", "twin", "--seed", "1", "--out", p(&model)]);

    let vols = dir.path().join("pred.vxvg");
    ok(&["predict", "--model", p(&model), "--data", p(&test), "--index", "0,3", "--out", p(&vols)]);
    let (_, grids) = voxelrec::voxel::read_volumes(&mut std::fs::File::open(&vols).unwrap()).unwrap();
    assert_eq!(grids.len(), 2);
    assert_eq!(grids[0].dims(), [32, 32, 32]);
    let bad = voxelrec(&["predict", "--model", p(&model), "--data", p(&test), "--index", "99", "--out", p(&vols)]);
    assert_eq!(bad.status.code(), Some(2));

    let obj = dir.path().join("m.obj");
    ok(&["export-mesh", "--volumes", p(&vols), "--item", "1", "--threshold", "0.3", "--out", p(&obj)]);
    let mesh = TriMesh::read_obj(&obj).unwrap();
    assert!(mesh.vertices.iter().flatten().all(|c| (-1.5..=1.5).contains(c)));

    let reports = dir.path().join("reports");
    let nn = ok(&[
        "eval", "--suite", "nn", "--model", p(&model), "--data", p(&test), "--train-data", p(&train),
        "--limit", "10", "--out", p(&reports),
    ]);
    assert!(nn.starts_with("nn: "), "{nn}");
    let csv = std::fs::read_to_string(reports.join("nn.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,prediction_error,nn_error,nn_index"));
    assert_eq!(csv.lines().count(), 11);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(reports.join("nn.json")).unwrap()).unwrap();
    assert_eq!(json["n"], 10);
    assert_eq!(json["ttest"]["df"], 9.0);

    ok(&["eval", "--suite", "invariance", "--model", p(&model), "--data", p(&test), "--batches", "4", "--out", p(&reports)]);
    let inv = std::fs::read_to_string(reports.join("invariance.csv")).unwrap();
    assert!(inv.lines().any(|l| l.starts_with("Z_shape,")));

    ok(&["eval", "--suite", "rank", "--model", p(&model), "--data", p(&test), "--trials", "5", "--gallery", "10", "--out", p(&reports)]);
    assert_eq!(std::fs::read_to_string(reports.join("rank.csv")).unwrap().lines().count(), 6);

    ok(&["eval", "--suite", "interp", "--model", p(&model), "--data", p(&test), "--pairs", "2", "--out", p(&reports)]);
    let ppm = std::fs::read(reports.join("swap_001.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), "P6\n32 32\n255\n".len() + 32 * 32 * 3);
}

#[test]
fn video_suite_compares_against_an_image_model() {
    let dir = tempfile::tempdir().unwrap();
    let videos = dir.path().join("v");
    let stdout = ok(&["gen-data", "--family", "head", "--shapes", "4", "--video", "--seed", "1", "--out", p(&videos)]);
    assert!(stdout.contains("wrote 4 video examples"), "{stdout}");
    let images = gen(dir.path(), "i", "1", "1");
    let vm = dir.path().join("vm");
    let im = dir.path().join("im");
    ok(&["train", "--data", p(&videos), "--seed", "1", "--out", p(&vm)]);
    ok(&["train", "--data", p(&images), "--seed", "1", "--out", p(&im)]);
    let reports = dir.path().join("r");
    let missing = voxelrec(&["eval", "--suite", "video", "--model", p(&vm), "--data", p(&videos), "--out", p(&reports)]);
    assert_eq!(missing.status.code(), Some(2));
    ok(&[
        "eval", "--suite", "video", "--model", p(&vm), "--image-model", p(&im), "--data", p(&videos),
        "--out", p(&reports),
    ]);
    let csv = std::fs::read_to_string(reports.join("video.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,video_error,best_frame_error,best_frame"));
    assert_eq!(csv.lines().count(), 5);
}
