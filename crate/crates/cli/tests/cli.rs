use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drgaze::data::{load_manifest, synthesize_dataset, write_manifest, SynthConfig};
use drgaze::io::save_tensor;
use drgaze::model::{save_checkpoint, Checkpoint};
use drgaze::{DrGazeModel, ModelConfig, Tensor};

fn drgaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drgaze"))
        .args(args)
        .env_remove("DRGAZE_DATA_DIR")
        .output()
        .expect("running drgaze")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(dir: &Path, drivers: usize, per_driver: usize) -> PathBuf {
    synthesize_dataset(dir, &SynthConfig::new(drivers, per_driver, 3).with_image(8, 12))
        .unwrap()
        .manifest
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--preset",
        "tiny",
        "--epochs",
        "5",
        "--batch-size",
        "8",
        "--lr",
        "1e-3",
        "--manifest",
    ];
    args.push(p(manifest));
    args.extend(["--out", p(out)]);
    args.extend(extra);
    drgaze(&args)
}

/// Zero-weight tiny model whose output is exactly `bias`.
fn constant_checkpoint(path: &Path, bias: [f32; 2], meta: BTreeMap<String, String>) {
    let mut model = DrGazeModel::<f32>::zeros(ModelConfig::tiny()).unwrap();
    model.params.output.bias = Tensor::vector(bias.to_vec());
    save_checkpoint(path, &Checkpoint { model, meta }).unwrap();
}

#[test]
fn train_writes_one_metrics_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("d"), 4, 8);
    let out = dir.path().join("run");
    let res = train(&manifest, &out, &[]);
    assert!(res.status.success(), "{}", text(&res.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_l1,val_l1");
    assert_eq!(lines.len(), 6);
    assert!(text(&res.stdout).contains(lines[5]));
    for f in ["final.ckpt", "best.ckpt", "normalization.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(out.join("normalization.txt"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn eval_reproduces_final_validation_l1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("d"), 4, 6);
    let out = dir.path().join("run");
    assert!(train(&manifest, &out, &["--seed", "4"]).status.success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let last_val = metrics.lines().last().unwrap().rsplit(',').next().unwrap().to_string();

    let res = drgaze(&[
        "eval",
        "--checkpoint",
        p(&out.join("final.ckpt")),
        "--manifest",
        p(&manifest),
    ]);
    assert!(res.status.success(), "{}", text(&res.stderr));
    let stdout = text(&res.stdout);
    let val_line = stdout.lines().find(|l| l.starts_with("validation")).unwrap();
    assert_eq!(val_line.split_whitespace().last().unwrap(), last_val, "{stdout}");
}

#[test]
fn eval_of_perfect_predictor_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 3, 4);
    let mut records = load_manifest(&manifest).unwrap();
    for r in &mut records {
        r.gaze = [700.25, 300.5];
    }
    write_manifest(&manifest, &records).unwrap();
    let ckpt = dir.path().join("perfect.ckpt");
    constant_checkpoint(&ckpt, [700.25, 300.5], BTreeMap::new());
    let res = drgaze(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest)]);
    assert!(res.status.success(), "{}", text(&res.stderr));
    let stdout = text(&res.stdout);
    for split in ["train", "validation", "test"] {
        let line = stdout.lines().find(|l| l.starts_with(split)).unwrap();
        assert_eq!(line.split_whitespace().last().unwrap(), "0", "{stdout}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    assert_eq!(train(&missing, &dir.path().join("o"), &[]).status.code(), Some(2));
    assert_eq!(drgaze(&["train"]).status.code(), Some(2), "no manifest and no data dir");
    assert_eq!(drgaze(&["frobnicate"]).status.code(), Some(2));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    let res = drgaze(&["train", "--config", p(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(text(&res.stderr).contains("learning_rate"));

    let res = drgaze(&["train", "--batch-size", "0", "--manifest", p(&missing)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn data_dir_environment_supplies_manifest() {
    let dir = tempfile::tempdir().unwrap();
    dataset(&dir.path().join("d"), 3, 2);
    let out = dir.path().join("run");
    let res = Command::new(env!("CARGO_BIN_EXE_drgaze"))
        .args(["train", "--preset", "tiny", "--epochs", "1", "--out", p(&out)])
        .env("DRGAZE_DATA_DIR", dir.path().join("d"))
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", text(&res.stderr));
}

#[test]
fn eval_rejects_mismatched_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 3, 2);
    let ckpt = dir.path().join("c.ckpt");
    constant_checkpoint(&ckpt, [1.0, 1.0], BTreeMap::new());
    let res = drgaze(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&manifest),
        "--preset",
        "default",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(text(&res.stderr).contains("does not match"));
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("d"), 3, 4);
    let out = dir.path().join("run");
    let res = drgaze(&[
        "train",
        "--preset",
        "tiny",
        "--epochs",
        "3",
        "--lr",
        "1e38",
        "--milestones",
        "",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", text(&res.stderr));
    assert!(text(&res.stderr).contains("non-finite"));
}

fn predict_fixture(dir: &Path, bias: [f32; 2]) -> (PathBuf, PathBuf) {
    let ckpt = dir.join("model.ckpt");
    constant_checkpoint(&ckpt, bias, BTreeMap::new());
    let eye = dir.join("eye.drgz");
    let pixels = (0..3 * 8 * 12).map(|i| (i * 37 % 255) as f32).collect();
    save_tensor(&eye, &Tensor::new(vec![3, 8, 12], pixels).unwrap()).unwrap();
    (ckpt, eye)
}

const FEATURES: &str = "500,300,200,240,0,0,0,560,396,640,396,600,449";

#[test]
fn predict_draws_markers_on_road_image() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, eye) = predict_fixture(dir.path(), [960.0, 540.0]);
    let road = dir.path().join("road.drgz");
    save_tensor(&road, &Tensor::<f32>::full(&[3, 108, 192], 40.0)).unwrap();
    let out = dir.path().join("overlay.ppm");
    let res = drgaze(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--eye",
        p(&eye),
        "--features",
        FEATURES,
        "--road",
        p(&road),
        "--truth",
        "100,100",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success(), "{}", text(&res.stderr));
    assert!(text(&res.stdout).contains("prediction 960 540"));
    let img = image::open(&out).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (192, 108));
    assert_eq!(img.get_pixel(96, 54).0, [255, 0, 0]);
    assert_eq!(img.get_pixel(10, 10).0, [0, 255, 0]);
    assert_eq!(img.get_pixel(150, 20).0, [40, 40, 40]);
    assert!(fs::read(&out).unwrap().starts_with(b"P6"));
}

#[test]
fn predict_clamps_out_of_frame_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, eye) = predict_fixture(dir.path(), [-5.0, 50.0]);
    let out = dir.path().join("overlay.ppm");
    let res = drgaze(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--eye",
        p(&eye),
        "--features",
        FEATURES,
        "--out",
        p(&out),
    ]);
    assert!(res.status.success(), "{}", text(&res.stderr));
    assert!(text(&res.stdout).contains("prediction -5 50"));
    let stderr = text(&res.stderr);
    assert!(stderr.contains("warning") && stderr.contains("(0, 50)"), "{stderr}");
    let img = image::open(&out).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (1920, 1080));
    assert_eq!(img.get_pixel(0, 50).0, [255, 0, 0]);
}

#[test]
fn predict_rejects_wrong_feature_count() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, eye) = predict_fixture(dir.path(), [1.0, 1.0]);
    let res = drgaze(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--eye",
        p(&eye),
        "--features",
        "1,2,3",
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let res = drgaze(&["gradcheck", "--biases-only"]);
    assert_eq!(res.status.code(), Some(0), "{}", text(&res.stdout));

    let res = drgaze(&["gradcheck", "--biases-only", "--tolerance", "1e-12"]);
    assert_eq!(res.status.code(), Some(1));

    let res = drgaze(&["gradcheck", "--biases-only", "--inject-fault", "conv-bias"]);
    assert_eq!(res.status.code(), Some(1));
    let stdout = text(&res.stdout);
    assert!(
        stdout.contains("FAIL: worst tensor eye.") && stdout.contains(".bias"),
        "{stdout}"
    );
}
