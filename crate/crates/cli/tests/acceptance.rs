//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the report is always printed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use drgaze::data::{
    channel_stats, load_manifest, split_by_driver, synthesize_dataset, write_manifest, Dataset, DatasetSplit,
    NormalizationStats, SampleRecord, SynthConfig,
};
use drgaze::io::save_tensor;
use drgaze::model::{eye_branch_forward, rdb_forward, save_checkpoint, Checkpoint, ModelParams, FEATURE_LEN};
use drgaze::train::{adam_step, evaluate, train_loop, AdamConfig, AdamState, LrSchedule, TrainConfig};
use drgaze::{DrGazeModel, EyeBranchConfig, ModelConfig, Tape, Tensor};
use drgaze_cli::args::{EvalArgs, GradcheckArgs, RunArgs};
use drgaze_cli::commands;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let report = commands::gradcheck(&GradcheckArgs {
        tolerance: 1e-4,
        seed: 1,
        biases_only: false,
        inject_fault: None,
    })
    .map_err(err)?;
    let elapsed = start.elapsed();
    ensure(
        report.passed() && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {:.3e} over {} tensors in {elapsed:.1?}",
            report.max_rel_error(),
            report.tensors.len()
        ),
    )
}

fn shape_contract() -> Outcome {
    let config = ModelConfig::default();
    let shapes = ModelParams::shapes(&config);
    let model = DrGazeModel::<f32>::init(config, 0).map_err(err)?;
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let eye = tape.leaf(Tensor::<f32>::zeros(&config.eye.input_shape(1)));
    let feature = eye_branch_forward(&mut tape, &config, eye, &params.eye).map_err(err)?;
    let eye_len = tape.shape(feature)[1];
    let fused = shapes.hidden.weight[1];
    ensure(
        eye_len == 6480 && fused == 6496 && config.fused_len() == 6496,
        format!("eye feature {eye_len}, fused vector {fused}"),
    )
}

fn overfit_capacity() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let report = synthesize_dataset(dir.path(), &SynthConfig::new(4, 4, 0).with_image(8, 12)).map_err(err)?;
    let mut stats = NormalizationStats::default();
    let data = Dataset::<f32>::load(&report.records, dir.path(), &ModelConfig::tiny().eye, &mut stats).map_err(err)?;
    let config = TrainConfig {
        model: ModelConfig::tiny(),
        batch_size: 2,
        epochs: 500,
        seed: 0,
        schedule: LrSchedule {
            base: 1e-3,
            gamma: 0.1,
            milestones: vec![400],
        },
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train_loop(&config, &data, None, |_| {}).map_err(err)?;
    let l1 = evaluate(&out.model, &data, 16).map_err(err)?;
    let elapsed = start.elapsed();
    ensure(
        data.len() == 16 && l1 < 5.0 && elapsed < Duration::from_secs(300),
        format!(
            "train L1 {l1:.3} px on {} samples after 500 epochs in {elapsed:.1?}",
            data.len()
        ),
    )
}

fn optimizer_exactness() -> Outcome {
    let mut p = Tensor::scalar(0.0f64);
    let g = Tensor::scalar(1.0f64);
    let mut state = AdamState::new(AdamConfig::default(), [&p]);
    adam_step(&mut [&mut p], &[&g], &mut state, 1e-5).map_err(err)?;
    let moved = -p.item();
    let expected = 1e-5 / (1.0 + 1e-5);
    ensure(
        state.t == 1 && (moved - expected).abs() <= 1e-12,
        format!("moved {moved:e}, expected {expected:e}"),
    )
}

fn schedule_exactness() -> Outcome {
    let s = LrSchedule::default();
    let got = [s.lr_at_epoch(0), s.lr_at_epoch(40), s.lr_at_epoch(55)];
    let want = [1e-5, 1e-6, 1e-7];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-15 * w);
    ensure(
        ok,
        format!("lr at 0/40/55 = {:e} / {:e} / {:e}", got[0], got[1], got[2]),
    )
}

fn split_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let report = synthesize_dataset(dir.path(), &SynthConfig::new(13, 4, 3).with_image(4, 4)).map_err(err)?;
    let records = load_manifest(&report.manifest).map_err(err)?;
    let split = split_by_driver(&records, 1, 1, 0).map_err(err)?;
    let (tr, va, te) = (
        DatasetSplit::drivers(&split.train),
        DatasetSplit::drivers(&split.validation),
        DatasetSplit::drivers(&split.test),
    );
    let disjoint = tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te);
    ensure(
        (tr.len(), va.len(), te.len()) == (11, 1, 1) && disjoint,
        format!("{}/{}/{} drivers, disjoint: {disjoint}", tr.len(), va.len(), te.len()),
    )
}

fn normalization_identity() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let report = synthesize_dataset(dir.path(), &SynthConfig::new(5, 6, 4)).map_err(err)?;
    let mut stats = NormalizationStats::default();
    let data =
        Dataset::<f32>::load(&report.records, dir.path(), &ModelConfig::default().eye, &mut stats).map_err(err)?;
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for driver in stats.drivers.keys() {
        let images: Vec<&Tensor<f32>> = data
            .drivers
            .iter()
            .zip(&data.eyes)
            .filter(|(d, _)| *d == driver)
            .map(|(_, e)| e)
            .collect();
        let s = channel_stats(driver, &images).map_err(err)?;
        for c in 0..s.mean.len() {
            worst_mean = worst_mean.max(s.mean[c].abs());
            worst_std = worst_std.max((s.std[c] - 1.0).abs());
        }
    }
    ensure(
        worst_mean <= 1e-5 && worst_std <= 1e-4,
        format!(
            "{} drivers; worst |mean| {worst_mean:.2e}, worst |std - 1| {worst_std:.2e}",
            stats.drivers.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data");
    synthesize_dataset(&data, &SynthConfig::new(4, 8, 5).with_image(8, 12)).map_err(err)?;
    let run = |out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_drgaze"))
            .args([
                "train",
                "--preset",
                "tiny",
                "--epochs",
                "3",
                "--batch-size",
                "8",
                "--lr",
                "1e-3",
                "--seed",
                "9",
            ])
            .arg("--manifest")
            .arg(data.join("manifest.tsv"))
            .arg("--out")
            .arg(out)
            .output()
            .map_err(err)?;
        ensure(status.status.success(), format!("train exited with {}", status.status)).map(|_| ())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    let mut same = Vec::new();
    for file in ["final.ckpt", "best.ckpt", "metrics.csv"] {
        let x = fs::read(a.join(file)).map_err(err)?;
        let y = fs::read(b.join(file)).map_err(err)?;
        if x != y {
            return Err(format!("{file} differs between runs"));
        }
        same.push(format!("{file} ({} B)", x.len()));
    }
    Ok(format!("byte-identical: {}", same.join(", ")))
}

fn channel_count_law() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let eye = EyeBranchConfig {
            channels: rng.gen_range(1..4),
            features: rng.gen_range(1..9),
            blocks: rng.gen_range(1..5),
            growth: rng.gen_range(1..6),
            layers: rng.gen_range(1..5),
            height: rng.gen_range(1..4),
            width: rng.gen_range(1..4),
        };
        let config = ModelConfig {
            eye,
            ..ModelConfig::tiny()
        };
        let (lff, gff) = (eye.features + eye.layers * eye.growth, (eye.blocks + 1) * eye.features);
        let shapes = ModelParams::shapes(&config);
        if shapes.eye.blocks.iter().any(|b| b.lff.weight[1] != lff) || shapes.eye.gff.weight[1] != gff {
            return Err(format!("parameter shapes break the law for {eye:?}"));
        }
        let model = DrGazeModel::<f32>::init(config, 1).map_err(err)?;
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let x = tape.leaf(Tensor::<f32>::ones(&eye.input_shape(1)));
        let f0 = tape.leaf(Tensor::<f32>::ones(&[1, eye.features, eye.height, eye.width]));
        let out = rdb_forward(&mut tape, f0, &params.eye.blocks[0]).map_err(err)?;
        if out.lff_input_channels != lff {
            return Err(format!(
                "rdb concatenated {} channels, expected {lff}",
                out.lff_input_channels
            ));
        }
        eye_branch_forward(&mut tape, &config, x, &params.eye).map_err(err)?;
    }
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(1),
        format!("100 random configs in {elapsed:.1?}"),
    )
}

fn degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dist = Uniform::new_inclusive(-3.0, 3.0);
    let config = ModelConfig::tiny();
    let mut model = DrGazeModel::<f64>::init(config, 8).map_err(err)?;
    for block in &mut model.params.eye.blocks {
        block.lff.weight = Tensor::zeros(block.lff.weight.shape());
        block.lff.bias = Tensor::zeros(block.lff.bias.shape());
    }
    let shape = [2, config.eye.features, config.eye.height, config.eye.width];
    let mut checked = 0;
    for block in 0..config.eye.blocks {
        for _ in 0..5 {
            let n: usize = shape.iter().product();
            let input = Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect()).map_err(err)?;
            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let x = tape.leaf(input.clone());
            let out = rdb_forward(&mut tape, x, &params.eye.blocks[block]).map_err(err)?;
            if tape.value(out.output) != &input {
                return Err(format!("block {block} is not the identity"));
            }
            checked += n;
        }
    }
    Ok(format!("{checked} elements equal across {} blocks", config.eye.blocks))
}

fn metric_sanity() -> Outcome {
    const SAMPLES: usize = 10_000;
    const DRIVERS: usize = 10;
    let dir = tempfile::tempdir().map_err(err)?;
    let config = ModelConfig::tiny();
    let mut model = DrGazeModel::<f32>::zeros(config).map_err(err)?;
    model.params.output.bias = Tensor::vector(vec![960.0, 540.0]);
    let drivers: Vec<String> = (0..DRIVERS).map(|d| format!("d{d}")).collect();
    let meta = BTreeMap::from([
        ("split.train".to_string(), drivers.join(",")),
        ("split.validation".to_string(), String::new()),
        ("split.test".to_string(), String::new()),
    ]);
    let ckpt = dir.path().join("center.ckpt");
    save_checkpoint(&ckpt, &Checkpoint { model, meta }).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(375);
    let eyes = dir.path().join("eyes");
    fs::create_dir_all(&eyes).map_err(err)?;
    let [c, h, w] = [config.eye.channels, config.eye.height, config.eye.width];
    let mut records = Vec::with_capacity(SAMPLES);
    for i in 0..SAMPLES {
        let rel = Path::new("eyes").join(format!("{i:05}.drgz"));
        let pixels = (0..c * h * w).map(|_| rng.gen_range(0.0..255.0f32)).collect();
        save_tensor(dir.path().join(&rel), &Tensor::new(vec![c, h, w], pixels).map_err(err)?).map_err(err)?;
        records.push(SampleRecord {
            driver_id: drivers[i % DRIVERS].clone(),
            eye_image: rel,
            features: [0.0; FEATURE_LEN],
            gaze: [rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)],
            road_image: None,
        });
    }
    let manifest = dir.path().join("manifest.tsv");
    write_manifest(&manifest, &records).map_err(err)?;
    let reports = commands::eval(&EvalArgs {
        run: RunArgs {
            manifest: Some(manifest),
            ..RunArgs::default()
        },
        checkpoint: ckpt,
    })
    .map_err(err)?;
    let l1 = reports[0].mean_l1.ok_or("no train L1 reported")?;
    ensure(
        reports[0].samples == SAMPLES && (l1 - 375.0).abs() <= 0.05 * 375.0,
        format!(
            "constant-center L1 {l1:.2} px on {} samples (target 375 ± 5%)",
            reports[0].samples
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("shape contract", shape_contract),
        ("overfit capacity", overfit_capacity),
        ("optimizer exactness", optimizer_exactness),
        ("schedule exactness", schedule_exactness),
        ("split protocol", split_protocol),
        ("normalization identity", normalization_identity),
        ("determinism", determinism),
        ("channel-count law", channel_count_law),
        ("degeneracy", degeneracy),
        ("metric sanity", metric_sanity),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (status, detail) = match check() {
            Ok(detail) => ("PASS", detail),
            Err(detail) => {
                failed += 1;
                ("FAIL", detail)
            }
        };
        lines.push(format!("{status} [{:>2}] {name}: {detail}", i + 1));
    }
    println!();
    for line in &lines {
        println!("{line}");
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
