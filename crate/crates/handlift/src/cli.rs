//! Command-line entry points: dataset generation, training, evaluation and
//! gradient checking.
//!
//! Every command is deterministic given its flags and seeds. Exit codes:
//! 0 success, 1 validation error (bad arguments, malformed inputs), 2
//! runtime or numeric failure (I/O, divergence, failed gradient checks).

use crate::evaluation::{self, evaluate_predictor, ModelMetrics};
use crate::format::{self, TensorMap};
use crate::geometry::AxisAngle;
use crate::models::{
    build_poseprior_stream, COORD_OUTPUT, GESTURE_CLASSES, SCOREMAP_SIZE, VIEWPOINT_OUTPUT,
};
use crate::nn::{
    gradient_check_with, l2_loss, softmax_cross_entropy, LayerRef, LayerSpec, Network,
    NetworkSpec, Tensor,
};
use crate::rng::mix;
use crate::skeleton::{generate_dataset, GenOptions, HandModelConfig, SampleRecord};
use crate::training::{
    self, model_to_tensors, preset, train_gesturenet, train_lifting, LogRow,
    TrainConfig, LOG_HEADER,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Failures partitioned by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or malformed inputs (exit 1).
    Validation(String),
    /// Runtime or numeric failure (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

trait Ctx<T> {
    fn validation(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Ctx<T> for Result<T, E> {
    fn validation(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(e.to_string()))
    }
    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "handlift",
    about = "3D hand pose lifting: procedural data, training and evaluation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural hand-pose dataset.
    GenData(GenDataArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate checkpoints and export metric tables and PCK curves.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset path (line-delimited records).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub n: u64,
    /// Master seed; the run is fully reproducible from it.
    #[arg(long)]
    pub seed: u64,
    /// Hand-model parameter file (JSON); defaults to the built-in model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Draw poses around this many gesture templates and store class labels.
    #[arg(long)]
    pub classes: Option<u16>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture: poseprior, poseprior-direct or gesturenet.
    #[arg(long)]
    pub arch: String,
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path (manifest; the parameter blob sits next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (also overrides any config-file seed).
    #[arg(long)]
    pub seed: u64,
    /// Config file path, or `preset:<name>` for the published schedules
    /// (handsegnet-schedule, posenet-schedule, gesturenet-schedule).
    #[arg(long)]
    pub config: Option<String>,
    /// Override the total iteration count.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Override the width scale in (0, 1].
    #[arg(long)]
    pub width: Option<f64>,
    /// Override the held-out trailing record count.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Use only the first N records of the dataset.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write a full checkpoint every K iterations (resumable).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Resume from a checkpoint written by an earlier (interrupted) run.
    /// The original run configuration embedded in the checkpoint is reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many iterations (checkpoint still reflects the full
    /// configured run, so it can be resumed).
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Metrics log path (default: checkpoint path + ".log.csv").
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Second checkpoint for a side-by-side comparison.
    #[arg(long)]
    pub ckpt_b: Option<PathBuf>,
    /// Evaluation dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for tables and curve files.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the first N records (e.g. the training split).
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    /// Evaluate at most N records after skipping.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Component filter: all, layers, poseprior or gesturenet.
    #[arg(long, default_value = "all")]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test-harness hook: corrupt analytic gradients to verify the check
    /// fails loudly.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Parse and execute; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with code 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Execute one parsed command.
pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

pub fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Validation("--n must be positive".into()));
    }
    let model = match &args.model {
        Some(path) => format::read_json::<HandModelConfig>(path).validation()?,
        None => HandModelConfig::default(),
    };
    model.validate().validation()?;
    if let Some(0) = args.classes {
        return Err(CliError::Validation("--classes must be positive".into()));
    }
    let opts = GenOptions { classes: args.classes };
    generate_dataset(&model, args.n, args.seed, &args.out, &opts).runtime()?;
    println!("wrote {} samples to {}", args.n, args.out.display());
    Ok(())
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match args.arch.as_str() {
        "poseprior" | "poseprior-direct" => {
            let mut c = TrainConfig::desk_poseprior(args.seed);
            c.arch = args.arch.clone();
            c
        }
        "gesturenet" => TrainConfig {
            arch: "gesturenet".into(),
            batch_size: training::PRESET_BATCH_SIZE,
            iterations: 3_000,
            schedule: training::Schedule::new(vec![(0, 1e-3)]).unwrap(),
            seed: args.seed,
            width_scale: 1.0,
            scoremap_variance: crate::heatmap::SCOREMAP_VARIANCE,
            noise: training::NoiseConfig::default(),
            holdout: 0,
            log_every: 50,
            view_lr_scale: 1.0,
        },
        other => {
            return Err(CliError::Validation(format!(
                "unknown architecture {other:?} (expected poseprior, poseprior-direct or gesturenet)"
            )))
        }
    };

    if let Some(spec) = &args.config {
        if let Some(name) = spec.strip_prefix("preset:") {
            let (iterations, schedule) = preset(name).ok_or_else(|| {
                CliError::Validation(format!("unknown preset {name:?}"))
            })?;
            config.iterations = iterations;
            config.schedule = schedule;
            config.batch_size = training::PRESET_BATCH_SIZE;
        } else {
            config = format::read_json::<TrainConfig>(Path::new(spec)).validation()?;
            if config.arch != args.arch {
                return Err(CliError::Validation(format!(
                    "config file is for arch {:?}, command line says {:?}",
                    config.arch, args.arch
                )));
            }
        }
    }

    config.seed = args.seed;
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(width) = args.width {
        config.width_scale = width;
    }
    if let Some(holdout) = args.holdout {
        config.holdout = holdout;
    }
    config.validate().validation()?;
    Ok(config)
}

fn load_records(path: &Path, limit: Option<usize>) -> Result<Vec<SampleRecord>, CliError> {
    let mut records = format::read_dataset(path).validation()?;
    if let Some(limit) = limit {
        records.truncate(limit);
    }
    if records.is_empty() {
        return Err(CliError::Validation("dataset is empty".into()));
    }
    Ok(records)
}

fn write_log(path: &Path, log: &[LogRow]) -> Result<(), CliError> {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for row in log {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    format::write_atomic(path, text.as_bytes()).runtime()
}

fn save_model_checkpoint(
    path: &Path,
    config: &TrainConfig,
    iteration: u64,
    tensors: &TensorMap,
) -> Result<(), CliError> {
    let snapshot = serde_json::to_value(config).runtime()?;
    format::save_checkpoint(
        path,
        &config.arch,
        config.width_scale,
        config.seed,
        iteration,
        snapshot,
        tensors,
    )
    .runtime()
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (config, resume_state) = match &args.resume {
        Some(ckpt_path) => {
            let (manifest, tensors) = format::load_checkpoint(ckpt_path).validation()?;
            let config: TrainConfig =
                serde_json::from_value(manifest.config.clone()).validation()?;
            if config.arch != args.arch {
                return Err(CliError::Validation(format!(
                    "checkpoint is for arch {:?}, command line says {:?}",
                    config.arch, args.arch
                )));
            }
            (config, Some((tensors, manifest.iteration)))
        }
        None => (resolve_config(&args)?, None),
    };

    let records = load_records(&args.data, args.limit)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_file_name(format!(
            "{}.log.csv",
            args.out.file_name().unwrap_or_default().to_string_lossy()
        )));

    // A stop-after run truncates the loop but checkpoints the full config,
    // so a later --resume continues to the configured end.
    let stop_at = args.stop_after.unwrap_or(config.iterations).min(config.iterations);
    let mut run_config = config.clone();
    run_config.iterations = stop_at;

    match config.arch.as_str() {
        "poseprior" | "poseprior-direct" => {
            let mut checkpoint_error: Option<CliError> = None;
            let outcome = {
                let mut sink = |iteration: u64, tensors: &TensorMap| {
                    save_model_checkpoint(&args.out, &config, iteration, tensors)
                        .map_err(|e| {
                            checkpoint_error = Some(e);
                            training::TrainError::InvalidConfig("checkpoint write failed".into())
                        })
                };
                let on_checkpoint = args
                    .checkpoint_every
                    .map(|k| (k, &mut sink as &mut dyn FnMut(u64, &TensorMap) -> Result<(), training::TrainError>));
                train_lifting(
                    &run_config,
                    &records,
                    resume_state.as_ref().map(|(t, i)| (t, *i)),
                    on_checkpoint,
                )
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    if let Some(cli_err) = checkpoint_error {
                        return Err(cli_err);
                    }
                    return Err(match &e {
                        training::TrainError::Diverged { .. } => CliError::Runtime(e.to_string()),
                        training::TrainError::InvalidConfig(_)
                        | training::TrainError::LabelsMissing => {
                            CliError::Validation(e.to_string())
                        }
                        _ => CliError::Runtime(e.to_string()),
                    });
                }
            };
            let tensors = model_to_tensors(&outcome.model, &outcome.adam);
            save_model_checkpoint(&args.out, &config, outcome.iteration, &tensors)?;
            write_log(&log_path, &outcome.log)?;
            println!(
                "trained {} for {} iterations (loss {:.6} -> {:.6}); checkpoint {}",
                config.arch,
                outcome.iteration,
                outcome.initial_loss,
                outcome.final_loss,
                args.out.display()
            );
        }
        "gesturenet" => {
            if args.resume.is_some() || args.stop_after.is_some() {
                return Err(CliError::Validation(
                    "resume/stop-after are supported for the lifting architectures only".into(),
                ));
            }
            let outcome = train_gesturenet(&run_config, &records).map_err(|e| match &e {
                training::TrainError::Diverged { .. } => CliError::Runtime(e.to_string()),
                _ => CliError::Validation(e.to_string()),
            })?;
            let mut tensors = TensorMap::new();
            for ((name, tensor), (m, v)) in outcome
                .net
                .param_names()
                .iter()
                .zip(outcome.net.param_tensors())
                .zip(outcome.adam.m.iter().zip(outcome.adam.v.iter()))
            {
                let shape = tensor.shape().to_vec();
                tensors.insert(format!("net/{name}"), (shape.clone(), tensor.data().to_vec()));
                tensors.insert(format!("net/adam_m/{name}"), (shape.clone(), m.clone()));
                tensors.insert(format!("net/adam_v/{name}"), (shape, v.clone()));
            }
            save_model_checkpoint(&args.out, &config, outcome.iteration, &tensors)?;
            write_log(&log_path, &outcome.log)?;
            println!(
                "trained gesturenet for {} iterations; checkpoint {}",
                outcome.iteration,
                args.out.display()
            );
        }
        other => return Err(CliError::Validation(format!("unknown architecture {other:?}"))),
    }
    Ok(())
}

fn metrics_for_checkpoint(
    path: &Path,
    records: &[SampleRecord],
) -> Result<(String, ModelMetrics), CliError> {
    let (manifest, tensors) = format::load_checkpoint(path).validation()?;
    let model = evaluation::model_from_checkpoint(
        &manifest.arch,
        manifest.width_scale,
        manifest.iteration,
        &tensors,
    )
    .validation()?;
    let metrics = evaluate_predictor(&model, records).runtime()?;
    Ok((manifest.arch, metrics))
}

fn write_curves(dir: &Path, tag: &str, metrics: &ModelMetrics) -> Result<(), CliError> {
    for (suffix, curve) in
        [("norm", &metrics.curve_norm), ("mm", &metrics.curve_mm)]
    {
        let mut text = String::from("threshold,fraction\n");
        for (t, f) in curve.thresholds.iter().zip(&curve.fractions) {
            text.push_str(&format!("{t},{f}\n"));
        }
        format::write_atomic(&dir.join(format!("pck_{suffix}_{tag}.csv")), text.as_bytes())
            .runtime()?;
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut records = load_records(&args.data, None)?;
    if args.skip >= records.len() {
        return Err(CliError::Validation(format!(
            "--skip {} leaves no records (dataset has {})",
            args.skip,
            records.len()
        )));
    }
    records.drain(..args.skip);
    if let Some(limit) = args.limit {
        records.truncate(limit);
    }
    std::fs::create_dir_all(&args.out).runtime()?;

    // Gesture checkpoints get a classification report instead of EPE tables.
    let (manifest_a, _) = format::load_checkpoint(&args.ckpt).validation()?;
    if manifest_a.arch == "gesturenet" {
        if args.ckpt_b.is_some() {
            return Err(CliError::Validation(
                "two-checkpoint comparison applies to the lifting architectures".into(),
            ));
        }
        return eval_gesturenet(&args, &records);
    }

    let (_, metrics_a) = metrics_for_checkpoint(&args.ckpt, &records)?;
    let mut rows = vec![metrics_a];
    if let Some(ckpt_b) = &args.ckpt_b {
        let (_, metrics_b) = metrics_for_checkpoint(ckpt_b, &records)?;
        rows.push(metrics_b);
    }

    let report = evaluation::AblationReport { rows };
    format::write_atomic(&args.out.join("metrics.csv"), report.to_csv().as_bytes()).runtime()?;
    for (i, metrics) in report.rows.iter().enumerate() {
        let tag = if i == 0 { "a".to_string() } else { "b".to_string() };
        write_curves(&args.out, &format!("{tag}_{}", metrics.name), metrics)?;
    }
    println!("wrote metrics for {} model(s) to {}", report.rows.len(), args.out.display());
    Ok(())
}

fn eval_gesturenet(args: &EvalArgs, records: &[SampleRecord]) -> Result<(), CliError> {
    let (manifest, tensors) = format::load_checkpoint(&args.ckpt).validation()?;
    let mut net: Network<f32> =
        Network::zeros(crate::models::build_gesturenet().spec).runtime()?;
    for (name, tensor) in net.param_names().iter().zip(net.param_tensors_mut()) {
        let full = format!("net/{name}");
        let (shape, data) = tensors
            .get(&full)
            .ok_or_else(|| CliError::Validation(format!("checkpoint missing tensor {full}")))?;
        if shape != tensor.shape() {
            return Err(CliError::Validation(format!("checkpoint tensor {full} has wrong shape")));
        }
        tensor.data_mut().copy_from_slice(data);
    }
    if records.iter().any(|r| r.label.is_none()) {
        return Err(CliError::Validation(
            "gesture evaluation needs class labels; generate the dataset with --classes".into(),
        ));
    }
    let accuracy = training::gesture_accuracy(&net, records).validation()?;
    let text = format!("model,accuracy,count\n{},{},{}\n", manifest.arch, accuracy, records.len());
    format::write_atomic(&args.out.join("accuracy.csv"), text.as_bytes()).runtime()?;
    println!("gesturenet accuracy {accuracy:.4} over {} records", records.len());
    Ok(())
}

/// Gradient-check component: a network plus a loss closure.
struct CheckCase {
    name: String,
    net: Network<f64>,
    input: Tensor<f64>,
    aux: Option<Vec<f64>>,
    loss: Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>,
    samples: usize,
}

fn rand_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed);
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn l2_case_loss(target: Vec<f64>) -> Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)> {
    Box::new(move |out: &[f64]| l2_loss(out, &target).unwrap())
}

fn layer_cases(seed: u64) -> Vec<CheckCase> {
    let mut cases = Vec::new();

    let conv_spec = NetworkSpec {
        name: "conv+relu+pool".into(),
        input_shape: vec![8, 8, 2],
        aux_len: 0,
        layers: vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Reshape,
            LayerSpec::FullyConnected { out_features: 5 },
        ],
        taps: vec![4],
    };
    cases.push(CheckCase {
        name: "conv+relu+maxpool+fc".into(),
        net: Network::init(conv_spec, mix(seed, 1)).unwrap(),
        input: rand_input(&[8, 8, 2], mix(seed, 2)),
        aux: None,
        loss: l2_case_loss(vec![0.2, -0.4, 0.6, 0.1, -0.3]),
        samples: 150,
    });

    let upsample_spec = NetworkSpec {
        name: "strided-conv+upsample".into(),
        input_shape: vec![8, 8, 1],
        aux_len: 0,
        layers: vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 2, padding: 1 },
            LayerSpec::BilinearUpsample { target_height: 8, target_width: 8 },
            LayerSpec::Reshape,
            LayerSpec::FullyConnected { out_features: 3 },
        ],
        taps: vec![3],
    };
    cases.push(CheckCase {
        name: "strided-conv+bilinear-upsample".into(),
        net: Network::init(upsample_spec, mix(seed, 3)).unwrap(),
        input: rand_input(&[8, 8, 1], mix(seed, 4)),
        aux: None,
        loss: l2_case_loss(vec![0.3, 0.3, -0.1]),
        samples: 120,
    });

    let concat_spec = NetworkSpec {
        name: "concat+dropout(eval)".into(),
        input_shape: vec![6],
        aux_len: 2,
        layers: vec![
            LayerSpec::FullyConnected { out_features: 4 },
            LayerSpec::Relu,
            LayerSpec::Concat { sources: vec![LayerRef::Layer(1), LayerRef::Aux] },
            LayerSpec::Dropout { probability: 0.2 },
            LayerSpec::FullyConnected { out_features: 3 },
        ],
        taps: vec![4],
    };
    cases.push(CheckCase {
        name: "fc+concat+dropout-eval".into(),
        net: Network::init(concat_spec, mix(seed, 5)).unwrap(),
        input: rand_input(&[6], mix(seed, 6)),
        aux: Some(vec![1.0, 0.0]),
        loss: l2_case_loss(vec![0.5, -0.2, 0.4]),
        samples: 100,
    });

    cases.push(CheckCase {
        name: "softmax-cross-entropy".into(),
        net: Network::init(
            NetworkSpec {
                name: "softmax-head".into(),
                input_shape: vec![5],
                aux_len: 0,
                layers: vec![
                    LayerSpec::FullyConnected { out_features: 8 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 4 },
                ],
                taps: vec![2],
            },
            mix(seed, 7),
        )
        .unwrap(),
        input: rand_input(&[5], mix(seed, 8)),
        aux: None,
        loss: Box::new(|out: &[f64]| softmax_cross_entropy(out, 1, 4, &[2]).unwrap()),
        samples: 80,
    });

    cases
}

fn poseprior_cases(seed: u64) -> Vec<CheckCase> {
    // Double-precision copies of the two streams at desk width, checked
    // through the combined loss (the viewpoint stream differentiates
    // through the axis-angle-to-matrix map).
    let gt_rot = crate::geometry::axis_angle_to_matrix(&AxisAngle::new(0.4, -0.2, 0.7));
    let gt_coords: Vec<f64> = (0..COORD_OUTPUT).map(|i| (i as f64 * 0.13).sin()).collect();

    let coord_net: Network<f64> =
        Network::init(build_poseprior_stream(COORD_OUTPUT, 0.25).spec, mix(seed, 11)).unwrap();
    let view_net: Network<f64> =
        Network::init(build_poseprior_stream(VIEWPOINT_OUTPUT, 0.25).spec, mix(seed, 12)).unwrap();
    let maps = rand_input(&[SCOREMAP_SIZE, SCOREMAP_SIZE, 21], mix(seed, 13));

    let coord_loss = {
        let gt = gt_coords.clone();
        Box::new(move |out: &[f64]| l2_loss(out, &gt).unwrap())
    };
    let view_loss = Box::new(move |out: &[f64]| {
        let aa = AxisAngle::new(out[0], out[1], out[2]);
        let (rot, jac) = crate::geometry::axis_angle_to_matrix_with_jacobian(&aa);
        let mut loss = 0.0;
        let mut grad = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d = rot.0[i][j] - gt_rot.0[i][j];
                loss += d * d;
                for (axis, g) in grad.iter_mut().enumerate() {
                    *g += 2.0 * d * jac[axis].0[i][j];
                }
            }
        }
        (loss, grad)
    });

    vec![
        CheckCase {
            name: "poseprior-coord-stream".into(),
            net: coord_net,
            input: maps.clone(),
            aux: Some(vec![1.0, 0.0]),
            loss: coord_loss,
            samples: 120,
        },
        CheckCase {
            name: "poseprior-viewpoint-stream(rodrigues)".into(),
            net: view_net,
            input: maps,
            aux: Some(vec![0.0, 1.0]),
            loss: view_loss,
            samples: 120,
        },
    ]
}

fn gesturenet_cases(seed: u64) -> Vec<CheckCase> {
    vec![CheckCase {
        name: "gesturenet(softmax)".into(),
        net: Network::init(crate::models::build_gesturenet().spec, mix(seed, 21)).unwrap(),
        input: rand_input(&[COORD_OUTPUT], mix(seed, 22)),
        aux: None,
        loss: Box::new(|out: &[f64]| {
            softmax_cross_entropy(out, 1, GESTURE_CLASSES, &[7]).unwrap()
        }),
        samples: 100,
    }]
}

/// Tolerance for gradient checks in double precision.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let mut cases = Vec::new();
    match args.arch.as_str() {
        "all" => {
            cases.extend(layer_cases(args.seed));
            cases.extend(poseprior_cases(args.seed));
            cases.extend(gesturenet_cases(args.seed));
        }
        "layers" => cases.extend(layer_cases(args.seed)),
        "poseprior" => cases.extend(poseprior_cases(args.seed)),
        "gesturenet" => cases.extend(gesturenet_cases(args.seed)),
        other => {
            return Err(CliError::Validation(format!(
                "unknown gradcheck component {other:?}"
            )))
        }
    }

    let fault = if args.corrupt_gradient { 1e-2 } else { 0.0 };
    let mut all_ok = true;
    for case in &mut cases {
        let report = gradient_check_with(
            &mut case.net,
            &case.input,
            case.aux.as_deref(),
            case.loss.as_ref(),
            case.samples,
            args.seed,
            fault,
        );
        let ok = report.max_rel_error < GRADCHECK_TOLERANCE;
        all_ok &= ok;
        println!(
            "{:<42} max relative error {:.3e} over {} parameters: {}",
            case.name,
            report.max_rel_error,
            report.checked,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Runtime("gradient checks failed".into()))
    }
}
