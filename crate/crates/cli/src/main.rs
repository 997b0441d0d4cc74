use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proben::engine::{fuse_all, group_by_image, pool_all, FusionConfig, ScoreFusion};
use proben::io::{self, ReadOptions};
use proben::metrics::{breakdown, EvalOptions, Metric};
use proben::score_fusion::{fit_linear_weights, CalibrationParams, LinearFitOptions};
use proben::synth::{generate, ScenarioSpec};
use proben::tuning::{
    calibration_grid_search, linear_training_examples, linspace, modalities_of, Objective,
};
use proben::{
    estimate_class_prior, BoxFusion, ClassPrior, Detection, Error, GroundTruthSet, Result,
};

#[derive(Parser)]
#[command(
    name = "proben",
    version,
    about = "Late fusion of multimodal object detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse detection files from several modalities into one.
    Fuse(FuseArgs),
    /// Evaluate detections against ground truth (AP, LAMR).
    Eval(EvalArgs),
    /// Grid-search temperature and shift for one modality.
    Calibrate(CalibrateArgs),
    /// Generate a seeded synthetic multimodal dataset.
    Synth(SynthArgs),
    /// Fit per-modality, per-class linear fusion weights.
    FitWeights(FitArgs),
}

#[derive(Args)]
struct FusionArgs {
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// max, avg-posteriors, avg-logits, proben or linear.
    #[arg(long, default_value = "proben")]
    score_fusion: ScoreFusion,
    /// argmax, avg, s-avg or v-avg.
    #[arg(long, default_value = "argmax")]
    box_fusion: BoxFusion,
    /// `uniform` or `counted:<background prior>` (needs ground truth).
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Logit temperature as MODALITY=T; repeatable.
    #[arg(long, value_name = "MODALITY=T")]
    temperature: Vec<String>,
    /// Foreground logit shift as MODALITY=B; repeatable.
    #[arg(long, value_name = "MODALITY=B")]
    shift: Vec<String>,
    /// Linear fusion weights (JSON).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// Detection files (newline-delimited JSON).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Modality tag overriding the records: once for all inputs or once per input.
    #[arg(long)]
    modality: Vec<String>,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fusion: FusionArgs,
    /// Ground truth, only needed for a counted prior.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output the pooled union of the inputs instead of fusing.
    #[arg(long)]
    pool: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Detection file to score.
    detections: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "both")]
    metric: Metric,
    /// Report day/night (and any other tag) separately.
    #[arg(long)]
    breakdown: bool,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Turn objects shorter than this (pixels) into ignore regions.
    #[arg(long)]
    min_height: Option<f64>,
    /// Write PREFIX_pr.csv and PREFIX_mr.csv as well.
    #[arg(long)]
    curves: bool,
    /// Writes PREFIX.json and PREFIX.txt.
    #[arg(short, long, value_name = "PREFIX")]
    output: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fusion: FusionArgs,
    #[arg(long)]
    gt: PathBuf,
    /// Modality whose logits are calibrated.
    #[arg(long)]
    calibrate_modality: String,
    /// Temperature grid as LO:HI:STEPS.
    #[arg(long, default_value = "0.5:5:19", allow_hyphen_values = true)]
    t_grid: String,
    /// Shift grid as LO:HI:STEPS.
    #[arg(long, default_value = "0:0:1", allow_hyphen_values = true)]
    b_grid: String,
    #[arg(long, default_value = "lamr")]
    objective: Objective,
    /// Objective surface (CSV).
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Best parameters (JSON).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Scenario specification (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long, conflicts_with = "spec")]
    modalities: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(short, long)]
    output: PathBuf,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_assignment(text: &str, flag: &str) -> Result<(String, f64)> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| config_error(format!("--{flag} expects MODALITY=VALUE, got {text:?}")))?;
    let value = value
        .parse()
        .map_err(|_| config_error(format!("--{flag}: {value:?} is not a number")))?;
    Ok((name.to_string(), value))
}

fn parse_grid(text: &str, flag: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || config_error(format!("--{flag} expects LO:HI:STEPS, got {text:?}"));
    let [lo, hi, steps] = parts[..] else {
        return Err(bad());
    };
    linspace(
        lo.parse().map_err(|_| bad())?,
        hi.parse().map_err(|_| bad())?,
        steps.parse().map_err(|_| bad())?,
    )
}

fn read_inputs(input: &InputArgs) -> Result<(Option<usize>, Vec<Detection<f64>>)> {
    match input.modality.len() {
        0 => io::read_detection_files(&input.inputs, None),
        1 => io::read_detection_files(&input.inputs, Some(&input.modality[0])),
        n if n == input.inputs.len() => {
            let mut k: Option<usize> = None;
            let mut all = Vec::new();
            for (path, tag) in input.inputs.iter().zip(&input.modality) {
                let options = ReadOptions {
                    modality: Some(tag.clone()),
                    first_det_id: all.len() as u64,
                };
                let file = io::read_detections::<f64>(path, &options)?;
                if let (Some(a), Some(b)) = (k, file.num_classes) {
                    if a != b {
                        return Err(config_error(format!(
                            "{} has {b} classes, earlier inputs {a}",
                            path.display()
                        )));
                    }
                }
                k = k.or(file.num_classes);
                all.extend(file.detections);
            }
            Ok((k, all))
        }
        n => Err(config_error(format!(
            "--modality given {n} times for {} inputs",
            input.inputs.len()
        ))),
    }
}

fn check_classes(k: Option<usize>, gt: &GroundTruthSet<f64>) -> Result<()> {
    match k {
        Some(k) if k != gt.num_classes => Err(config_error(format!(
            "detections have {k} classes but the ground truth declares {}",
            gt.num_classes
        ))),
        _ => Ok(()),
    }
}

fn build_config(
    args: &FusionArgs,
    gt: Option<&GroundTruthSet<f64>>,
    k: Option<usize>,
) -> Result<FusionConfig<f64>> {
    let mut config = FusionConfig::new(args.score_fusion, args.box_fusion);
    config.iou_threshold = args.iou_threshold;

    let mut calibration: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for t in &args.temperature {
        let (m, v) = parse_assignment(t, "temperature")?;
        calibration.entry(m).or_insert((1.0, 0.0)).0 = v;
    }
    for b in &args.shift {
        let (m, v) = parse_assignment(b, "shift")?;
        calibration.entry(m).or_insert((1.0, 0.0)).1 = v;
    }
    for (m, (t, b)) in calibration {
        config.calibration.insert(m, CalibrationParams::new(t, b)?);
    }

    config.prior = match args.prior.as_str() {
        "uniform" => None,
        other => {
            let bg = other
                .strip_prefix("counted:")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    config_error(format!(
                        "--prior expects uniform or counted:<bg>, got {other:?}"
                    ))
                })?;
            let gt = gt.ok_or_else(|| config_error("a counted prior needs --gt"))?;
            let prior: ClassPrior<f64> = estimate_class_prior(&gt.objects, gt.num_classes, bg)?;
            Some(prior)
        }
    };
    if let (Some(p), Some(k)) = (&config.prior, k) {
        if p.len() != k + 1 {
            return Err(config_error(
                "prior and detections disagree on the class count",
            ));
        }
    }

    if let Some(path) = &args.weights {
        config.weights = Some(io::read_weights(path)?);
    }
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fuse_cmd(args: FuseArgs) -> Result<()> {
    let (k, dets) = read_inputs(&args.input)?;
    let gt = args
        .gt
        .as_deref()
        .map(io::read_ground_truth::<f64>)
        .transpose()?;
    if let Some(gt) = &gt {
        check_classes(k, gt)?;
    }
    let k = k.or(gt.as_ref().map(|g| g.num_classes)).unwrap_or_else(|| {
        log::warn!("inputs are empty; writing a single-class header");
        1
    });
    let out = if args.pool {
        pool_all(&dets)
    } else {
        let config = build_config(&args.fusion, gt.as_ref(), Some(k))?;
        fuse_all(&dets, &config)?
    };
    write_text(&args.output, &io::detections_to_string(&out, k))?;

    let inputs = group_by_image(&dets);
    let outputs = group_by_image(&out);
    println!("image\tinput\toutput");
    for (image, ds) in &inputs {
        println!(
            "{image}\t{}\t{}",
            ds.len(),
            outputs.get(image).map_or(0, Vec::len)
        );
    }
    println!("total\t{}\t{}", dets.len(), out.len());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let file = io::read_detections::<f64>(&args.detections, &ReadOptions::default())?;
    let gt = io::read_ground_truth::<f64>(&args.gt)?;
    check_classes(file.num_classes, &gt)?;
    if !(args.iou_threshold > 0.0 && args.iou_threshold < 1.0) {
        return Err(config_error("--iou-threshold must lie in (0, 1)"));
    }
    let options = EvalOptions {
        iou_threshold: args.iou_threshold,
        metric: args.metric,
        breakdown: args.breakdown,
        min_height: args.min_height,
    };
    let report = breakdown(&file.detections, &gt, &options);
    write_text(
        &with_suffix(&args.output, ".json"),
        &io::report_to_json(&report),
    )?;
    let text = report.to_text();
    write_text(&with_suffix(&args.output, ".txt"), &text)?;
    if args.curves {
        write_text(
            &with_suffix(&args.output, "_pr.csv"),
            &io::pr_curves_csv(&report),
        )?;
        write_text(
            &with_suffix(&args.output, "_mr.csv"),
            &io::miss_rate_csv(&report),
        )?;
    }
    print!("{text}");
    Ok(())
}

fn calibrate_cmd(args: CalibrateArgs) -> Result<()> {
    let temperatures = parse_grid(&args.t_grid, "t-grid")?;
    let shifts = parse_grid(&args.b_grid, "b-grid")?;
    let (k, dets) = read_inputs(&args.input)?;
    let gt = io::read_ground_truth::<f64>(&args.gt)?;
    check_classes(k, &gt)?;
    let config = build_config(&args.fusion, Some(&gt), k)?;
    let search = calibration_grid_search(
        &dets,
        &gt,
        &config,
        &args.calibrate_modality,
        &temperatures,
        &shifts,
        args.objective,
    )?;
    if let Some(path) = &args.surface {
        write_text(path, &search.to_csv())?;
    }
    if let Some(path) = &args.output {
        let mut json = serde_json::to_string_pretty(&serde_json::json!({
            "modality": search.modality,
            "objective": search.objective,
            "temperature": search.best.temperature,
            "shift": search.best.shift,
            "value": search.best.objective,
        }))
        .expect("plain data serializes");
        json.push('\n');
        write_text(path, &json)?;
    }
    println!(
        "{}: temperature {} shift {} ({} {:.6}) over {} grid points",
        search.modality,
        search.best.temperature,
        search.best.shift,
        search.objective,
        search.best.objective,
        search.surface.len()
    );
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => io::read_spec(path)?,
        None => ScenarioSpec::preset(
            args.preset.as_deref().unwrap_or("kaist-like"),
            args.modalities.unwrap_or(2),
            args.seed.unwrap_or(0),
            args.images.unwrap_or(1000),
        )?,
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(images) = args.images {
        spec.image_count = images;
    }
    let dataset = generate(&spec)?;
    let files = io::write_dataset(&args.output, &spec, &dataset)?;
    let gt = &dataset.ground_truth;
    let tagged = |t: &str| {
        gt.images
            .values()
            .filter(|v| v.as_deref() == Some(t))
            .count()
    };
    println!(
        "images {} (day {}, night {}), objects {} (ignored {})",
        gt.images.len(),
        tagged("day"),
        tagged("night"),
        gt.objects.len(),
        gt.objects.iter().filter(|g| g.ignore).count()
    );
    for ((name, dets), path) in dataset.detections.iter().zip(&files) {
        println!("{name}: {} detections -> {}", dets.len(), path.display());
    }
    Ok(())
}

fn fit_cmd(args: FitArgs) -> Result<()> {
    let (k, dets) = read_inputs(&args.input)?;
    let gt = io::read_ground_truth::<f64>(&args.gt)?;
    check_classes(k, &gt)?;
    let mut config = FusionConfig::nms();
    config.iou_threshold = args.iou_threshold;
    config.validate()?;
    let modalities = modalities_of(&dets);
    let examples = linear_training_examples(&dets, &gt, &config, &modalities)?;
    let fit = fit_linear_weights(
        &modalities,
        &examples,
        LinearFitOptions {
            step: args.step,
            iterations: args.iterations,
        },
    )?;
    if fit.single_label {
        log::warn!("training clusters carry a single label; weights are not informative");
    }
    write_text(&args.output, &io::weights_to_string(&fit.weights))?;
    println!(
        "{} clusters, modalities {}, loss {:.6} -> {:.6}",
        examples.len(),
        modalities.join(","),
        fit.loss_history.first().copied().unwrap_or(f64::NAN),
        fit.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse(a) => fuse_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::FitWeights(a) => fit_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(3);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_parse() { 2 } else { 3 })
        }
    }
}
