//! `lift360` — turn camera segmentation into LiDAR pseudo-labels.
//!
//! Exit status: 0 on success, 1 on data or I/O errors, 2 on configuration
//! errors (bad flags, invalid config files, even K, ...).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use lift360::config::{read_config, PipelineConfig};
use lift360::eval::EvalSummary;
use lift360::geometry::{sector_mix, squeeze, translate_jitter, LabeledCloud, PerPointProbs};
use lift360::io::{
    read_class_map, read_cloud_bin, read_label_remap, read_labels, read_tensor, write_atomic, write_cloud_bin,
    write_labels, write_tensor, TensorFile,
};
use lift360::pipeline::{evaluate_files, label_pairs, Pipeline, PipelineReport, EVAL_CSV, PREDICTIONS};
use lift360::refine::RefineScheme;
use lift360::synth::{write_corpus, write_corpus_header, write_scene, CorpusSpec, SceneSpec, TeacherNoise};
use lift360::threshold::ThresholdMode;
use lift360::tta::{aggregate_tta, default_variants, emit_variants, greedy_soup, CommandEvaluator, WeightVector};
use lift360::Error;

#[derive(Parser)]
#[command(name = "lift360", version, about = "LiDAR pseudo-labels from a frozen image teacher")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Never changes outputs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Project scans into the camera(s) and lift the 2D probabilities.
    Lift,
    /// KNN refinement of the lifted predictions.
    Refine(RefineArgs),
    /// Corpus pass: class histogram of the refined labels.
    Stats,
    /// Apply confidence thresholds to the refined labels.
    Threshold(ThresholdArgs),
    /// Cut scans and pseudo-labels to the camera view.
    Slice,
    /// Dataset-level mIoU of label files against ground truth.
    Eval(EvalArgs),
    /// Test-time augmentation helpers.
    #[command(subcommand)]
    Tta(TtaCmd),
    /// Greedy weight soup over checkpoint vectors.
    Soup(SoupArgs),
    /// Random point-cloud augmentation of one scan.
    Augment(AugmentArgs),
    /// Generate a synthetic street corpus with a noisy teacher.
    Synth(SynthArgs),
    /// lift → refine → stats → threshold (→ eval when ground truth exists).
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct RefineArgs {
    /// Neighborhood size (odd).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    None,
    Majority,
    DistanceWeighted,
    ConfidenceAverage,
}

impl From<SchemeArg> for RefineScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::None => RefineScheme::None,
            SchemeArg::Majority => RefineScheme::Majority,
            SchemeArg::DistanceWeighted => RefineScheme::DistanceWeighted,
            SchemeArg::ConfidenceAverage => RefineScheme::ConfidenceAverage,
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    tau_max: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    ClassBalanced,
    Off,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted `.label` files.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory with the same relative layout.
    #[arg(long)]
    gt: PathBuf,
    /// Optional FOV masks (`.ptns`) with the same relative layout.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Class map; defaults to the config's.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Raw → train id remap applied to ground truth.
    #[arg(long)]
    remap: Option<PathBuf>,
    /// Also write the CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TtaCmd {
    /// Write the 12 standard variants of a scan plus `manifest.json`.
    Emit {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average N×C probability tensors (all-zero rows count as unseen).
    Aggregate {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct SoupArgs {
    /// Candidate weight vectors (1-D float32 PTNS).
    #[arg(long = "candidate", required = true)]
    candidates: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Scratch directory for trial weight files.
    #[arg(long)]
    scratch: Option<PathBuf>,
    /// Evaluation command; the weight file path is appended. Defaults to
    /// the config's `soup_command`.
    #[arg(last = true)]
    command: Vec<String>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    translate: f64,
    #[arg(long, num_args = 2, default_values_t = [0.9, 1.1])]
    squeeze: Vec<f64>,
    /// Swap a random azimuth sector with this scan (needs labels for both).
    #[arg(long, requires = "labels")]
    mix_cloud: Option<PathBuf>,
    #[arg(long, requires = "mix_cloud")]
    mix_labels: Option<PathBuf>,
    /// Number of classes for label validation.
    #[arg(long, default_value_t = u16::MAX as usize + 1)]
    num_classes: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 0.5)]
    border_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    body_rate: f64,
    /// Render this scene spec (JSON) as the only frame instead.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

impl Cli {
    fn load_config(&self) -> anyhow::Result<PipelineConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| config_error("this command needs --config <file>"))?;
        let mut cfg = read_config(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }

    fn pipeline(&self, tweak: impl FnOnce(&mut PipelineConfig)) -> anyhow::Result<Pipeline> {
        let mut cfg = self.load_config()?;
        tweak(&mut cfg);
        Ok(Pipeline::new(cfg)?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_config));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| config_error(format!("cannot start {j} workers: {e}")))?;
    }
    match &cli.command {
        Cmd::Lift => {
            let s = cli.pipeline(|_| {})?.lift()?;
            println!("lifted {} scans: {} of {} points in view", s.scans, s.in_view, s.points);
        }
        Cmd::Refine(a) => {
            let p = cli.pipeline(|c| apply_refine_flags(c, a.k, a.scheme))?;
            let changed = p.refine()?;
            println!("refined with {:?}, K={}: {changed} labels changed", p.cfg.refinement.scheme, p.cfg.refinement.k);
        }
        Cmd::Stats => {
            let p = cli.pipeline(|_| {})?;
            let h = p.stats()?;
            for (id, n) in h.counts().iter().enumerate() {
                println!("{id:>4} {:<16} {n}", p.classes.name(id as u16).unwrap_or("?"));
            }
        }
        Cmd::Threshold(a) => {
            let p = cli.pipeline(|c| {
                if let Some(m) = a.mode {
                    c.threshold.mode = match m {
                        ModeArg::Static => ThresholdMode::Static,
                        ModeArg::ClassBalanced => ThresholdMode::ClassBalanced,
                        ModeArg::Off => ThresholdMode::Off,
                    };
                }
                if let Some(t) = a.tau_min {
                    c.threshold.tau_min = t;
                }
                if let Some(t) = a.tau_max {
                    c.threshold.tau_max = t;
                }
            })?;
            let (taus, red) = p.threshold()?;
            for (id, t) in taus.iter().enumerate() {
                println!("{id:>4} {:<16} tau {t:.4}", p.classes.name(id as u16).unwrap_or("?"));
            }
            println!("removed {} of {} labels ({:.2}%)", red.removed, red.labeled, 100.0 * red.fraction());
        }
        Cmd::Slice => {
            let kept = cli.pipeline(|_| {})?.slice()?;
            println!("{kept} points in view");
        }
        Cmd::Eval(a) => cmd_eval(cli, a)?,
        Cmd::Tta(t) => cmd_tta(t)?,
        Cmd::Soup(a) => cmd_soup(cli, a)?,
        Cmd::Augment(a) => cmd_augment(cli, a)?,
        Cmd::Synth(a) => cmd_synth(cli, a)?,
        Cmd::Pipeline(a) => {
            let p = cli.pipeline(|c| apply_refine_flags(c, a.k, a.scheme))?;
            let report = p.run()?;
            print_report(&p, &report);
        }
    }
    Ok(())
}

fn apply_refine_flags(cfg: &mut PipelineConfig, k: Option<usize>, scheme: Option<SchemeArg>) {
    if let Some(k) = k {
        cfg.refinement.k = k;
    }
    if let Some(s) = scheme {
        cfg.refinement.scheme = s.into();
    }
}

fn print_report(p: &Pipeline, r: &PipelineReport) {
    println!(
        "lift: {} scans, {} of {} points in view",
        r.lift.scans, r.lift.in_view, r.lift.points
    );
    println!("refine: {} labels changed", r.changed);
    println!(
        "threshold: removed {} of {} labels ({:.2}%)",
        r.reduction.removed,
        r.reduction.labeled,
        100.0 * r.reduction.fraction()
    );
    if let Some(e) = &r.eval {
        print!("{}", e.to_text(Some(&p.classes)));
        println!("report: {}", p.layout.table(EVAL_CSV).display());
    } else {
        println!("no ground truth; skipped evaluation of {PREDICTIONS}");
    }
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<()> {
    let (classes, cfg_remap) = match (&a.classes, &cli.config) {
        (Some(path), _) => (read_class_map(path)?, None),
        (None, Some(_)) => {
            let cfg = cli.load_config()?;
            (read_class_map(&cfg.class_map)?, cfg.label_remap)
        }
        (None, None) => return Err(config_error("eval needs --classes or --config")),
    };
    let remap = a.remap.clone().or(cfg_remap).as_deref().map(read_label_remap).transpose()?;
    let pairs = label_pairs(&a.pred, &a.gt, a.mask.as_deref())?;
    let summary: EvalSummary = evaluate_files(&pairs, classes.len(), remap.as_ref())?;
    print!("{}", summary.to_text(Some(&classes)));
    println!("mIoU {:.6}", summary.iou.miou);
    if let Some(out) = &a.out {
        write_atomic(out, summary.to_csv(Some(&classes)).as_bytes())?;
    }
    Ok(())
}

/// N×C tensor to probabilities; all-zero rows are unseen points.
fn probs_from_tensor(t: &TensorFile, origin: &Path) -> anyhow::Result<PerPointProbs<f32>> {
    let [_, c] = t.shape::<2>().with_context(|| origin.display().to_string())?;
    let data = t.as_f32()?.to_vec();
    let masked = data.chunks(c.max(1)).map(|r| r.iter().all(|&v| v == 0.0)).collect();
    PerPointProbs::from_rows(c, data, masked).with_context(|| origin.display().to_string())
}

fn cmd_tta(t: &TtaCmd) -> anyhow::Result<()> {
    match t {
        TtaCmd::Emit { cloud, out } => {
            let c: lift360::PointCloud = read_cloud_bin(cloud)?;
            let source = cloud.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let (clouds, manifest) = emit_variants(&c, &default_variants(), &source);
            for (v, entry) in clouds.iter().zip(&manifest.variants) {
                write_cloud_bin(v, &out.join(&entry.file))?;
            }
            write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
            println!("wrote {} variants to {}", clouds.len(), out.display());
        }
        TtaCmd::Aggregate { out, inputs } => {
            let probs = inputs
                .iter()
                .map(|p| probs_from_tensor(&read_tensor(p)?, p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let mean = aggregate_tta(&probs)?;
            let t = TensorFile::f32(vec![mean.len() as u32, mean.num_classes() as u32], mean.to_f32_vec())?;
            write_tensor(&t, out)?;
            println!("averaged {} predictions of {} points", probs.len(), mean.len());
        }
    }
    Ok(())
}

fn cmd_soup(cli: &Cli, a: &SoupArgs) -> anyhow::Result<()> {
    let command = if a.command.is_empty() {
        cli.load_config()?.soup_command
    } else {
        a.command.clone()
    };
    let candidates = a
        .candidates
        .iter()
        .map(|p| WeightVector::from_tensor(&read_tensor(p)?).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let scratch = match &a.scratch {
        Some(s) => s.clone(),
        None => a.out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&scratch).with_context(|| scratch.display().to_string())?;
    let mut eval = CommandEvaluator::new(command, &scratch)?;
    let result = greedy_soup(&candidates, &mut eval)?;
    for step in &result.log {
        println!(
            "{} {:<40} solo {:.6} soup {:.6}",
            if step.accepted { "keep" } else { "drop" },
            a.candidates[step.candidate].display(),
            step.solo_metric,
            step.trial_metric
        );
    }
    println!("soup metric {:.6} after {} evaluations", result.metric, result.evaluations);
    write_tensor(&result.weights.to_tensor(), &a.out)?;
    write_atomic(
        &a.out.with_extension("json"),
        serde_json::to_string_pretty(&result.log)?.as_bytes(),
    )?;
    Ok(())
}

fn cmd_augment(cli: &Cli, a: &AugmentArgs) -> anyhow::Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let cloud: lift360::PointCloud = read_cloud_bin(&a.cloud)?;
    let range = (a.squeeze[0], a.squeeze[1]);
    let warp = |c: &lift360::PointCloud, salt: u64| -> anyhow::Result<lift360::PointCloud> {
        let moved = translate_jitter(c, seed ^ salt, a.translate)?;
        Ok(squeeze(&moved, seed ^ salt ^ 0x5153, range)?)
    };
    let out_cloud = a.out.join("cloud.bin");
    let out_labels = a.out.join("labels.label");
    match (&a.labels, &a.mix_cloud) {
        (Some(lp), Some(mc)) => {
            let Some(ml) = &a.mix_labels else {
                bail!(config_error("--mix-cloud needs --mix-labels"));
            };
            let first = LabeledCloud::new(cloud, read_labels(lp, a.num_classes, None)?)?;
            let other = LabeledCloud::new(read_cloud_bin(mc)?, read_labels(ml, a.num_classes, None)?)?;
            let widths = match &cli.config {
                Some(_) => cli.load_config()?.augmentation.sector_widths,
                None => Default::default(),
            };
            let (mixed, _) = sector_mix(&first, &other, seed, widths)?;
            write_cloud_bin(&warp(&mixed.cloud, 1)?, &out_cloud)?;
            write_labels(&mixed.labels, &out_labels)?;
        }
        (labels, _) => {
            write_cloud_bin(&warp(&cloud, 1)?, &out_cloud)?;
            if let Some(lp) = labels {
                write_labels(&read_labels(lp, a.num_classes, None)?, &out_labels)?;
            }
        }
    }
    info!("augmented scan written to {}", a.out.display());
    println!("{}", out_cloud.display());
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let noise = TeacherNoise::new(a.border_rate, a.body_rate)?;
    let corpus = CorpusSpec::new(a.scenes, cli.seed.unwrap_or(0), noise);
    let points = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
            let spec: SceneSpec = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            write_corpus_header(&a.out, &spec, &corpus)?;
            write_scene(&a.out, &spec, &corpus, 0)?
        }
        None => write_corpus(&a.out, &corpus)?,
    };
    let mut cfg = PipelineConfig::new(".", "classes.csv", "out");
    cfg.cameras = vec![corpus.camera];
    cfg.seed = corpus.seed;
    write_atomic(&a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    println!(
        "wrote {} scenes ({points} points) to {}; config at {}",
        if a.spec.is_some() { 1 } else { a.scenes },
        a.out.display(),
        a.out.join("config.json").display()
    );
    Ok(())
}
