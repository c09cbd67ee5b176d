use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use posedpp::augment::WarpConfig;
use posedpp::harness::{
    diversity_report, load_annotations, pck_score_with, run_schedule, write_warped_exemplars,
    AugmentationConfig, Dataset, ExperimentSchedule, MemoryConfig, Predictions, ReferenceLength,
    DEFAULT_PCK_TAU,
};
use posedpp::kernel::{flatten_poses, KernelKind, Scaling};
use posedpp::manifest::MemoryManifest;
use posedpp::memory::{select_exemplars, SamplerStrategy, StrategyKind, DEFAULT_GAMMA};
use posedpp::{Error, PoseInstance, Result};

const DEFAULT_ORDER: [&str; 5] = ["cat", "horse", "cow", "dog", "sheep"];

#[derive(Parser, Debug)]
#[command(
    name = "posedpp",
    version,
    about = "Diverse exemplar selection for class-incremental pose estimation"
)]
struct Cli {
    /// Base random seed; overrides the seed in a schedule config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: a schedule for `run`, warp settings for `augment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for manifests, tables and images.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct StrategyArgs {
    /// rbf-kdpp, clustered-kdpp, random, herding, reservoir or greedy-balanced.
    #[arg(long, default_value = "rbf-kdpp")]
    strategy: String,
    /// RBF bandwidth for rbf-kdpp.
    #[arg(long)]
    gamma: Option<f64>,
}

impl StrategyArgs {
    fn kind(&self) -> Result<StrategyKind> {
        StrategyKind::parse(&self.strategy, self.gamma)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select exemplars for one class.
    Select {
        /// COCO-style annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// Class label to select from.
        #[arg(long)]
        class: String,
        /// Number of exemplars to keep.
        #[arg(short = 'n', long)]
        count: usize,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Run a class-incremental schedule and write per-step manifests.
    Run {
        /// COCO-style annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// Fixed memory budget used when no --config is given.
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Write limb-warped copies of exemplar images with sidecar annotations.
    Augment {
        /// COCO-style annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// Directory that image file names resolve against.
        #[arg(long)]
        images: PathBuf,
        /// Restrict to the exemplars in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Square-crop each instance to this size before warping.
        #[arg(long)]
        crop_size: Option<usize>,
    },
    /// PCK of a prediction file against ground truth.
    Score {
        /// COCO-style annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// JSON list of {"id", "keypoints": [x, y, v, ...]}.
        #[arg(long)]
        predictions: PathBuf,
        /// Threshold as a fraction of the reference length.
        #[arg(long, default_value_t = DEFAULT_PCK_TAU)]
        tau: f64,
        /// Use the bbox diagonal instead of its longer side.
        #[arg(long)]
        diagonal: bool,
    },
    /// Diversity metrics of the exemplars stored in a manifest.
    Report {
        /// COCO-style annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// Memory manifest written by `run`.
        #[arg(long)]
        manifest: PathBuf,
        /// linear or rbf; defaults to the manifest strategy's kernel.
        #[arg(long)]
        kernel: Option<String>,
        /// RBF bandwidth when the kernel is rbf.
        #[arg(long)]
        gamma: Option<f64>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn instances_of(dataset: &Dataset, class: &str) -> Result<Vec<PoseInstance>> {
    dataset
        .by_class()
        .remove(class)
        .ok_or_else(|| Error::Config(format!("class {class:?} is not in the dataset")))
}

fn cmd_select(
    cli: &Cli,
    annotations: &Path,
    class: &str,
    count: usize,
    strategy: &StrategyArgs,
) -> Result<()> {
    let dataset = load_annotations(annotations)?;
    let instances = instances_of(&dataset, class)?;
    let sampler = SamplerStrategy::new(strategy.kind()?, cli.seed.unwrap_or(0));
    let selection = select_exemplars(&instances, count, &sampler)?;
    let out = json!({
        "class": class,
        "strategy": sampler,
        "requested": count,
        "available": instances.len(),
        "rank_fallback": selection.rank_fallback,
        "ids": selection.ids,
    });
    if let Some(dir) = &cli.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("selection.json"), &out)?;
    }
    print_json(&out)
}

fn cmd_run(cli: &Cli, annotations: &Path, budget: usize, strategy: &StrategyArgs) -> Result<()> {
    let dataset = load_annotations(annotations)?;
    let mut schedule = match &cli.config {
        Some(path) => ExperimentSchedule::load(path)?,
        None => ExperimentSchedule::one_class_per_step(
            &DEFAULT_ORDER,
            MemoryConfig::Fixed { budget },
            strategy.kind()?,
            0,
        ),
    };
    if let Some(seed) = cli.seed {
        schedule.seed = seed;
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let reports = run_schedule(&dataset, &schedule, Some(&out_dir))?;
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "step": r.step,
                "classes_seen": r.classes_seen,
                "per_class_counts": r.per_class_counts,
                "total": r.total_stored(),
                "augmented": r.augmented,
                "rank_fallbacks": r.rank_fallbacks,
                "wall_time_secs": r.wall_time_secs,
                "manifest": r.manifest_path,
            })
        })
        .collect();
    write_json(&out_dir.join("reports.json"), &reports)?;
    print_json(&summary)
}

fn cmd_augment(
    cli: &Cli,
    annotations: &Path,
    images: &Path,
    manifest: Option<&Path>,
    crop_size: Option<usize>,
) -> Result<()> {
    let dataset = load_annotations(annotations)?;
    let config: WarpConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("warp config: {e}")))?
        }
        None => WarpConfig::default(),
    };
    let instances: Vec<PoseInstance> = match manifest {
        Some(path) => {
            let lookup = dataset.lookup();
            let memory = MemoryManifest::read(path)?.to_memory(&lookup)?;
            memory
                .classes()
                .flat_map(|c| memory.exemplars(c).unwrap_or_default().to_vec())
                .collect()
        }
        None => dataset.instances.clone(),
    };
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("augmented"));
    let cfg = AugmentationConfig {
        image_dir: images.to_path_buf(),
        crop_size,
        warp: config,
    };
    let records = write_warped_exemplars(&cfg, &instances, cli.seed.unwrap_or(0), 0, &out_dir)?;
    let written: BTreeSet<&str> = records
        .iter()
        .map(|r| r.id.trim_end_matches("_warp"))
        .collect();
    let skipped: Vec<&str> = instances
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !written.contains(id))
        .collect();
    print_json(&json!({"written": records.len(), "skipped_no_visible_limb": skipped}))
}

fn parse_predictions(path: &Path, joints: usize) -> Result<Predictions> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let raw: Vec<Value> =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("predictions: {e}")))?;
    let mut out = Predictions::new();
    for (pos, rec) in raw.iter().enumerate() {
        let id = match rec.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(v @ Value::Number(_)) => v.to_string(),
            _ => return Err(Error::Parse(format!("prediction #{pos}: missing id"))),
        };
        let values: Vec<f64> = rec
            .get("keypoints")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| {
                Error::Parse(format!("prediction #{pos} (id {id}): missing keypoints"))
            })?;
        let stride = if values.len() == 3 * joints {
            3
        } else if values.len() == 2 * joints {
            2
        } else {
            return Err(Error::Schema(format!(
                "prediction #{pos} (id {id}): expected {} or {} values, found {}",
                3 * joints,
                2 * joints,
                values.len()
            )));
        };
        out.insert(
            id,
            values.chunks_exact(stride).map(|c| [c[0], c[1]]).collect(),
        );
    }
    Ok(out)
}

fn cmd_score(
    cli: &Cli,
    annotations: &Path,
    predictions: &Path,
    tau: f64,
    diagonal: bool,
) -> Result<()> {
    let dataset = load_annotations(annotations)?;
    let preds = parse_predictions(predictions, posedpp::pose::ANIMAL_POSE_JOINTS)?;
    let reference = if diagonal {
        ReferenceLength::BboxDiagonal
    } else {
        ReferenceLength::BboxMaxSide
    };
    let report = pck_score_with(&preds, &dataset.instances, tau, reference)?;
    if report.missing_predictions > 0 {
        eprintln!(
            "warning: {} instances had no prediction",
            report.missing_predictions
        );
    }
    let per_class: BTreeMap<&str, Value> = report
        .per_class
        .iter()
        .map(|(c, n)| {
            (
                c.as_str(),
                json!({"pck": n.score(), "correct": n.correct, "visible": n.visible}),
            )
        })
        .collect();
    let out = json!({
        "tau": tau,
        "overall": report.overall.score(),
        "per_class": per_class,
        "missing_predictions": report.missing_predictions,
    });
    if let Some(dir) = &cli.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("pck.json"), &out)?;
    }
    print_json(&out)
}

fn cmd_report(
    cli: &Cli,
    annotations: &Path,
    manifest: &Path,
    kernel: Option<&str>,
    gamma: Option<f64>,
) -> Result<()> {
    let dataset = load_annotations(annotations)?;
    let manifest = MemoryManifest::read(manifest)?;
    let memory = manifest.to_memory(&dataset.lookup())?;
    let kind = match kernel {
        Some("linear") => KernelKind::Linear,
        Some("rbf") => KernelKind::Rbf {
            gamma: gamma.unwrap_or(DEFAULT_GAMMA),
        },
        Some(other) => return Err(Error::Config(format!("unknown kernel {other:?}"))),
        None => match manifest.strategy.kind {
            StrategyKind::RbfKdpp { gamma } => KernelKind::Rbf { gamma },
            StrategyKind::ClusteredKdpp => KernelKind::Linear,
            _ => KernelKind::Rbf {
                gamma: gamma.unwrap_or(DEFAULT_GAMMA),
            },
        },
    };
    let mut per_class = BTreeMap::new();
    for class in memory.classes() {
        let items = memory.exemplars(class).unwrap_or_default();
        if items.is_empty() {
            continue;
        }
        let features = flatten_poses(items, Scaling::BboxNormalized)?;
        let all: Vec<usize> = (0..items.len()).collect();
        per_class.insert(class.to_string(), diversity_report(&features, &all, kind)?);
    }
    let out = json!({"step": manifest.step, "kernel": kind, "per_class": per_class});
    if let Some(dir) = &cli.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("diversity.json"), &out)?;
    }
    print_json(&out)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Select {
            annotations,
            class,
            count,
            strategy,
        } => cmd_select(cli, annotations, class, *count, strategy),
        Command::Run {
            annotations,
            budget,
            strategy,
        } => cmd_run(cli, annotations, *budget, strategy),
        Command::Augment {
            annotations,
            images,
            manifest,
            crop_size,
        } => cmd_augment(cli, annotations, images, manifest.as_deref(), *crop_size),
        Command::Score {
            annotations,
            predictions,
            tau,
            diagonal,
        } => cmd_score(cli, annotations, predictions, *tau, *diagonal),
        Command::Report {
            annotations,
            manifest,
            kernel,
            gamma,
        } => cmd_report(cli, annotations, manifest, kernel.as_deref(), *gamma),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
