//! Class-incremental schedule execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{write_annotations, Dataset};
use super::metrics::{diversity_report, DiversityMetrics};
use crate::augment::{square_crop, warp_augment, ImageGrid, Skeleton, WarpConfig};
use crate::error::{Error, Result};
use crate::kernel::{flatten_poses, KernelKind, Scaling};
use crate::manifest::MemoryManifest;
use crate::memory::{
    derive_seed, growing_update, update_memory, ExemplarMemory, SamplerStrategy, StrategyKind,
    DEFAULT_GAMMA,
};
use crate::pose::PoseInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MemoryConfig {
    Fixed { budget: usize },
    Growing { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Directory that `image_ref` paths are resolved against.
    pub image_dir: PathBuf,
    /// Side of the square crop fed to the warp; no cropping when absent.
    #[serde(default)]
    pub crop_size: Option<usize>,
    #[serde(default, flatten)]
    pub warp: WarpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSchedule {
    pub base_classes: Vec<String>,
    #[serde(default)]
    pub steps: Vec<Vec<String>>,
    pub memory: MemoryConfig,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub augmentation: Option<AugmentationConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSchedule {
    /// One base class and one new class per step, in the given order.
    pub fn one_class_per_step(
        order: &[&str],
        memory: MemoryConfig,
        strategy: StrategyKind,
        seed: u64,
    ) -> Self {
        ExperimentSchedule {
            base_classes: order.iter().take(1).map(|s| s.to_string()).collect(),
            steps: order.iter().skip(1).map(|s| vec![s.to_string()]).collect(),
            memory,
            strategy,
            augmentation: None,
            seed,
        }
    }

    pub fn sampler(&self) -> SamplerStrategy {
        SamplerStrategy::new(self.strategy, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_classes.is_empty() {
            return Err(Error::Config(
                "schedule needs at least one base class".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in self.base_classes.iter().chain(self.steps.iter().flatten()) {
            if !seen.insert(c.as_str()) {
                return Err(Error::Config(format!("class {c:?} is scheduled twice")));
            }
        }
        if let Some(empty) = self.steps.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("step {} adds no classes", empty + 1)));
        }
        match self.memory {
            MemoryConfig::Fixed { budget: 0 } => {
                Err(Error::Config("fixed memory needs a budget > 0".into()))
            }
            MemoryConfig::Growing { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(Error::Config(format!(
                    "growing fraction must lie in (0, 1], got {fraction}"
                )))
            }
            _ => self
                .sampler()
                .validate()
                .map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schedule: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Kernel used for the diversity metrics.
    pub fn report_kernel(&self) -> KernelKind {
        match self.strategy {
            StrategyKind::RbfKdpp { gamma } => KernelKind::Rbf { gamma },
            StrategyKind::ClusteredKdpp => KernelKind::Linear,
            _ => KernelKind::Rbf {
                gamma: DEFAULT_GAMMA,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub classes_seen: Vec<String>,
    pub per_class_counts: BTreeMap<String, usize>,
    /// `None` for classes with nothing stored.
    pub diversity: BTreeMap<String, Option<DiversityMetrics>>,
    pub wall_time_secs: f64,
    pub manifest_path: Option<PathBuf>,
    pub augmented: usize,
    /// Selections in this step that hit the kernel-rank fallback.
    pub rank_fallbacks: usize,
}

impl StepReport {
    pub fn total_stored(&self) -> usize {
        self.per_class_counts.values().sum()
    }
}

fn diversity_of(items: &[PoseInstance], kernel: KernelKind) -> Result<Option<DiversityMetrics>> {
    if items.is_empty() {
        return Ok(None);
    }
    let features = flatten_poses(items, Scaling::BboxNormalized)?;
    let all: Vec<usize> = (0..items.len()).collect();
    diversity_report(&features, &all, kernel).map(Some)
}

/// Writes one limb-warped PNG per instance into `dir` plus an
/// `annotations.json` sidecar with the rotated keypoints. Instances without a
/// fully visible limb are skipped. Returns the written records.
pub fn write_warped_exemplars(
    cfg: &AugmentationConfig,
    items: &[PoseInstance],
    seed: u64,
    step: usize,
    dir: &Path,
) -> Result<Vec<PoseInstance>> {
    let skeleton = Skeleton::animal_pose();
    fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for p in items {
        let path = cfg.image_dir.join(&p.image_ref);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "image {} for {} not found",
                path.display(),
                p.id
            )));
        }
        let mut img = ImageGrid::load(&path)?;
        let mut pose = p.clone();
        if let Some(size) = cfg.crop_size {
            (img, pose) = square_crop(&img, &p.bbox, size, p)?;
        }
        if pose.num_joints() != skeleton.num_joints() {
            continue;
        }
        let Some(sample) = warp_augment(
            &img,
            &pose,
            &skeleton,
            &cfg.warp,
            derive_seed(seed, &p.id, step),
        )?
        else {
            continue;
        };
        let name = format!("{}_warp.png", sanitize(&p.id));
        sample.image.save(&dir.join(&name))?;
        let mut record = sample.pose;
        record.id = format!("{}_warp", p.id);
        record.image_ref = name;
        records.push(record);
    }
    write_annotations(&dir.join("annotations.json"), &records)?;
    Ok(records)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs the schedule: base classes first, then one memory update per step.
/// When `out_dir` is given, writes `manifest_step{i}.json` per step, a
/// `metrics.csv` table and `plots/*.dat` series.
pub fn run_schedule(
    dataset: &Dataset,
    schedule: &ExperimentSchedule,
    out_dir: Option<&Path>,
) -> Result<Vec<StepReport>> {
    schedule.validate()?;
    let by_class = dataset.by_class();
    for c in schedule
        .base_classes
        .iter()
        .chain(schedule.steps.iter().flatten())
    {
        if !by_class.contains_key(c) {
            return Err(Error::Config(format!("class {c:?} is not in the dataset")));
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let sampler = schedule.sampler();
    let kernel = schedule.report_kernel();
    let mut memory = match schedule.memory {
        MemoryConfig::Fixed { budget } => ExemplarMemory::fixed(budget)?,
        MemoryConfig::Growing { fraction } => ExemplarMemory::growing(fraction)?,
    };

    let groups = std::iter::once(&schedule.base_classes).chain(schedule.steps.iter());
    let mut reports = Vec::new();
    for (step, group) in groups.enumerate() {
        let started = Instant::now();
        let new_data: BTreeMap<String, Vec<PoseInstance>> = group
            .iter()
            .map(|c| (c.clone(), by_class[c].clone()))
            .collect();
        let fallbacks_before = memory.rank_fallbacks();
        memory = match schedule.memory {
            MemoryConfig::Fixed { .. } => update_memory(&memory, &new_data, &sampler)?,
            MemoryConfig::Growing { fraction } => {
                growing_update(&memory, &new_data, fraction, &sampler)?
            }
        };

        let mut diversity = BTreeMap::new();
        for class in memory.classes() {
            let items = memory.exemplars(class).unwrap_or_default();
            diversity.insert(class.to_string(), diversity_of(items, kernel)?);
        }

        let mut augmented = 0;
        let mut manifest_path = None;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("manifest_step{step}.json"));
            MemoryManifest::from_memory(&memory, &sampler).write(&path)?;
            manifest_path = Some(path);
            if let Some(cfg) = &schedule.augmentation {
                for class in group {
                    let items = memory.exemplars(class).unwrap_or_default();
                    let target = dir.join("augmented").join(format!("step{step}"));
                    augmented +=
                        write_warped_exemplars(cfg, items, schedule.seed, step, &target)?.len();
                }
            }
        }

        reports.push(StepReport {
            step,
            classes_seen: memory.classes().map(str::to_string).collect(),
            per_class_counts: memory.counts(),
            diversity,
            wall_time_secs: started.elapsed().as_secs_f64(),
            manifest_path,
            augmented,
            rank_fallbacks: memory.rank_fallbacks() - fallbacks_before,
        });
    }

    if let Some(dir) = out_dir {
        write_metrics_csv(&dir.join("metrics.csv"), &reports)?;
        write_plot_series(&dir.join("plots"), &reports)?;
    }
    Ok(reports)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, reports: &[StepReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "class",
        "stored",
        "log_det",
        "degenerate",
        "mean_pairwise_distance",
        "min_pairwise_distance",
    ])?;
    for r in reports {
        for (class, count) in &r.per_class_counts {
            let d = r.diversity.get(class).cloned().flatten();
            w.write_record([
                r.step.to_string(),
                class.clone(),
                count.to_string(),
                fmt_opt(d.as_ref().map(|m| m.log_det)),
                d.as_ref()
                    .map(|m| m.degenerate.to_string())
                    .unwrap_or_default(),
                fmt_opt(d.as_ref().and_then(|m| m.mean_pairwise_distance)),
                fmt_opt(d.as_ref().and_then(|m| m.min_pairwise_distance)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One `step<TAB>value` file per metric, for external plotting.
pub fn write_plot_series(dir: &Path, reports: &[StepReport]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mean = |r: &StepReport, f: &dyn Fn(&DiversityMetrics) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = r
            .diversity
            .values()
            .flatten()
            .filter_map(f)
            .filter(|v| v.is_finite())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    type Series = Box<dyn Fn(&StepReport) -> Option<f64>>;
    let series: [(&str, Series); 4] = [
        ("total_stored", Box::new(|r| Some(r.total_stored() as f64))),
        (
            "mean_log_det",
            Box::new(move |r| mean(r, &|m| Some(m.log_det))),
        ),
        (
            "mean_pairwise_distance",
            Box::new(move |r| mean(r, &|m| m.mean_pairwise_distance)),
        ),
        (
            "mean_min_pairwise_distance",
            Box::new(move |r| mean(r, &|m| m.min_pairwise_distance)),
        ),
    ];
    for (name, f) in series {
        let mut text = String::new();
        for r in reports {
            if let Some(v) = f(r) {
                writeln!(text, "{}\t{}", r.step, v).expect("writing to a String cannot fail");
            }
        }
        fs::write(dir.join(format!("{name}.dat")), text)?;
    }
    Ok(())
}
