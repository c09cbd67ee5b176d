//! Fixed-budget rehearsal memory and the exemplar samplers that fill it.
//!
//! In fixed mode every class keeps at most `⌊Γ / c⌋` exemplars, `c` being the
//! number of classes seen so far. Adding classes shrinks the old ones by
//! re-running the configured sampler over their stored exemplars; whatever is
//! dropped is tombstoned and may never come back.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::clustered_kdpp_select_detailed;
use crate::dpp::greedy_map_with_fill;
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, flatten_poses, KernelKind, Scaling};
use crate::pose::PoseInstance;

/// Default RBF bandwidth for the RBF k-DPP sampler.
pub const DEFAULT_GAMMA: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    RbfKdpp { gamma: f64 },
    ClusteredKdpp,
    Random,
    Herding,
    Reservoir,
    GreedyBalanced,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::RbfKdpp { .. } => "rbf-kdpp",
            StrategyKind::ClusteredKdpp => "clustered-kdpp",
            StrategyKind::Random => "random",
            StrategyKind::Herding => "herding",
            StrategyKind::Reservoir => "reservoir",
            StrategyKind::GreedyBalanced => "greedy-balanced",
        }
    }

    /// Parses the kebab-case strategy name; `gamma` only applies to `rbf-kdpp`.
    pub fn parse(name: &str, gamma: Option<f64>) -> Result<Self> {
        Ok(match name {
            "rbf-kdpp" => StrategyKind::RbfKdpp {
                gamma: gamma.unwrap_or(DEFAULT_GAMMA),
            },
            "clustered-kdpp" => StrategyKind::ClusteredKdpp,
            "random" => StrategyKind::Random,
            "herding" => StrategyKind::Herding,
            "reservoir" => StrategyKind::Reservoir,
            "greedy-balanced" => StrategyKind::GreedyBalanced,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerStrategy {
    #[serde(flatten)]
    pub kind: StrategyKind,
    pub seed: u64,
}

impl SamplerStrategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        SamplerStrategy { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if let StrategyKind::RbfKdpp { gamma } = self.kind {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Mixes a base seed with a class label and step so every class draws from
/// its own stream.
pub fn derive_seed(base: u64, label: &str, step: usize) -> u64 {
    // FNV-1a over the label, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn per_class_quota(budget: usize, classes_seen: usize) -> Result<usize> {
    if classes_seen == 0 {
        return Err(Error::Parameter("classes_seen must be >= 1".into()));
    }
    Ok(budget / classes_seen)
}

/// Ids picked by a sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub ids: Vec<String>,
    /// The k-DPP ran out of kernel rank and lowest-index items were appended.
    pub rank_fallback: bool,
}

fn positions_to_ids(instances: &[PoseInstance], positions: &[usize]) -> Vec<String> {
    positions.iter().map(|&p| instances[p].id.clone()).collect()
}

/// Selects `n` exemplars from one class. Returns every id when `n` covers
/// the whole class.
pub fn select_exemplars(
    instances: &[PoseInstance],
    n: usize,
    strategy: &SamplerStrategy,
) -> Result<Selection> {
    strategy.validate()?;
    if let Some(first) = instances.first() {
        if let Some(other) = instances
            .iter()
            .find(|p| p.class_label != first.class_label)
        {
            return Err(Error::Parameter(format!(
                "select_exemplars expects one class, got {:?} and {:?}",
                first.class_label, other.class_label
            )));
        }
    }
    if n >= instances.len() {
        return Ok(Selection {
            ids: instances.iter().map(|p| p.id.clone()).collect(),
            rank_fallback: false,
        });
    }
    if n == 0 {
        return Ok(Selection {
            ids: Vec::new(),
            rank_fallback: false,
        });
    }
    match strategy.kind {
        StrategyKind::RbfKdpp { gamma } => {
            let features = flatten_poses(instances, Scaling::BboxNormalized)?;
            let kernel = build_kernel(&features, KernelKind::Rbf { gamma })?;
            let picked = greedy_map_with_fill(&kernel, n)?;
            Ok(Selection {
                ids: positions_to_ids(instances, &picked.indices),
                rank_fallback: picked.rank_fallback,
            })
        }
        StrategyKind::ClusteredKdpp => {
            let features = flatten_poses(instances, Scaling::BboxNormalized)?;
            let picked = clustered_kdpp_select_detailed(&features, n, strategy.seed)?;
            Ok(Selection {
                ids: positions_to_ids(instances, &picked.indices),
                rank_fallback: picked.rank_fallback,
            })
        }
        kind => Ok(Selection {
            ids: baseline_select(instances, n, kind, strategy.seed)?,
            rank_fallback: false,
        }),
    }
}

/// Non-DPP samplers: random, herding, reservoir and greedy class balancing.
pub fn baseline_select(
    instances: &[PoseInstance],
    n: usize,
    kind: StrategyKind,
    seed: u64,
) -> Result<Vec<String>> {
    let len = instances.len();
    let n = n.min(len);
    let positions: Vec<usize> = match kind {
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, len, n).into_vec()
        }
        StrategyKind::Herding => {
            if n == 0 {
                return Ok(Vec::new());
            }
            let features = flatten_poses(instances, Scaling::BboxNormalized)?;
            herding_order(features.matrix())
                .into_iter()
                .take(n)
                .collect()
        }
        StrategyKind::Reservoir => reservoir(len, n, seed),
        StrategyKind::GreedyBalanced => (0..n).collect(),
        StrategyKind::RbfKdpp { .. } | StrategyKind::ClusteredKdpp => {
            return Err(Error::Parameter(format!(
                "{} is not a baseline strategy",
                kind.name()
            )))
        }
    };
    Ok(positions_to_ids(instances, &positions))
}

/// Row indices sorted by ascending distance to the mean row, lowest index
/// first on ties. Distances equal up to 1e-12 of the largest count as ties.
fn herding_order(x: &nalgebra::DMatrix<f64>) -> Vec<usize> {
    let n = x.nrows();
    let mean = x.row_mean();
    let dist: Vec<f64> = (0..n)
        .map(|i| {
            (0..x.ncols())
                .map(|d| (x[(i, d)] - mean[d]).powi(2))
                .sum::<f64>()
        })
        .collect();
    let scale = dist
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let key: Vec<f64> = dist.iter().map(|d| (d / scale * 1e12).round()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    order
}

/// Algorithm R over the stream `0..len`.
fn reservoir(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..n.min(len)).collect();
    for i in n..len {
        let j = rng.random_range(0..=i);
        if j < n {
            slots[j] = i;
        }
    }
    slots
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MemoryMode {
    Fixed,
    Growing { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    budget: usize,
    mode: MemoryMode,
    per_class: BTreeMap<String, Vec<PoseInstance>>,
    tombstones: BTreeSet<String>,
    /// Number of updates applied so far.
    step: usize,
    rank_fallbacks: usize,
}

impl ExemplarMemory {
    pub fn fixed(budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Parameter("fixed memory needs a budget > 0".into()));
        }
        Ok(Self::empty(budget, MemoryMode::Fixed))
    }

    pub fn growing(fraction: f64) -> Result<Self> {
        check_fraction(fraction)?;
        Ok(Self::empty(0, MemoryMode::Growing { fraction }))
    }

    fn empty(budget: usize, mode: MemoryMode) -> Self {
        ExemplarMemory {
            budget,
            mode,
            per_class: BTreeMap::new(),
            tombstones: BTreeSet::new(),
            step: 0,
            rank_fallbacks: 0,
        }
    }

    /// Rebuilds a memory from stored parts and checks its invariants.
    pub fn from_parts(
        budget: usize,
        mode: MemoryMode,
        per_class: BTreeMap<String, Vec<PoseInstance>>,
        tombstones: BTreeSet<String>,
        step: usize,
    ) -> Result<Self> {
        let memory = ExemplarMemory {
            budget,
            mode,
            per_class,
            tombstones,
            step,
            rank_fallbacks: 0,
        };
        memory.check_invariants()?;
        Ok(memory)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.per_class.keys().map(String::as_str)
    }

    pub fn exemplars(&self, class: &str) -> Option<&[PoseInstance]> {
        self.per_class.get(class).map(Vec::as_slice)
    }

    pub fn ids(&self, class: &str) -> Option<Vec<String>> {
        self.per_class
            .get(class)
            .map(|v| v.iter().map(|p| p.id.clone()).collect())
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.per_class
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    pub fn total(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn tombstones(&self) -> &BTreeSet<String> {
        &self.tombstones
    }

    /// Selections (across all updates) that needed the lowest-index top-up.
    pub fn rank_fallbacks(&self) -> usize {
        self.rank_fallbacks
    }

    pub fn current_quota(&self) -> Option<usize> {
        match self.mode {
            MemoryMode::Fixed if !self.per_class.is_empty() => {
                Some(self.budget / self.per_class.len())
            }
            _ => None,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (class, items) in &self.per_class {
            for p in items {
                if let Some(prev) = owner.insert(&p.id, class) {
                    return Err(Error::Integrity(format!(
                        "id {} stored under both {prev:?} and {class:?}",
                        p.id
                    )));
                }
                if self.tombstones.contains(&p.id) {
                    return Err(Error::Integrity(format!(
                        "tombstoned id {} is stored",
                        p.id
                    )));
                }
            }
        }
        if self.mode == MemoryMode::Fixed {
            if self.budget == 0 {
                return Err(Error::Integrity("fixed memory with zero budget".into()));
            }
            if self.total() > self.budget {
                return Err(Error::Integrity(format!(
                    "{} exemplars stored with budget {}",
                    self.total(),
                    self.budget
                )));
            }
            if let Some(quota) = self.current_quota() {
                if let Some((class, items)) = self.per_class.iter().find(|(_, v)| v.len() > quota) {
                    return Err(Error::Integrity(format!(
                        "class {class:?} stores {} exemplars, quota is {quota}",
                        items.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_new_data(&self, new_class_data: &BTreeMap<String, Vec<PoseInstance>>) -> Result<()> {
        let mut seen: BTreeSet<&str> = self
            .per_class
            .values()
            .flatten()
            .map(|p| p.id.as_str())
            .collect();
        for (class, items) in new_class_data {
            if self.per_class.contains_key(class) {
                return Err(Error::Parameter(format!(
                    "class {class:?} is already in memory"
                )));
            }
            for p in items {
                if p.class_label != *class {
                    return Err(Error::Parameter(format!(
                        "instance {} is labelled {:?} but listed under {class:?}",
                        p.id, p.class_label
                    )));
                }
                if self.tombstones.contains(&p.id) {
                    return Err(Error::Integrity(format!(
                        "id {} was removed earlier and cannot be re-added",
                        p.id
                    )));
                }
                if !seen.insert(&p.id) {
                    return Err(Error::Integrity(format!("id {} appears twice", p.id)));
                }
            }
        }
        Ok(())
    }

    fn keep(
        &mut self,
        class: &str,
        pool: &[PoseInstance],
        n: usize,
        strategy: &SamplerStrategy,
    ) -> Result<Vec<PoseInstance>> {
        let class_strategy = SamplerStrategy {
            seed: derive_seed(strategy.seed, class, self.step),
            ..*strategy
        };
        let selection = select_exemplars(pool, n, &class_strategy)?;
        if selection.rank_fallback {
            self.rank_fallbacks += 1;
        }
        let by_id: BTreeMap<&str, &PoseInstance> =
            pool.iter().map(|p| (p.id.as_str(), p)).collect();
        Ok(selection
            .ids
            .iter()
            .map(|id| by_id[id.as_str()].clone())
            .collect())
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Fixed-budget update: shrink the old classes to the new quota by
/// re-selecting among their stored exemplars, then fill the new classes.
pub fn update_memory(
    memory: &ExemplarMemory,
    new_class_data: &BTreeMap<String, Vec<PoseInstance>>,
    strategy: &SamplerStrategy,
) -> Result<ExemplarMemory> {
    if memory.mode != MemoryMode::Fixed {
        return Err(Error::Parameter(
            "update_memory requires a fixed-mode memory".into(),
        ));
    }
    strategy.validate()?;
    memory.check_new_data(new_class_data)?;

    let mut next = memory.clone();
    let classes_seen = memory.num_classes() + new_class_data.len();
    if classes_seen == 0 {
        return Ok(next);
    }
    let quota = per_class_quota(memory.budget, classes_seen)?;

    let old: Vec<(String, Vec<PoseInstance>)> = memory
        .per_class
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    for (class, stored) in old {
        if stored.len() <= quota {
            continue;
        }
        let kept = next.keep(&class, &stored, quota, strategy)?;
        let kept_ids: BTreeSet<&str> = kept.iter().map(|p| p.id.as_str()).collect();
        for p in &stored {
            if !kept_ids.contains(p.id.as_str()) {
                next.tombstones.insert(p.id.clone());
            }
        }
        next.per_class.insert(class, kept);
    }
    for (class, data) in new_class_data {
        let kept = next.keep(class, data, quota, strategy)?;
        next.per_class.insert(class.clone(), kept);
    }
    next.step += 1;
    next.check_invariants()?;
    Ok(next)
}

/// Growing-memory update: each new class adds `⌈fraction · |class|⌉`
/// exemplars and nothing already stored is removed.
pub fn growing_update(
    memory: &ExemplarMemory,
    new_class_data: &BTreeMap<String, Vec<PoseInstance>>,
    fraction: f64,
    strategy: &SamplerStrategy,
) -> Result<ExemplarMemory> {
    check_fraction(fraction)?;
    if !matches!(memory.mode, MemoryMode::Growing { .. }) {
        return Err(Error::Parameter(
            "growing_update requires a growing-mode memory".into(),
        ));
    }
    strategy.validate()?;
    memory.check_new_data(new_class_data)?;

    let mut next = memory.clone();
    for (class, data) in new_class_data {
        let n = ((fraction * data.len() as f64).ceil() as usize).min(data.len());
        let kept = next.keep(class, data, n, strategy)?;
        next.per_class.insert(class.clone(), kept);
    }
    next.step += 1;
    next.check_invariants()?;
    Ok(next)
}
