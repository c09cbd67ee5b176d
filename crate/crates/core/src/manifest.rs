//! On-disk exemplar manifests (pretty-printed JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{ExemplarMemory, MemoryMode, SamplerStrategy};
use crate::pose::PoseInstance;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub schema_version: u32,
    pub step: usize,
    pub budget: usize,
    pub mode: MemoryMode,
    pub strategy: SamplerStrategy,
    pub classes: Vec<ClassEntry>,
    pub tombstones: Vec<String>,
}

impl MemoryManifest {
    pub fn from_memory(memory: &ExemplarMemory, strategy: &SamplerStrategy) -> Self {
        MemoryManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            step: memory.step(),
            budget: memory.budget(),
            mode: memory.mode(),
            strategy: *strategy,
            classes: memory
                .classes()
                .map(|c| ClassEntry {
                    label: c.to_string(),
                    exemplars: memory.ids(c).unwrap_or_default(),
                })
                .collect(),
            tombstones: memory.tombstones().iter().cloned().collect(),
        }
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.classes
            .iter()
            .map(|c| (c.label.clone(), c.exemplars.len()))
            .collect()
    }

    /// Rehydrates the memory, looking every stored id up in `instances`.
    pub fn to_memory(&self, instances: &BTreeMap<String, PoseInstance>) -> Result<ExemplarMemory> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported manifest schema version {}",
                self.schema_version
            )));
        }
        let mut per_class = BTreeMap::new();
        for entry in &self.classes {
            let mut items = Vec::with_capacity(entry.exemplars.len());
            for id in &entry.exemplars {
                let p = instances.get(id).ok_or_else(|| {
                    Error::Integrity(format!("manifest id {id} is not in the dataset"))
                })?;
                items.push(p.clone());
            }
            if per_class.insert(entry.label.clone(), items).is_some() {
                return Err(Error::Integrity(format!(
                    "class {:?} listed twice",
                    entry.label
                )));
            }
        }
        let tombstones: BTreeSet<String> = self.tombstones.iter().cloned().collect();
        ExemplarMemory::from_parts(self.budget, self.mode, per_class, tombstones, self.step)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
