//! Benchmark task suite: a synthetic closed world, SAE-activation tasks,
//! story-inpainting tasks, backdoored models with trigger metrics, and the
//! JSON task-file format tying them together.

pub mod backdoor;
pub mod sae_tasks;
pub mod story;
pub mod world;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::backdoor::TriggerSpec;
use crate::error::{Error, Result};
use crate::lm::LMParams;
use crate::objective::ObjectiveSpec;
use crate::sae::SAEParams;
use crate::vocab::TokenSeq;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sae,
    Story,
    Backdoor,
}

/// One benchmark task as stored on disk: the objective, the initial token
/// sequence with its frozen mask, and enough metadata to score results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    /// Artifact path overriding the run's base model (backdoor tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub objective: ObjectiveSpec,
    pub ids: Vec<u32>,
    pub frozen: Vec<bool>,
    /// Corpus max activation for normalization (SAE tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_star: Option<f64>,
    /// Planted trigger for recovery scoring (backdoor tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerSpec>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl TaskRecord {
    pub fn initial_seq(&self) -> Result<TokenSeq> {
        TokenSeq::with_frozen(self.ids.clone(), self.frozen.clone())
    }

    pub fn validate(&self, lm_params: &LMParams, sae: Option<&SAEParams>) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidConfig("task id must be nonempty".into()));
        }
        let seq = self.initial_seq()?;
        seq.validate(lm_params.vocab_size())?;
        if seq.len() > lm_params.ctx_len() {
            return Err(Error::ContextOverflow { len: seq.len(), ctx: lm_params.ctx_len() });
        }
        self.objective.validate(lm_params, sae)?;
        if let Some(a) = self.a_star {
            if !(a > 0.0) {
                return Err(Error::UnnormalizableLatent(a));
            }
        }
        if let Some(t) = &self.trigger {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub schema_version: u32,
    pub tasks: Vec<TaskRecord>,
}

impl TaskFile {
    pub fn new(tasks: Vec<TaskRecord>) -> Self {
        TaskFile { schema_version: SCHEMA_VERSION, tasks }
    }
}

pub fn save_task_file(path: &Path, file: &TaskFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_task_file(path: &Path) -> Result<TaskFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TaskFile = serde_json::from_str(&text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            ),
        });
    }
    if file.tasks.is_empty() {
        return Err(Error::DegenerateInput(format!("no tasks in {}", path.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in &file.tasks {
        if task.ids.len() != task.frozen.len() {
            return Err(Error::LengthMismatch {
                expected: task.ids.len(),
                got: task.frozen.len(),
            });
        }
        if !seen.insert(task.id.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate task id {:?}", task.id)));
        }
    }
    Ok(file)
}
