//! Stage orchestration behind the command-line tool: run configuration,
//! artifact files, provenance manifests and exit-code mapping.

mod cli;
mod commands;

pub use cli::{run, Cli, Command};
pub use commands::*;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ged::GedError;
use crate::graph::GraphError;
use crate::embeddings::EmbeddingError;
use crate::metrics::{MetricsError, DEFAULT_KS, DEFAULT_RELEVANT_TOP};
use crate::model::{CheckpointError, ModelConfig, TrainError};
use crate::tensor::TensorError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("{0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) | PipelineError::Integrity(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

impl From<GraphError> for PipelineError {
    fn from(e: GraphError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EmbeddingError> for PipelineError {
    fn from(e: EmbeddingError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<GedError> for PipelineError {
    fn from(e: GedError) -> Self {
        match e {
            GedError::BudgetExceeded { .. } | GedError::Costs(_) | GedError::ZeroMean => {
                PipelineError::Usage(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Alignment(_) => PipelineError::Integrity(e.to_string()),
            MetricsError::BadK => PipelineError::Usage(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Setup(m) => PipelineError::Usage(m),
            TrainError::Numerical { .. } => PipelineError::Numerical(e.to_string()),
        }
    }
}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => PipelineError::Numerical(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Distance settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GedSettings {
    pub exact: bool,
    pub node_budget: usize,
    pub edge_indel_cost: f64,
    pub edge_sub_cost: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for GedSettings {
    fn default() -> Self {
        Self {
            exact: false,
            node_budget: crate::ged::DEFAULT_NODE_BUDGET,
            edge_indel_cost: 1.0,
            edge_sub_cost: 0.0,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub relevant_top: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            relevant_top: DEFAULT_RELEVANT_TOP,
        }
    }
}

/// Single JSON document holding every tunable of a run. Each command reads
/// the parts it needs; flags override individual fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub ged: GedSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Usage(format!("config {}: {e}", path.display())))
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| PipelineError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub sha256: String,
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<InputRecord>,
    /// Hash of the graph file the artifact was computed from.
    pub corpus_hash: Option<String>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn path_for(artifact: &Path) -> PathBuf {
        sibling(artifact, ".manifest.json")
    }

    pub fn load_for(artifact: &Path) -> Result<Self> {
        let path = Self::path_for(artifact);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            PipelineError::Integrity(format!("missing manifest {}: {e}", path.display()))
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Integrity(format!("manifest {}: {e}", path.display())))?;
        let actual = sha256_file(artifact)?;
        if actual != m.sha256 {
            return Err(PipelineError::Integrity(format!(
                "{} changed since its manifest was written",
                artifact.display()
            )));
        }
        Ok(m)
    }
}

pub(crate) struct ManifestBuilder {
    command: &'static str,
    inputs: Vec<InputRecord>,
    corpus_hash: Option<String>,
    config: serde_json::Value,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, config: impl Serialize) -> Self {
        Self {
            command,
            inputs: Vec::new(),
            corpus_hash: None,
            config: serde_json::to_value(config).expect("config serialises"),
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self> {
        self.inputs.push(InputRecord {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn corpus(mut self, hash: String) -> Self {
        self.corpus_hash = Some(hash);
        self
    }

    /// Writes the manifest for `artifact`, which must already exist.
    pub fn write(&self, artifact: &Path) -> Result<()> {
        let m = Manifest {
            artifact: artifact
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_file(artifact)?,
            command: self.command.into(),
            tool_version: TOOL_VERSION.into(),
            inputs: self.inputs.clone(),
            corpus_hash: self.corpus_hash.clone(),
            config: self.config.clone(),
        };
        write_file(
            &Manifest::path_for(artifact),
            serde_json::to_string_pretty(&m).expect("manifest serialises"),
        )
    }
}

pub const EMBEDDINGS_FORMAT: &str = "scenir-embeddings";

/// Graph-level embeddings in corpus order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub format: String,
    pub version: u32,
    pub corpus_hash: String,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingFile {
    pub fn new(corpus_hash: String, ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Self {
        Self {
            format: EMBEDDINGS_FORMAT.into(),
            version: 1,
            corpus_hash,
            ids,
            vectors,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embeddings serialise")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: EmbeddingFile = serde_json::from_str(&read_text(path)?)
            .map_err(|e| PipelineError::Data(format!("embeddings {}: {e}", path.display())))?;
        if f.format != EMBEDDINGS_FORMAT || f.ids.len() != f.vectors.len() {
            return Err(PipelineError::Data(format!(
                "{} is not a well-formed embeddings file",
                path.display()
            )));
        }
        Ok(f)
    }
}
