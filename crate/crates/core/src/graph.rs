//! Scene graphs: corpus ingestion, predicate reification, isolated-node
//! removal and conversion to feature/adjacency matrices.
//!
//! A relation triple `(s, p, o)` becomes a predicate node carrying the class
//! of `p`, with directed edges `s -> p` and `p -> o`. Node order is fixed:
//! objects in input order, then predicate nodes in relation order.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::ClassEmbeddingTable;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record `{record}`: relation {relation} references object {index}, but only {objects} objects exist")]
    BadRelation {
        record: String,
        relation: usize,
        index: usize,
        objects: usize,
    },
    #[error("record `{record}`: unknown {kind} class `{class}`")]
    Vocabulary {
        record: String,
        kind: &'static str,
        class: String,
    },
    #[error("graph `{0}` has no nodes left after removing isolated nodes")]
    EmptyGraph(String),
    #[error("graph `{graph}`: {message}")]
    Invalid { graph: String, message: String },
}

type Result<T> = std::result::Result<T, GraphError>;

/// One annotation record as stored in a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub image_id: String,
    pub objects: Vec<String>,
    pub relations: Vec<(usize, String, usize)>,
    #[serde(default)]
    pub scene_label: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub class_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub graph_id: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub scene_label: Option<String>,
}

/// Feature matrix `X` (n x d) and directed binary adjacency `A` (n x n).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMatrices {
    pub features: Tensor,
    pub adjacency: Tensor,
}

impl GraphMatrices {
    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Adjacency symmetrised by max with its transpose.
    pub fn symmetric_adjacency(&self) -> Tensor {
        self.adjacency
            .symmetrize_max()
            .expect("adjacency is square by construction")
    }
}

fn validate_relations(raw: &RawAnnotation) -> Result<()> {
    for (r, (s, _, o)) in raw.relations.iter().enumerate() {
        for &index in [s, o] {
            if index >= raw.objects.len() {
                return Err(GraphError::BadRelation {
                    record: raw.image_id.clone(),
                    relation: r,
                    index,
                    objects: raw.objects.len(),
                });
            }
        }
    }
    Ok(())
}

/// Checks object/predicate names against a table's vocabulary.
pub fn check_vocabulary(raw: &RawAnnotation, table: &ClassEmbeddingTable) -> Result<()> {
    for name in &raw.objects {
        if table.object_class_id(name).is_none() {
            return Err(GraphError::Vocabulary {
                record: raw.image_id.clone(),
                kind: "object",
                class: name.clone(),
            });
        }
    }
    for (_, p, _) in &raw.relations {
        if table.predicate_class_id(p).is_none() {
            return Err(GraphError::Vocabulary {
                record: raw.image_id.clone(),
                kind: "predicate",
                class: p.clone(),
            });
        }
    }
    Ok(())
}

/// Decodes corpus JSON without validating record contents, so callers can
/// handle bad records one at a time.
pub fn read_records_str(text: &str) -> Result<Vec<RawAnnotation>> {
    serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Parses a corpus from JSON text: an array of
/// `{"image_id", "objects", "relations": [[s, "pred", o], ...], "scene_label"}`.
pub fn parse_corpus_str(
    text: &str,
    vocabulary: Option<&ClassEmbeddingTable>,
) -> Result<Vec<RawAnnotation>> {
    let records = read_records_str(text)?;
    for raw in &records {
        validate_relations(raw)?;
        if let Some(table) = vocabulary {
            check_vocabulary(raw, table)?;
        }
    }
    Ok(records)
}

pub fn parse_corpus(
    path: &Path,
    vocabulary: Option<&ClassEmbeddingTable>,
) -> Result<Vec<RawAnnotation>> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus_str(&text, vocabulary)
}

/// Reifies each distinct relation as a predicate node. Duplicate triples are
/// collapsed first.
pub fn lift_predicates_to_nodes(
    raw: &RawAnnotation,
    table: &ClassEmbeddingTable,
) -> Result<SceneGraph> {
    validate_relations(raw)?;
    check_vocabulary(raw, table)?;

    let mut nodes: Vec<Node> = raw
        .objects
        .iter()
        .enumerate()
        .map(|(id, name)| Node {
            id,
            class_id: table.object_class_id(name).expect("checked"),
        })
        .collect();
    let mut edges = Vec::with_capacity(2 * raw.relations.len());
    let mut seen = HashSet::new();
    for (s, p, o) in &raw.relations {
        if !seen.insert((s, p, o)) {
            continue;
        }
        let id = nodes.len();
        nodes.push(Node {
            id,
            class_id: table.predicate_class_id(p).expect("checked"),
        });
        edges.push((*s, id));
        edges.push((id, *o));
    }
    Ok(SceneGraph {
        graph_id: raw.image_id.clone(),
        nodes,
        edges,
        scene_label: raw.scene_label.clone(),
    })
}

/// Drops self-loops, duplicate edges and nodes with no incident edge, then
/// re-indexes the survivors contiguously in their original order.
pub fn remove_isolated_nodes(g: &SceneGraph) -> Result<SceneGraph> {
    let n = g.nodes.len();
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(g.edges.len());
    for &(s, d) in &g.edges {
        if s >= n || d >= n {
            return Err(GraphError::Invalid {
                graph: g.graph_id.clone(),
                message: format!("edge ({s}, {d}) references a missing node"),
            });
        }
        if s != d && seen.insert((s, d)) {
            edges.push((s, d));
        }
    }
    let mut degree = vec![0usize; n];
    for &(s, d) in &edges {
        degree[s] += 1;
        degree[d] += 1;
    }
    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for (i, node) in g.nodes.iter().enumerate() {
        if degree[i] > 0 {
            remap[i] = nodes.len();
            nodes.push(Node {
                id: nodes.len(),
                class_id: node.class_id,
            });
        }
    }
    if nodes.is_empty() {
        return Err(GraphError::EmptyGraph(g.graph_id.clone()));
    }
    Ok(SceneGraph {
        graph_id: g.graph_id.clone(),
        nodes,
        edges: edges.iter().map(|&(s, d)| (remap[s], remap[d])).collect(),
        scene_label: g.scene_label.clone(),
    })
}

/// Full preprocessing of one record.
pub fn preprocess(raw: &RawAnnotation, table: &ClassEmbeddingTable) -> Result<SceneGraph> {
    remove_isolated_nodes(&lift_predicates_to_nodes(raw, table)?)
}

pub fn build_matrices(g: &SceneGraph, table: &ClassEmbeddingTable) -> Result<GraphMatrices> {
    let n = g.nodes.len();
    let d = table.dim();
    let mut features = Tensor::zeros(n, d);
    for (i, node) in g.nodes.iter().enumerate() {
        let row = table.vector(node.class_id).ok_or_else(|| GraphError::Vocabulary {
            record: g.graph_id.clone(),
            kind: "node",
            class: node.class_id.to_string(),
        })?;
        features.data_mut()[i * d..(i + 1) * d].copy_from_slice(row);
    }
    let mut adjacency = Tensor::zeros(n, n);
    for &(s, t) in &g.edges {
        if s >= n || t >= n || s == t {
            return Err(GraphError::Invalid {
                graph: g.graph_id.clone(),
                message: format!("edge ({s}, {t}) is not valid for {n} nodes"),
            });
        }
        adjacency.set(s, t, 1.0);
    }
    Ok(GraphMatrices {
        features,
        adjacency,
    })
}

impl SceneGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.class_id).collect()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SceneGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = vec![Node { id: 0, class_id: 0 }; self.nodes.len()];
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = Node {
                id: perm[old],
                class_id: node.class_id,
            };
        }
        SceneGraph {
            graph_id: self.graph_id.clone(),
            nodes,
            edges: self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect(),
            scene_label: self.scene_label.clone(),
        }
    }

    /// Longest shortest directed path (in edges) between any reachable pair.
    pub fn max_path_length(&self) -> usize {
        let n = self.nodes.len();
        let mut out = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            out[s].push(d);
        }
        let mut best = 0;
        for start in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[start] = 0;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &out[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        best = best.max(dist[v]);
                        queue.push_back(v);
                    }
                }
            }
        }
        best
    }
}

/// On-disk container for preprocessed graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format: String,
    pub version: u32,
    pub graphs: Vec<SceneGraph>,
}

pub const GRAPH_FILE_FORMAT: &str = "scenir-graphs";

impl GraphFile {
    pub fn new(graphs: Vec<SceneGraph>) -> Self {
        Self {
            format: GRAPH_FILE_FORMAT.into(),
            version: 1,
            graphs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graphs serialise")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: GraphFile = serde_json::from_str(&text).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != GRAPH_FILE_FORMAT {
            return Err(GraphError::Parse {
                line: 1,
                column: 1,
                message: format!("expected format `{GRAPH_FILE_FORMAT}`, found `{}`", file.format),
            });
        }
        Ok(file)
    }
}
