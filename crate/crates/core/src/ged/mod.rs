//! Graph edit distance under a semantic node-cost model: an exact
//! branch-and-bound solver for small graphs, an assignment-based upper bound
//! for corpus-scale use, and all-pairs distance matrices.

mod lsap;
mod matrix;
mod search;

pub use lsap::solve_assignment;
pub use matrix::{allpairs_ged, DistanceMatrix, GedMode, GED_MATRIX_MAGIC};
pub use search::{approx_ged, exact_ged, DEFAULT_NODE_BUDGET};

use crate::embeddings::ClassEmbeddingTable;
use crate::graph::SceneGraph;
use crate::numeric::exact_sum;

#[derive(Debug, thiserror::Error)]
pub enum GedError {
    #[error("the object-class mean embedding is zero, so insertion/deletion costs are undefined; set a constant indel cost instead")]
    ZeroMean,
    #[error("graph `{graph}` has {nodes} nodes, above the exact-solver budget of {budget}; use the approximate solver")]
    BudgetExceeded {
        graph: String,
        nodes: usize,
        budget: usize,
    },
    #[error("graph `{graph}` uses class id {class} outside the embedding table")]
    UnknownClass { graph: String, class: usize },
    #[error("invalid edge costs: {0}")]
    Costs(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("distance matrix i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("distance matrix format: {0}")]
    Format(String),
}

/// Node costs from cosine distances between class embeddings; edge costs
/// are constants.
#[derive(Clone, Debug)]
pub struct GedCostModel {
    units: Vec<Vec<f64>>,
    mean_unit: Option<Vec<f64>>,
    constant_indel: Option<f64>,
    pub edge_indel_cost: f64,
    pub edge_sub_cost: f64,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = exact_sum(v.iter().map(|x| x * x)).sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - exact_sum(a.iter().zip(b).map(|(x, y)| x * y))).max(0.0)
}

impl GedCostModel {
    /// Edge insertion/deletion 1, edge substitution 0; node indel against
    /// the object-class mean.
    pub fn new(table: &ClassEmbeddingTable) -> Result<Self, GedError> {
        let units = (0..table.class_count())
            .map(|c| unit(table.vector(c).expect("in range")).expect("table rows are nonzero"))
            .collect();
        let mean_unit = unit(&table.mean_embedding(true)).ok_or(GedError::ZeroMean)?;
        Ok(Self {
            units,
            mean_unit: Some(mean_unit),
            constant_indel: None,
            edge_indel_cost: 1.0,
            edge_sub_cost: 0.0,
        })
    }

    /// Like [`GedCostModel::new`] but charges `cost` for every node
    /// insertion or deletion, for tables whose object mean vanishes.
    pub fn with_constant_indel(table: &ClassEmbeddingTable, cost: f64) -> Result<Self, GedError> {
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(GedError::Costs(format!("node indel cost {cost}")));
        }
        let units = (0..table.class_count())
            .map(|c| unit(table.vector(c).expect("in range")).expect("table rows are nonzero"))
            .collect();
        Ok(Self {
            units,
            mean_unit: None,
            constant_indel: Some(cost),
            edge_indel_cost: 1.0,
            edge_sub_cost: 0.0,
        })
    }

    pub fn with_edge_costs(mut self, indel: f64, sub: f64) -> Result<Self, GedError> {
        if !(indel >= 0.0 && sub >= 0.0 && indel.is_finite() && sub.is_finite()) {
            return Err(GedError::Costs(format!("indel {indel}, substitution {sub}")));
        }
        self.edge_indel_cost = indel;
        self.edge_sub_cost = sub;
        Ok(self)
    }

    pub fn class_count(&self) -> usize {
        self.units.len()
    }

    pub fn node_sub_cost(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else {
            cosine_distance(&self.units[a], &self.units[b])
        }
    }

    pub fn node_indel_cost(&self, a: usize) -> f64 {
        match (&self.mean_unit, self.constant_indel) {
            (_, Some(c)) => c,
            (Some(m), None) => cosine_distance(&self.units[a], m),
            (None, None) => unreachable!("one indel rule is always set"),
        }
    }

    /// Rejects graphs whose class ids fall outside the table.
    pub fn check(&self, g: &SceneGraph) -> Result<(), GedError> {
        match g.nodes.iter().find(|n| n.class_id >= self.units.len()) {
            Some(n) => Err(GedError::UnknownClass {
                graph: g.graph_id.clone(),
                class: n.class_id,
            }),
            None => Ok(()),
        }
    }
}

/// Node classes plus an undirected adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GedGraph {
    pub classes: Vec<usize>,
    adj: Vec<bool>,
}

impl GedGraph {
    pub fn new(classes: Vec<usize>, edges: &[(usize, usize)]) -> Self {
        let n = classes.len();
        let mut adj = vec![false; n * n];
        for &(a, b) in edges {
            if a != b {
                adj[a * n + b] = true;
                adj[b * n + a] = true;
            }
        }
        Self { classes, adj }
    }

    pub fn from_scene(g: &SceneGraph) -> Self {
        Self::new(g.class_ids(), &g.edges)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.len() + b]
    }

    pub fn degree(&self, a: usize) -> usize {
        let n = self.len();
        self.adj[a * n..(a + 1) * n].iter().filter(|&&e| e).count()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count() / 2
    }
}

/// Result of one distance computation. `mapping[i]` is the node of the
/// second graph that node `i` of the first is substituted with, or `None`
/// for a deletion; second-graph nodes outside the image are insertions.
#[derive(Clone, Debug, PartialEq)]
pub struct GedResult {
    pub distance: f64,
    pub mapping: Option<Vec<Option<usize>>>,
    pub is_exact: bool,
}

/// Total cost of the edit path induced by `mapping`. Every term is summed
/// with correct rounding, so equal multisets of terms give equal totals.
pub fn induced_cost(g1: &GedGraph, g2: &GedGraph, mapping: &[Option<usize>], costs: &GedCostModel) -> f64 {
    let (n1, n2) = (g1.len(), g2.len());
    let mut terms = Vec::with_capacity(n1 + n2 + n1 * n1);
    let mut image = vec![false; n2];
    for (i, m) in mapping.iter().enumerate() {
        match m {
            Some(j) => {
                image[*j] = true;
                terms.push(costs.node_sub_cost(g1.classes[i], g2.classes[*j]));
            }
            None => terms.push(costs.node_indel_cost(g1.classes[i])),
        }
    }
    for (j, &hit) in image.iter().enumerate() {
        if !hit {
            terms.push(costs.node_indel_cost(g2.classes[j]));
        }
    }
    let mut covered = 0usize;
    for a in 0..n1 {
        for b in a + 1..n1 {
            let e1 = g1.has_edge(a, b);
            let e2 = match (mapping[a], mapping[b]) {
                (Some(x), Some(y)) => g2.has_edge(x, y),
                _ => false,
            };
            match (e1, e2) {
                (true, true) => {
                    covered += 1;
                    terms.push(costs.edge_sub_cost);
                }
                (true, false) => terms.push(costs.edge_indel_cost),
                _ => {}
            }
        }
    }
    let uncovered = g2.edge_count() - covered;
    terms.extend(std::iter::repeat(costs.edge_indel_cost).take(uncovered));
    exact_sum(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn table(rows: &[Vec<f64>], objects: usize) -> ClassEmbeddingTable {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        ClassEmbeddingTable::new(rows[0].len(), objects, names, rows.concat()).unwrap()
    }

    #[test]
    fn substitution_costs() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 3.0], vec![-2.0, 0.0]], 3);
        let m = GedCostModel::new(&t).unwrap();
        assert_eq!(m.node_sub_cost(1, 1), 0.0);
        assert_eq!(m.node_sub_cost(0, 1), 1.0);
        assert_eq!(m.node_sub_cost(0, 2), 2.0);
    }

    #[test]
    fn indel_costs() {
        // object mean is (1, 1); class 2 equals it, class 3 is orthogonal
        let t = table(
            &[vec![2.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0], vec![1.0, -1.0]],
            2,
        );
        let m = GedCostModel::new(&t).unwrap();
        assert!(m.node_indel_cost(2).abs() < 1e-15);
        assert!((m.node_indel_cost(3) - 1.0).abs() < 1e-15);
        let scaled = table(
            &[vec![2.0, 0.0], vec![0.0, 2.0], vec![5.0, 5.0], vec![1.0, -1.0]],
            2,
        );
        let ms = GedCostModel::new(&scaled).unwrap();
        assert_eq!(m.node_indel_cost(2), ms.node_indel_cost(2));
    }

    #[test]
    fn zero_mean_is_a_configuration_error() {
        let t = table(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 2);
        assert!(matches!(GedCostModel::new(&t), Err(GedError::ZeroMean)));
        let m = GedCostModel::with_constant_indel(&t, 0.5).unwrap();
        assert_eq!(m.node_indel_cost(0), 0.5);
    }

    #[test]
    fn induced_cost_counts_edges_once() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        let m = GedCostModel::new(&t).unwrap();
        let g1 = GedGraph::new(vec![0, 1], &[(0, 1)]);
        let g2 = GedGraph::new(vec![0, 1], &[]);
        assert_eq!(induced_cost(&g1, &g2, &[Some(0), Some(1)], &m), 1.0);
        assert_eq!(induced_cost(&g2, &g1, &[Some(0), Some(1)], &m), 1.0);
        assert_eq!(induced_cost(&g1, &g1, &[Some(0), Some(1)], &m), 0.0);
        // swapping substitutes both classes (cost 1 each), edge kept
        assert_eq!(induced_cost(&g1, &g1, &[Some(1), Some(0)], &m), 2.0);
    }
}
