use std::path::Path;

use rayon::prelude::*;

use super::{approx_ged, exact_ged, GedCostModel, GedError, GedGraph};
use crate::graph::SceneGraph;

pub const GED_MATRIX_MAGIC: &[u8; 8] = b"SCNRGED1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GedMode {
    Approx,
    /// Exact for every pair; graphs above the budget are an error.
    Exact { node_budget: usize },
}

/// Symmetric distance matrix with zero diagonal, stored as the strict upper
/// triangle in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    upper: Vec<f64>,
}

fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    pub fn from_upper(n: usize, upper: Vec<f64>) -> Result<Self, GedError> {
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(GedError::Format(format!(
                "{} upper-triangle entries for n = {n}",
                upper.len()
            )));
        }
        if let Some(v) = upper.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(GedError::Format(format!("invalid distance {v}")));
        }
        Ok(Self { n, upper })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[tri_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.upper[tri_index(self.n, j, i)],
        }
    }

    /// Full row `i` including the zero self-distance.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|j| self.get(i, j)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.upper.len() * 8);
        out.extend_from_slice(GED_MATRIX_MAGIC);
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        for v in &self.upper {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GedError> {
        if bytes.len() < 16 || &bytes[..8] != GED_MATRIX_MAGIC {
            return Err(GedError::Format("missing distance-matrix header".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() % 8 != 0 {
            return Err(GedError::Format("body is not a whole number of f64 values".into()));
        }
        let upper = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_upper(n, upper)
    }

    /// `i,j,distance` for every pair with `i < j`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,distance\n");
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push_str(&format!("{i},{j},{:?}\n", self.get(i, j)));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GedError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GedError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Distances between every pair of `graphs`, computed in parallel over the
/// upper triangle. Output does not depend on the thread count.
pub fn allpairs_ged(
    graphs: &[SceneGraph],
    costs: &GedCostModel,
    mode: GedMode,
) -> Result<DistanceMatrix, GedError> {
    if graphs.is_empty() {
        return Err(GedError::EmptyCorpus);
    }
    for g in graphs {
        costs.check(g)?;
        if let GedMode::Exact { node_budget } = mode {
            if g.node_count() > node_budget {
                return Err(GedError::BudgetExceeded {
                    graph: g.graph_id.clone(),
                    nodes: g.node_count(),
                    budget: node_budget,
                });
            }
        }
    }
    let prepared: Vec<GedGraph> = graphs.iter().map(GedGraph::from_scene).collect();
    let n = prepared.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let upper = pairs
        .par_iter()
        .map(|&(i, j)| match mode {
            GedMode::Approx => Ok(approx_ged(&prepared[i], &prepared[j], costs).distance),
            GedMode::Exact { node_budget } => {
                exact_ged(&prepared[i], &prepared[j], costs, node_budget).map(|r| r.distance)
            }
        })
        .collect::<Result<Vec<f64>, GedError>>()?;
    DistanceMatrix::from_upper(n, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_indexing_and_round_trip() {
        let m = DistanceMatrix::from_upper(4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.get(0, 3), 3.0);
        assert_eq!(m.get(3, 0), 3.0);
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.get(2, 3), 6.0);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(DistanceMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        assert_eq!(m.to_csv().lines().count(), 7);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(DistanceMatrix::from_bytes(b"nope").is_err());
        let mut b = DistanceMatrix::from_upper(3, vec![1.0; 3]).unwrap().to_bytes();
        b.truncate(b.len() - 8);
        assert!(DistanceMatrix::from_bytes(&b).is_err());
        assert!(DistanceMatrix::from_upper(2, vec![-1.0]).is_err());
    }

    #[test]
    fn single_graph_gives_one_by_one() {
        let t = crate::embeddings::synth_table(1, 3, 2, 4).unwrap();
        let costs = GedCostModel::new(&t).unwrap();
        let g = SceneGraph {
            graph_id: "a".into(),
            nodes: vec![crate::graph::Node { id: 0, class_id: 0 }],
            edges: vec![],
            scene_label: None,
        };
        let m = allpairs_ged(&[g], &costs, GedMode::Approx).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.row(0), vec![0.0]);
    }
}
