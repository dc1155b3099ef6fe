//! Independent reference implementations used as test oracles.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenir::embeddings::{synth_table, ClassEmbeddingTable};
use scenir::ged::{approx_ged, exact_ged, GedCostModel, GedGraph};
use scenir::graph::{build_matrices, preprocess};
use scenir::model::{GnnKind, ModelConfig, Scenir};
use scenir::numeric::exact_sum;
use scenir::synthetic::{synth_corpus, SynthCorpusConfig};

#[derive(Clone, Debug)]
pub struct RandGraph {
    pub classes: Vec<usize>,
    /// Unordered pairs with `a < b`.
    pub edges: HashSet<(usize, usize)>,
}

impl RandGraph {
    pub fn random(rng: &mut ChaCha8Rng, class_count: usize, max_nodes: usize) -> Self {
        let n = rng.gen_range(1..=max_nodes);
        let classes = (0..n).map(|_| rng.gen_range(0..class_count)).collect();
        let mut edges = HashSet::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.5) {
                    edges.insert((a, b));
                }
            }
        }
        Self { classes, edges }
    }

    pub fn to_ged(&self) -> GedGraph {
        let mut e: Vec<_> = self.edges.iter().copied().collect();
        e.sort_unstable();
        GedGraph::new(self.classes.clone(), &e)
    }

    fn has(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

/// Cost of the edit path defined by `map` (g1 node -> g2 node or deletion),
/// written out from the definition: node substitutions, deletions and
/// insertions, then every unordered node pair of either graph.
fn path_cost(g1: &RandGraph, g2: &RandGraph, map: &[Option<usize>], costs: &GedCostModel) -> f64 {
    let mut terms = Vec::new();
    let mut inverse = vec![None; g2.classes.len()];
    for (i, m) in map.iter().enumerate() {
        match m {
            Some(j) => {
                inverse[*j] = Some(i);
                terms.push(costs.node_sub_cost(g1.classes[i], g2.classes[*j]));
            }
            None => terms.push(costs.node_indel_cost(g1.classes[i])),
        }
    }
    for (j, src) in inverse.iter().enumerate() {
        if src.is_none() {
            terms.push(costs.node_indel_cost(g2.classes[j]));
        }
    }
    // Edges of g1: kept (both ends mapped onto an edge) or deleted.
    for &(a, b) in &g1.edges {
        match (map[a], map[b]) {
            (Some(x), Some(y)) if g2.has(x, y) => terms.push(0.0),
            _ => terms.push(1.0),
        }
    }
    // Edges of g2 with no preimage edge are inserted.
    for &(x, y) in &g2.edges {
        let kept = matches!((inverse[x], inverse[y]), (Some(a), Some(b)) if g1.has(a, b));
        if !kept {
            terms.push(1.0);
        }
    }
    exact_sum(terms)
}

/// Minimum over every partial injective mapping of g1 into g2.
pub fn brute_force_ged(g1: &RandGraph, g2: &RandGraph, costs: &GedCostModel) -> f64 {
    fn recurse(
        i: usize,
        g1: &RandGraph,
        g2: &RandGraph,
        used: &mut Vec<bool>,
        map: &mut Vec<Option<usize>>,
        costs: &GedCostModel,
        best: &mut f64,
    ) {
        if i == g1.classes.len() {
            *best = best.min(path_cost(g1, g2, map, costs));
            return;
        }
        map.push(None);
        recurse(i + 1, g1, g2, used, map, costs, best);
        map.pop();
        for j in 0..g2.classes.len() {
            if !used[j] {
                used[j] = true;
                map.push(Some(j));
                recurse(i + 1, g1, g2, used, map, costs, best);
                map.pop();
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(0, g1, g2, &mut vec![false; g2.classes.len()], &mut Vec::new(), costs, &mut best);
    best
}

pub fn oracle_table() -> ClassEmbeddingTable {
    synth_table(11, 8, 4, 16).unwrap()
}

#[derive(Debug, Default)]
pub struct GedOracleStats {
    pub pairs: usize,
    /// Pairs where the approximation equals the exact distance.
    pub equal: usize,
    pub approx_below_exact: Vec<String>,
    pub exact_mismatch: Vec<String>,
}

impl GedOracleStats {
    pub fn equal_fraction(&self) -> f64 {
        self.equal as f64 / self.pairs as f64
    }
}

/// Random pairs with at most `max_nodes` nodes: compares the approximation,
/// the exact search and exhaustive enumeration.
pub fn ged_oracle(pairs: usize, max_nodes: usize, seed: u64) -> GedOracleStats {
    let table = oracle_table();
    let costs = GedCostModel::new(&table).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GedOracleStats {
        pairs,
        ..Default::default()
    };
    for p in 0..pairs {
        let a = RandGraph::random(&mut rng, table.class_count(), max_nodes);
        let b = RandGraph::random(&mut rng, table.class_count(), max_nodes);
        let (ga, gb) = (a.to_ged(), b.to_ged());
        let approx = approx_ged(&ga, &gb, &costs).distance;
        let exact = exact_ged(&ga, &gb, &costs, max_nodes).unwrap().distance;
        let brute = brute_force_ged(&a, &b, &costs);
        if exact != brute {
            stats.exact_mismatch.push(format!("pair {p}: exact {exact} vs enumeration {brute}"));
        }
        if approx < exact {
            stats.approx_below_exact.push(format!("pair {p}: approx {approx} < exact {exact}"));
        }
        if approx == exact {
            stats.equal += 1;
        }
    }
    stats
}

/// Embeds random graphs and random relabellings of them, requiring
/// bit-identical graph embeddings. Returns the number of pairs checked.
pub fn permutation_invariance(pairs: usize, seed: u64) -> Result<usize, String> {
    let table = synth_table(seed, 12, 5, 8).unwrap();
    let corpus = synth_corpus(
        &table,
        &SynthCorpusConfig {
            graphs: 50,
            min_objects: 2,
            max_objects: 6,
            extra_relations: 2,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let graphs: Vec<_> = corpus.records.iter().map(|r| preprocess(r, &table).unwrap()).collect();
    let models: Vec<Scenir> = [GnnKind::Gin, GnnKind::Gcn]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            Scenir::init(ModelConfig {
                gnn_kind: kind,
                hidden_dim: 16,
                latent_dim: 8,
                edge_decoder_out: 8,
                seed: seed + i as u64,
                ..ModelConfig::with_input_dim(8)
            })
            .unwrap()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..pairs {
        let g = &graphs[p % graphs.len()];
        let model = &models[p % models.len()];
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let base = model.graph_embedding(&build_matrices(g, &table).unwrap()).unwrap();
        let moved = model
            .graph_embedding(&build_matrices(&g.permuted(&perm), &table).unwrap())
            .unwrap();
        if base != moved {
            return Err(format!("pair {p} (graph {}, perm {perm:?}): {base:?} vs {moved:?}", g.graph_id));
        }
    }
    Ok(pairs)
}
