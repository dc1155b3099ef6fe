use super::{induced_cost, GedCostModel, GedError, GedGraph, GedResult};
use crate::numeric::exact_sum;

/// Largest graph the exact solver accepts by default.
pub const DEFAULT_NODE_BUDGET: usize = 8;

// Slack for floating-point noise when comparing incremental path costs, so
// near-ties are still costed exactly.
const TIE_SLACK: f64 = 1e-9;

fn invert(mapping: &[Option<usize>], n1: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n1];
    for (j, m) in mapping.iter().enumerate() {
        if let Some(i) = m {
            out[*i] = Some(j);
        }
    }
    out
}

fn bipartite_direction(g1: &GedGraph, g2: &GedGraph, costs: &GedCostModel) -> (f64, Vec<Option<usize>>) {
    let (n1, n2) = (g1.len(), g2.len());
    let n = n1 + n2;
    if n == 0 {
        return (0.0, Vec::new());
    }
    let half_indel = 0.5 * costs.edge_indel_cost;
    let half_sub = 0.5 * costs.edge_sub_cost;
    let deg1: Vec<f64> = (0..n1).map(|i| g1.degree(i) as f64).collect();
    let deg2: Vec<f64> = (0..n2).map(|j| g2.degree(j) as f64).collect();

    let mut c = vec![0.0; n * n];
    let mut finite_total = 0.0;
    let mut forbidden = Vec::new();
    for r in 0..n {
        for col in 0..n {
            let v = match (r < n1, col < n2) {
                (true, true) => {
                    let (a, b) = (deg1[r], deg2[col]);
                    costs.node_sub_cost(g1.classes[r], g2.classes[col])
                        + half_indel * (a - b).abs()
                        + half_sub * a.min(b)
                }
                (true, false) if col - n2 == r => {
                    costs.node_indel_cost(g1.classes[r]) + half_indel * deg1[r]
                }
                (false, true) if r - n1 == col => {
                    costs.node_indel_cost(g2.classes[col]) + half_indel * deg2[col]
                }
                (false, false) => 0.0,
                _ => {
                    forbidden.push(r * n + col);
                    continue;
                }
            };
            finite_total += v;
            c[r * n + col] = v;
        }
    }
    // Larger than any assignment that avoids forbidden cells.
    let big = finite_total + 1.0;
    for k in forbidden {
        c[k] = big;
    }
    let assignment = super::solve_assignment(n, &c);
    let mapping: Vec<Option<usize>> = (0..n1)
        .map(|i| (assignment[i] < n2).then_some(assignment[i]))
        .collect();
    (induced_cost(g1, g2, &mapping, costs), mapping)
}

/// Assignment-based upper bound: node costs plus half the incident-edge
/// mismatch on each side, solved as a linear sum assignment, then costed
/// exactly along the induced edit path. Both directions are tried and the
/// smaller is kept, so the result is symmetric.
pub fn approx_ged(g1: &GedGraph, g2: &GedGraph, costs: &GedCostModel) -> GedResult {
    let (d12, m12) = bipartite_direction(g1, g2, costs);
    let (d21, m21) = bipartite_direction(g2, g1, costs);
    let (distance, mapping) = if d21 < d12 {
        (d21, invert(&m21, g1.len()))
    } else {
        (d12, m12)
    };
    GedResult {
        distance,
        mapping: Some(mapping),
        is_exact: false,
    }
}

struct Search<'a> {
    g1: &'a GedGraph,
    g2: &'a GedGraph,
    costs: &'a GedCostModel,
    order: Vec<usize>,
    sub: Vec<f64>,
    indel1: Vec<f64>,
    indel2: Vec<f64>,
    // Candidate targets per first-graph node, cheapest first.
    choices: Vec<Vec<usize>>,
    assign: Vec<Option<usize>>,
    used: Vec<bool>,
    bound: f64,
    best: f64,
    best_mapping: Vec<Option<usize>>,
}

impl Search<'_> {
    fn sub(&self, i: usize, j: usize) -> f64 {
        self.sub[i * self.g2.len() + j]
    }

    fn lower_bound(&self, depth: usize) -> f64 {
        let rem = &self.order[depth..];
        let free: Vec<usize> = (0..self.g2.len()).filter(|&j| !self.used[j]).collect();
        let side1 = exact_sum(rem.iter().map(|&i| {
            free.iter()
                .map(|&j| self.sub(i, j))
                .fold(self.indel1[i], f64::min)
        }));
        let side2 = exact_sum(free.iter().map(|&j| {
            rem.iter()
                .map(|&i| self.sub(i, j))
                .fold(self.indel2[j], f64::min)
        }));
        side1.max(side2)
    }

    fn step_cost(&self, depth: usize, target: Option<usize>) -> f64 {
        let i = self.order[depth];
        let mut cost = match target {
            Some(j) => self.sub(i, j),
            None => self.indel1[i],
        };
        for &p in &self.order[..depth] {
            let e1 = self.g1.has_edge(i, p);
            let e2 = match (target, self.assign[p]) {
                (Some(j), Some(q)) => self.g2.has_edge(j, q),
                _ => false,
            };
            cost += match (e1, e2) {
                (true, true) => self.costs.edge_sub_cost,
                (false, false) => 0.0,
                _ => self.costs.edge_indel_cost,
            };
        }
        cost
    }

    fn leaf_cost(&self) -> f64 {
        let n2 = self.g2.len();
        let mut cost = 0.0;
        for j in 0..n2 {
            if !self.used[j] {
                cost += self.indel2[j];
                for q in 0..n2 {
                    if self.g2.has_edge(j, q) && (self.used[q] || q > j) {
                        cost += self.costs.edge_indel_cost;
                    }
                }
            }
        }
        cost
    }

    fn run(&mut self, depth: usize, partial: f64) {
        if depth == self.order.len() {
            let total = partial + self.leaf_cost();
            if total <= self.bound + TIE_SLACK {
                let exact = induced_cost(self.g1, self.g2, &self.assign, self.costs);
                if exact < self.best {
                    self.best = exact;
                    self.best_mapping = self.assign.clone();
                }
                self.bound = self.bound.min(total);
            }
            return;
        }
        if partial + self.lower_bound(depth) > self.bound + TIE_SLACK {
            return;
        }
        let i = self.order[depth];
        for k in 0..self.choices[i].len() {
            let j = self.choices[i][k];
            if self.used[j] {
                continue;
            }
            let step = self.step_cost(depth, Some(j));
            self.used[j] = true;
            self.assign[i] = Some(j);
            self.run(depth + 1, partial + step);
            self.assign[i] = None;
            self.used[j] = false;
        }
        let step = self.step_cost(depth, None);
        self.run(depth + 1, partial + step);
    }
}

/// Exact edit distance by depth-first branch and bound over node mappings,
/// seeded with the [`approx_ged`] path as the initial upper bound.
pub fn exact_ged(
    g1: &GedGraph,
    g2: &GedGraph,
    costs: &GedCostModel,
    node_budget: usize,
) -> Result<GedResult, GedError> {
    for (name, g) in [("first", g1), ("second", g2)] {
        if g.len() > node_budget {
            return Err(GedError::BudgetExceeded {
                graph: name.into(),
                nodes: g.len(),
                budget: node_budget,
            });
        }
    }
    let (n1, n2) = (g1.len(), g2.len());
    let seed = approx_ged(g1, g2, costs);
    let sub: Vec<f64> = (0..n1 * n2)
        .map(|k| costs.node_sub_cost(g1.classes[k / n2.max(1)], g2.classes[k % n2.max(1)]))
        .collect();
    let mut order: Vec<usize> = (0..n1).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(g1.degree(i)));
    let choices = (0..n1)
        .map(|i| {
            let mut js: Vec<usize> = (0..n2).collect();
            js.sort_by(|&a, &b| sub[i * n2 + a].total_cmp(&sub[i * n2 + b]));
            js
        })
        .collect();
    let mut search = Search {
        g1,
        g2,
        costs,
        order,
        sub,
        indel1: g1.classes.iter().map(|&c| costs.node_indel_cost(c)).collect(),
        indel2: g2.classes.iter().map(|&c| costs.node_indel_cost(c)).collect(),
        choices,
        assign: vec![None; n1],
        used: vec![false; n2],
        bound: seed.distance,
        best: seed.distance,
        best_mapping: seed.mapping.expect("approximation returns a mapping"),
    };
    search.run(0, 0.0);
    Ok(GedResult {
        distance: search.best,
        mapping: Some(search.best_mapping),
        is_exact: true,
    })
}
