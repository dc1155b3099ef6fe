//! Cosine retrieval over graph embeddings, GED-derived golden rankings and
//! the ranking metrics used to compare them.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ged::DistanceMatrix;
use crate::numeric::exact_sum;
use crate::rng::{stream_rng, Stream};

/// Size of the relevant set taken from the top of each golden ranking.
pub const DEFAULT_RELEVANT_TOP: usize = 50;
pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("embedding {id} has dimension {got}, expected {expected}")]
    Dimension { id: usize, expected: usize, got: usize },
    #[error("embeddings and distance matrix disagree: {0}")]
    Alignment(String),
    #[error("cut-off k must be at least 1")]
    BadK,
    #[error("distance {value} for candidate {id} is not a finite non-negative number")]
    BadDistance { id: usize, value: f64 },
}

/// Candidates in descending score order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: usize,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Graded relevance per candidate (absent means 0), the binary relevant
/// set, and the grades in ideal order for normalising DCG.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceAssignment {
    pub grades: HashMap<usize, f64>,
    pub relevant: HashSet<usize>,
    pub ideal_grades: Vec<f64>,
}

impl RelevanceAssignment {
    pub fn grade(&self, id: usize) -> f64 {
        self.grades.get(&id).copied().unwrap_or(0.0)
    }

    /// Only `id` is relevant, with grade 1.
    pub fn single(id: usize) -> Self {
        Self {
            grades: HashMap::from([(id, 1.0)]),
            relevant: HashSet::from([id]),
            ideal_grades: vec![1.0],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    exact_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

fn sort_desc(query: usize, mut scored: Vec<(usize, f64)>) -> RankedList {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    RankedList {
        query,
        candidates: scored.iter().map(|c| c.0).collect(),
        scores: scored.iter().map(|c| c.1).collect(),
    }
}

/// Ranks `candidates` (id, vector) by cosine similarity to `query_vec`,
/// highest first, ties by ascending id. Zero vectors score 0.
pub fn cosine_rank(
    query: usize,
    query_vec: &[f64],
    candidates: &[(usize, &[f64])],
) -> Result<RankedList, MetricsError> {
    let dim = query_vec.len();
    let mut scored = Vec::with_capacity(candidates.len());
    for &(id, v) in candidates {
        if v.len() != dim {
            return Err(MetricsError::Dimension {
                id,
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().all(|&x| x == 0.0) {
            log::warn!("candidate {id} has a zero embedding; scoring it 0");
        }
        scored.push((id, cosine_similarity(query_vec, v)));
    }
    Ok(sort_desc(query, scored))
}

/// Inverse GED similarity used for graded relevance.
pub fn inverse_score(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

/// Golden ranking of `candidates` by ascending distance (ties by id), with
/// grades min-max scaled into [1, 10] over the candidate set and the first
/// `top` marked relevant. `distances` is indexed by candidate id.
pub fn golden_ranking(
    query: usize,
    distances: &[f64],
    candidates: &[usize],
    top: usize,
) -> Result<(RankedList, RelevanceAssignment), MetricsError> {
    for &c in candidates {
        let d = distances[c];
        if !(d.is_finite() && d >= 0.0) {
            return Err(MetricsError::BadDistance { id: c, value: d });
        }
    }
    let scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&c| (c, inverse_score(distances[c])))
        .collect();
    let ranked = sort_desc(query, scored);
    let (lo, hi) = ranked
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let grade = |s: f64| {
        if hi > lo {
            1.0 + 9.0 * (s - lo) / (hi - lo)
        } else {
            10.0
        }
    };
    let grades: HashMap<usize, f64> = ranked
        .candidates
        .iter()
        .zip(&ranked.scores)
        .map(|(&c, &s)| (c, grade(s)))
        .collect();
    let ideal_grades = ranked.scores.iter().map(|&s| grade(s)).collect();
    let relevant = ranked.candidates.iter().take(top).copied().collect();
    Ok((
        ranked,
        RelevanceAssignment {
            grades,
            relevant,
            ideal_grades,
        },
    ))
}

fn dcg(grades: impl Iterator<Item = f64>) -> f64 {
    exact_sum(
        grades
            .enumerate()
            .map(|(i, g)| (2f64.powf(g) - 1.0) / ((i + 2) as f64).log2()),
    )
}

pub fn ndcg_at_k(ranked: &RankedList, rel: &RelevanceAssignment, k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK);
    }
    let ideal = dcg(rel.ideal_grades.iter().copied().take(k));
    if ideal == 0.0 {
        return Ok(0.0);
    }
    let got = dcg(ranked.candidates.iter().take(k).map(|&c| rel.grade(c)));
    Ok(got / ideal)
}

/// Precision summed at relevant positions within the top `k`, divided by
/// `min(|relevant|, k)`.
pub fn average_precision_at_k(
    ranked: &RankedList,
    rel: &RelevanceAssignment,
    k: usize,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK);
    }
    let denom = rel.relevant.len().min(k);
    if denom == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut precisions = Vec::new();
    for (i, c) in ranked.candidates.iter().take(k).enumerate() {
        if rel.relevant.contains(c) {
            hits += 1;
            precisions.push(hits as f64 / (i + 1) as f64);
        }
    }
    Ok(exact_sum(precisions) / denom as f64)
}

/// Reciprocal rank of the first relevant candidate anywhere in the list.
pub fn reciprocal_rank(ranked: &RankedList, rel: &RelevanceAssignment) -> f64 {
    ranked
        .candidates
        .iter()
        .position(|c| rel.relevant.contains(c))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
}

/// Per-metric means over the evaluated queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub skipped: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn value(&self, metric: &str, k: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    /// `metric,k,value`; `k` is empty for rank-based metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{:?}\n", r.metric, k, r.value));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// `query_id,rank,candidate_id,score` with 1-based ranks.
pub fn rankings_csv(lists: &[RankedList]) -> String {
    let mut out = String::from("query_id,rank,candidate_id,score\n");
    for l in lists {
        for (r, (c, s)) in l.candidates.iter().zip(&l.scores).enumerate() {
            out.push_str(&format!("{},{},{},{:?}\n", l.query, r + 1, c, s));
        }
    }
    out
}

fn check_alignment(embeddings: &[Vec<f64>], ged: &DistanceMatrix) -> Result<usize, MetricsError> {
    if embeddings.len() != ged.len() {
        return Err(MetricsError::Alignment(format!(
            "{} embeddings but a {}-graph distance matrix",
            embeddings.len(),
            ged.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    for (id, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(MetricsError::Dimension {
                id,
                expected: dim,
                got: e.len(),
            });
        }
    }
    Ok(dim)
}

fn rank_query(embeddings: &[Vec<f64>], q: usize, candidates: &[usize]) -> Result<RankedList, MetricsError> {
    let cands: Vec<(usize, &[f64])> = candidates.iter().map(|&c| (c, embeddings[c].as_slice())).collect();
    cosine_rank(q, &embeddings[q], &cands)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        exact_sum(v.iter().copied()) / v.len() as f64
    }
}

struct QueryScores {
    ndcg: Vec<f64>,
    map: Vec<f64>,
    rr: f64,
}

fn assemble(
    prefix: &str,
    ndcg_ks: &[usize],
    map_ks: &[usize],
    per_query: &[QueryScores],
    skipped: usize,
) -> MetricsReport {
    let mut rows = Vec::new();
    for (i, &k) in ndcg_ks.iter().enumerate() {
        rows.push(MetricRow {
            metric: format!("ndcg{prefix}"),
            k: Some(k),
            value: mean(per_query.iter().map(|q| q.ndcg[i])),
        });
    }
    for (i, &k) in map_ks.iter().enumerate() {
        rows.push(MetricRow {
            metric: format!("map{prefix}"),
            k: Some(k),
            value: mean(per_query.iter().map(|q| q.map[i])),
        });
    }
    rows.push(MetricRow {
        metric: format!("mrr{prefix}"),
        k: None,
        value: mean(per_query.iter().map(|q| q.rr)),
    });
    MetricsReport {
        queries: per_query.len(),
        skipped,
        rows,
    }
}

/// Every graph queries all others; embeddings rank by cosine, the distance
/// matrix supplies the golden ranking. Also returns the predicted rankings.
pub fn evaluate_run(
    embeddings: &[Vec<f64>],
    ged: &DistanceMatrix,
    ks: &[usize],
    top: usize,
) -> Result<(MetricsReport, Vec<RankedList>), MetricsError> {
    if ks.contains(&0) {
        return Err(MetricsError::BadK);
    }
    check_alignment(embeddings, ged)?;
    let n = embeddings.len();
    let results = (0..n)
        .into_par_iter()
        .map(|q| {
            let candidates: Vec<usize> = (0..n).filter(|&c| c != q).collect();
            let ranked = rank_query(embeddings, q, &candidates)?;
            let (_, rel) = golden_ranking(q, &ged.row(q), &candidates, top)?;
            let scores = QueryScores {
                ndcg: ks
                    .iter()
                    .map(|&k| ndcg_at_k(&ranked, &rel, k))
                    .collect::<Result<_, _>>()?,
                map: ks
                    .iter()
                    .map(|&k| average_precision_at_k(&ranked, &rel, k))
                    .collect::<Result<_, _>>()?,
                rr: reciprocal_rank(&ranked, &rel),
            };
            Ok((scores, ranked))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let (scores, lists): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((assemble("", ks, ks, &scores, 0), lists))
}

/// Candidates with a different label than `query`, ranked by cosine, and
/// the GED-closest of them as the single relevant item. `None` when no
/// candidate has a different label or the query is unlabelled.
pub fn counterfactual_rank(
    query: usize,
    labels: &[Option<String>],
    embeddings: &[Vec<f64>],
    ged: &DistanceMatrix,
) -> Result<Option<(RankedList, RelevanceAssignment)>, MetricsError> {
    let Some(own) = labels[query].as_ref() else {
        return Ok(None);
    };
    let candidates: Vec<usize> = (0..labels.len())
        .filter(|&c| c != query && labels[c].as_ref().is_some_and(|l| l != own))
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let target = candidates
        .iter()
        .copied()
        .min_by(|&a, &b| ged.get(query, a).total_cmp(&ged.get(query, b)).then(a.cmp(&b)))
        .expect("nonempty");
    let ranked = rank_query(embeddings, query, &candidates)?;
    Ok(Some((ranked, RelevanceAssignment::single(target))))
}

/// Binary-relevance metrics of the counterfactual protocol: NDCG@1, AP@3 and
/// reciprocal rank, reported as `ndcg_b`, `map_b` and `mrr_b`.
pub fn evaluate_counterfactual(
    embeddings: &[Vec<f64>],
    ged: &DistanceMatrix,
    labels: &[Option<String>],
) -> Result<(MetricsReport, Vec<RankedList>), MetricsError> {
    check_alignment(embeddings, ged)?;
    if labels.len() != embeddings.len() {
        return Err(MetricsError::Alignment(format!(
            "{} labels for {} embeddings",
            labels.len(),
            embeddings.len()
        )));
    }
    let results = (0..labels.len())
        .into_par_iter()
        .map(|q| {
            let Some((ranked, rel)) = counterfactual_rank(q, labels, embeddings, ged)? else {
                return Ok(None);
            };
            let scores = QueryScores {
                ndcg: vec![ndcg_at_k(&ranked, &rel, 1)?],
                map: vec![average_precision_at_k(&ranked, &rel, 3)?],
                rr: reciprocal_rank(&ranked, &rel),
            };
            Ok(Some((scores, ranked)))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} queries have no candidate with a different label and were skipped");
    }
    let (scores, lists): (Vec<_>, Vec<_>) = results.into_iter().flatten().unzip();
    Ok((assemble("_b", &[1], &[3], &scores, skipped), lists))
}

/// Uniform random vectors in [-1, 1), the no-learning retrieval baseline.
pub fn random_embeddings(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, Stream::Baseline);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(c: &[usize]) -> RankedList {
        RankedList {
            query: 99,
            candidates: c.to_vec(),
            scores: (0..c.len()).map(|i| -(i as f64)).collect(),
        }
    }

    #[test]
    fn cosine_rank_basics() {
        let q = [1.0, 0.0];
        let a = [2.0, 0.0];
        let b = [0.0, 1.0];
        let c = [1.0, 1.0];
        let r = cosine_rank(0, &q, &[(3, &b), (1, &a), (2, &c)]).unwrap();
        assert_eq!(r.candidates, vec![1, 2, 3]);
        assert_eq!(r.scores[0], 1.0);
        assert_eq!(r.scores[2], 0.0);
        let bad = [1.0];
        assert!(cosine_rank(0, &q, &[(1, &bad)]).is_err());
    }

    #[test]
    fn ties_break_by_candidate_id() {
        let q = [1.0, 0.0];
        let v = [1.0, 1.0];
        let r = cosine_rank(0, &q, &[(7, &v), (2, &v), (5, &v)]).unwrap();
        assert_eq!(r.candidates, vec![2, 5, 7]);
    }

    #[test]
    fn golden_grades_and_cutoff() {
        let d: Vec<f64> = (0..61).map(|i| i as f64 * 0.5).collect();
        let cands: Vec<usize> = (1..61).collect();
        let (r, rel) = golden_ranking(0, &d, &cands, 50).unwrap();
        assert_eq!(r.candidates[0], 1);
        assert_eq!(rel.grade(1), 10.0);
        assert_eq!(rel.grade(60), 1.0);
        assert_eq!(rel.relevant.len(), 50);
        assert!(rel.relevant.contains(&50) && !rel.relevant.contains(&51));

        let (_, flat) = golden_ranking(0, &[0.0, 2.0, 2.0], &[1, 2], 50).unwrap();
        assert_eq!(flat.grade(1), 10.0);
        assert_eq!(flat.grade(2), 10.0);
        assert!(golden_ranking(0, &[0.0, f64::NAN], &[1], 50).is_err());
    }

    #[test]
    fn ndcg_worst_first_by_hand() {
        let rel = RelevanceAssignment {
            grades: HashMap::from([(0, 10.0), (1, 5.0), (2, 1.0)]),
            relevant: HashSet::from([0, 1, 2]),
            ideal_grades: vec![10.0, 5.0, 1.0],
        };
        let l3 = 3f64.log2();
        let ideal = 1023.0 + 31.0 / l3 + 1.0 / 2.0;
        let got = 1.0 + 31.0 / l3 + 1023.0 / 2.0;
        let v = ndcg_at_k(&list(&[2, 1, 0]), &rel, 3).unwrap();
        assert!((v - got / ideal).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&list(&[0, 1, 2]), &rel, 3).unwrap(), 1.0);
        assert!(ndcg_at_k(&list(&[0]), &rel, 0).is_err());
    }

    #[test]
    fn average_precision_conventions() {
        let one = RelevanceAssignment::single(4);
        assert_eq!(average_precision_at_k(&list(&[1, 4, 2]), &one, 3).unwrap(), 0.5);
        let all = RelevanceAssignment {
            grades: HashMap::new(),
            relevant: HashSet::from([1, 2, 3, 4]),
            ideal_grades: vec![],
        };
        assert_eq!(average_precision_at_k(&list(&[1, 2, 3]), &all, 3).unwrap(), 1.0);
        // MAP@1 is decided by the first item alone
        assert_eq!(average_precision_at_k(&list(&[9, 1, 2]), &all, 1).unwrap(), 0.0);
        let none = RelevanceAssignment {
            grades: HashMap::new(),
            relevant: HashSet::new(),
            ideal_grades: vec![],
        };
        assert_eq!(average_precision_at_k(&list(&[1]), &none, 3).unwrap(), 0.0);
    }

    #[test]
    fn reciprocal_rank_cases() {
        let one = RelevanceAssignment::single(4);
        assert_eq!(reciprocal_rank(&list(&[4, 1]), &one), 1.0);
        assert_eq!(reciprocal_rank(&list(&[1, 2, 3, 4]), &one), 0.25);
        assert_eq!(reciprocal_rank(&list(&[1, 2]), &one), 0.0);
    }

    #[test]
    fn oracle_embeddings_score_perfectly() {
        // points on a line: distance = |i - j|, embeddings at angles that
        // preserve the order
        let n = 6;
        let upper = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (j - i) as f64))
            .collect();
        let ged = DistanceMatrix::from_upper(n, upper).unwrap();
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = i as f64 * 0.2;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let (report, lists) = evaluate_run(&emb, &ged, &DEFAULT_KS, 50).unwrap();
        assert_eq!(lists.len(), n);
        assert_eq!(report.value("mrr", None), Some(1.0));
        for k in [1, 3, 5] {
            let v = report.value("ndcg", Some(k)).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "k={k} {v}");
        }
        assert_eq!(report.rows.len(), 9);
        assert!(report.to_csv().contains("mrr,,1.0\n"));
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let ged = DistanceMatrix::from_upper(2, vec![1.0]).unwrap();
        assert!(matches!(
            evaluate_run(&[vec![1.0]], &ged, &[1], 50),
            Err(MetricsError::Alignment(_))
        ));
    }

    #[test]
    fn counterfactual_filters_and_skips() {
        let ged = DistanceMatrix::from_upper(3, vec![1.0, 2.0, 0.5]).unwrap();
        let emb = vec![vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0]];
        let labels = vec![Some("a".to_string()), Some("a".to_string()), Some("b".to_string())];
        let (ranked, rel) = counterfactual_rank(0, &labels, &emb, &ged).unwrap().unwrap();
        assert_eq!(ranked.candidates, vec![2]);
        assert!(rel.relevant.contains(&2));
        let same = vec![Some("a".to_string()); 3];
        assert!(counterfactual_rank(0, &same, &emb, &ged).unwrap().is_none());
        let (report, _) = evaluate_counterfactual(&emb, &ged, &labels).unwrap();
        assert_eq!(report.value("ndcg_b", Some(1)), Some(1.0));
        assert_eq!(report.value("map_b", Some(3)), Some(1.0));
        assert_eq!(report.queries, 3);
    }
}
