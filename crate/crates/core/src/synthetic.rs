//! Seeded synthetic annotation corpora for tests and desk-scale runs.
//!
//! Every record is a connected object graph: a random spanning tree over the
//! objects plus a few extra relations. Planted pairs are a record and a copy
//! with one object's class replaced by another object class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::ClassEmbeddingTable;
use crate::graph::RawAnnotation;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusConfig {
    pub graphs: usize,
    /// Near-duplicate pairs among `graphs` (each pair uses two records).
    pub planted_pairs: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Relations added beyond the spanning tree, at most.
    pub extra_relations: usize,
    /// Number of scene labels; 0 leaves records unlabelled. With labels,
    /// objects lean towards a label-specific slice of the vocabulary and a
    /// planted copy receives a different label than its source.
    pub scene_classes: usize,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            graphs: 200,
            planted_pairs: 0,
            min_objects: 3,
            max_objects: 5,
            extra_relations: 1,
            scene_classes: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<RawAnnotation>,
    /// Index pairs (source, perturbed copy) into `records`.
    pub planted: Vec<(usize, usize)>,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid synthetic corpus settings: {0}")]
pub struct SynthError(String);

struct Generator<'t> {
    rng: ChaCha8Rng,
    objects: Vec<&'t str>,
    predicates: Vec<&'t str>,
    cfg: &'t SynthCorpusConfig,
}

impl Generator<'_> {
    fn object_for(&mut self, label: Option<usize>) -> String {
        let n = self.objects.len();
        let idx = match label {
            Some(c) if self.rng.gen_bool(0.7) => {
                let k = self.cfg.scene_classes;
                let lo = c * n / k;
                let hi = ((c + 1) * n / k).max(lo + 1);
                self.rng.gen_range(lo..hi)
            }
            _ => self.rng.gen_range(0..n),
        };
        self.objects[idx].to_string()
    }

    fn record(&mut self, image_id: String, label: Option<usize>) -> RawAnnotation {
        let k = self.rng.gen_range(self.cfg.min_objects..=self.cfg.max_objects);
        let objects: Vec<String> = (0..k).map(|_| self.object_for(label)).collect();
        let mut relations = Vec::new();
        for i in 1..k {
            let j = self.rng.gen_range(0..i);
            let p = self.predicates.choose(&mut self.rng).unwrap().to_string();
            if self.rng.gen_bool(0.5) {
                relations.push((i, p, j));
            } else {
                relations.push((j, p, i));
            }
        }
        let extra = self.rng.gen_range(0..=self.cfg.extra_relations);
        for _ in 0..extra {
            let s = self.rng.gen_range(0..k);
            let o = self.rng.gen_range(0..k);
            if s != o {
                let p = self.predicates.choose(&mut self.rng).unwrap().to_string();
                relations.push((s, p, o));
            }
        }
        RawAnnotation {
            image_id,
            objects,
            relations,
            scene_label: label.map(|c| format!("scene_{c}")),
        }
    }

    fn perturb(&mut self, src: &RawAnnotation, image_id: String, label: Option<usize>) -> RawAnnotation {
        let mut copy = src.clone();
        copy.image_id = image_id;
        let i = self.rng.gen_range(0..copy.objects.len());
        let current = copy.objects[i].clone();
        let choices: Vec<&&str> = self.objects.iter().filter(|o| **o != current).collect();
        copy.objects[i] = choices.choose(&mut self.rng).unwrap().to_string();
        copy.scene_label = label.map(|c| format!("scene_{c}"));
        copy
    }
}

/// Generates `cfg.graphs` records over the table's vocabulary, shuffled so
/// planted pairs are not adjacent.
pub fn synth_corpus(table: &ClassEmbeddingTable, cfg: &SynthCorpusConfig) -> Result<SynthCorpus, SynthError> {
    if cfg.min_objects < 2 || cfg.min_objects > cfg.max_objects {
        return Err(SynthError(format!(
            "object counts must satisfy 2 <= min <= max, got {}..{}",
            cfg.min_objects, cfg.max_objects
        )));
    }
    if 2 * cfg.planted_pairs > cfg.graphs {
        return Err(SynthError(format!(
            "{} planted pairs do not fit in {} graphs",
            cfg.planted_pairs, cfg.graphs
        )));
    }
    if table.object_class_count() < 2 || table.predicate_class_count() == 0 {
        return Err(SynthError(
            "the table needs at least two object classes and one predicate class".into(),
        ));
    }
    if cfg.scene_classes > table.object_class_count() {
        return Err(SynthError("more scene labels than object classes".into()));
    }
    let names = table.class_names();
    let (objects, predicates) = names.split_at(table.object_class_count());
    let mut gen = Generator {
        rng: stream_rng(cfg.seed, Stream::Corpus),
        objects: objects.iter().map(String::as_str).collect(),
        predicates: predicates.iter().map(String::as_str).collect(),
        cfg,
    };
    let labelled = cfg.scene_classes > 0;
    let mut records = Vec::with_capacity(cfg.graphs);
    let mut pair_slots = Vec::new();
    for p in 0..cfg.planted_pairs {
        let label = labelled.then(|| gen.rng.gen_range(0..cfg.scene_classes));
        let src = gen.record(format!("planted_{p:03}_a"), label);
        let other = match label {
            Some(c) if cfg.scene_classes > 1 => {
                Some((c + gen.rng.gen_range(1..cfg.scene_classes)) % cfg.scene_classes)
            }
            l => l,
        };
        let dup = gen.perturb(&src, format!("planted_{p:03}_b"), other);
        pair_slots.push((records.len(), records.len() + 1));
        records.push(src);
        records.push(dup);
    }
    for i in records.len()..cfg.graphs {
        let label = labelled.then(|| gen.rng.gen_range(0..cfg.scene_classes));
        let r = gen.record(format!("synth_{i:05}"), label);
        records.push(r);
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut gen.rng);
    let mut position = vec![0; records.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let shuffled = order.iter().map(|&i| records[i].clone()).collect();
    let planted = pair_slots
        .into_iter()
        .map(|(a, b)| (position[a], position[b]))
        .collect();
    Ok(SynthCorpus {
        records: shuffled,
        planted,
    })
}

/// JSON corpus text in the ingestion format.
pub fn corpus_to_json(records: &[RawAnnotation]) -> String {
    serde_json::to_string_pretty(records).expect("records serialise")
}
