use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    read_text, sha256_file, sibling, write_file, EmbeddingFile, EvalSettings, GedSettings,
    Manifest, ManifestBuilder, PipelineError, Result, RunConfig,
};
use crate::embeddings::{load_table, synth_table, ClassEmbeddingTable};
use crate::ged::{allpairs_ged, DistanceMatrix, GedCostModel, GedMode};
use crate::graph::{build_matrices, preprocess, read_records_str, GraphFile, GraphMatrices};
use crate::metrics::{evaluate_counterfactual, evaluate_run, rankings_csv, MetricsReport};
use crate::model::{loss_log_csv, train, GnnKind, ModelConfig, Scenir};
use crate::synthetic::{corpus_to_json, synth_corpus, SynthCorpusConfig};

/// Graphs loaded from a preprocessed file with their matrices and the file
/// hash that identifies the corpus downstream.
pub struct LoadedGraphs {
    pub file: GraphFile,
    pub hash: String,
    pub matrices: Vec<GraphMatrices>,
}

pub fn load_graphs(path: &Path, table: &ClassEmbeddingTable) -> Result<LoadedGraphs> {
    let file = GraphFile::load(path)?;
    if file.graphs.is_empty() {
        return Err(PipelineError::Data(format!("{} holds no graphs", path.display())));
    }
    let matrices = file
        .graphs
        .iter()
        .map(|g| build_matrices(g, table))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(LoadedGraphs {
        file,
        hash: sha256_file(path)?,
        matrices,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub histogram: BTreeMap<usize, usize>,
}

impl Summary {
    fn of(values: &[usize]) -> Self {
        let mut histogram = BTreeMap::new();
        for &v in values {
            *histogram.entry(v).or_insert(0) += 1;
        }
        Self {
            mean: if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<usize>() as f64 / values.len() as f64
            },
            min: values.iter().copied().min().unwrap_or(0),
            max: values.iter().copied().max().unwrap_or(0),
            histogram,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub image_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub records: usize,
    pub kept: usize,
    pub dropped: Vec<DroppedRecord>,
    pub nodes: Summary,
    pub edges: Summary,
    pub max_path_length: Summary,
}

pub struct PreprocessArgs {
    pub corpus: PathBuf,
    pub table: PathBuf,
    pub out: PathBuf,
}

/// Reifies predicates and strips isolated nodes from every record. Bad
/// records are logged and skipped; the stats file lists them.
pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<PreprocessStats> {
    let table = load_table(&a.table)?;
    let records = read_records_str(&read_text(&a.corpus)?)?;
    let mut graphs = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for raw in &records {
        match preprocess(raw, &table) {
            Ok(g) => graphs.push(g),
            Err(e) => {
                log::warn!("dropping record `{}`: {e}", raw.image_id);
                dropped.push(DroppedRecord {
                    image_id: raw.image_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let stats = PreprocessStats {
        records: records.len(),
        kept: graphs.len(),
        dropped,
        nodes: Summary::of(&graphs.iter().map(|g| g.node_count()).collect::<Vec<_>>()),
        edges: Summary::of(&graphs.iter().map(|g| g.edges.len()).collect::<Vec<_>>()),
        max_path_length: Summary::of(&graphs.iter().map(|g| g.max_path_length()).collect::<Vec<_>>()),
    };
    write_file(&a.out, GraphFile::new(graphs).to_json())?;
    let stats_path = sibling(&a.out, ".stats.json");
    write_file(&stats_path, serde_json::to_string_pretty(&stats).expect("stats serialise"))?;
    let corpus_hash = sha256_file(&a.out)?;
    let manifest = ManifestBuilder::new("preprocess", serde_json::Value::Null)
        .input("corpus", &a.corpus)?
        .input("table", &a.table)?
        .corpus(corpus_hash);
    manifest.write(&a.out)?;
    manifest.write(&stats_path)?;
    log::info!("kept {} of {} records", stats.kept, stats.records);
    Ok(stats)
}

/// `config` with widths tied to the table and the run seed applied.
pub fn effective_model_config(run: &RunConfig, table: &ClassEmbeddingTable) -> ModelConfig {
    let mut cfg = run.model.clone();
    cfg.input_dim = table.dim();
    cfg.feature_decoder_out = table.dim();
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg
}

pub struct TrainArgs {
    pub graphs: PathBuf,
    pub table: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
}

/// Trains and writes the checkpoint plus `<out>.loss.csv`.
pub fn cmd_train(a: &TrainArgs) -> Result<Scenir> {
    let table = load_table(&a.table)?;
    let graphs = load_graphs(&a.graphs, &table)?;
    let cfg = effective_model_config(&a.config, &table);
    let outcome = train(&graphs.matrices, cfg.clone())?;
    write_file(&a.out, outcome.model.to_bytes())?;
    let log_path = sibling(&a.out, ".loss.csv");
    write_file(&log_path, loss_log_csv(&outcome.log))?;
    let manifest = ManifestBuilder::new("train", &cfg)
        .input("graphs", &a.graphs)?
        .input("table", &a.table)?
        .corpus(graphs.hash);
    manifest.write(&a.out)?;
    manifest.write(&log_path)?;
    Ok(outcome.model)
}

pub struct EmbedArgs {
    pub model: PathBuf,
    pub graphs: PathBuf,
    pub table: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_embed(a: &EmbedArgs) -> Result<EmbeddingFile> {
    let table = load_table(&a.table)?;
    let model = Scenir::load(&a.model)?;
    if model.config.input_dim != table.dim() {
        return Err(PipelineError::Data(format!(
            "model expects {}-dimensional features, table has {}",
            model.config.input_dim,
            table.dim()
        )));
    }
    let graphs = load_graphs(&a.graphs, &table)?;
    let vectors = model.embed_all(&graphs.matrices)?;
    let ids = graphs.file.graphs.iter().map(|g| g.graph_id.clone()).collect();
    let file = EmbeddingFile::new(graphs.hash.clone(), ids, vectors);
    write_file(&a.out, file.to_json())?;
    ManifestBuilder::new("embed", &model.config)
        .input("model", &a.model)?
        .input("graphs", &a.graphs)?
        .input("table", &a.table)?
        .corpus(graphs.hash)
        .write(&a.out)?;
    Ok(file)
}

pub fn cost_model(table: &ClassEmbeddingTable, s: &GedSettings) -> Result<GedCostModel> {
    Ok(GedCostModel::new(table)?.with_edge_costs(s.edge_indel_cost, s.edge_sub_cost)?)
}

pub struct GedArgs {
    pub graphs: PathBuf,
    pub table: PathBuf,
    pub out: PathBuf,
    pub settings: GedSettings,
}

/// All-pairs distances written as the binary matrix plus a CSV next to it.
pub fn cmd_ged(a: &GedArgs) -> Result<DistanceMatrix> {
    let table = load_table(&a.table)?;
    let file = GraphFile::load(&a.graphs)?;
    let costs = cost_model(&table, &a.settings)?;
    let mode = if a.settings.exact {
        GedMode::Exact {
            node_budget: a.settings.node_budget,
        }
    } else {
        GedMode::Approx
    };
    let compute = || allpairs_ged(&file.graphs, &costs, mode);
    let matrix = if a.settings.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.settings.threads)
            .build()
            .map_err(|e| PipelineError::Usage(e.to_string()))?
            .install(compute)?
    } else {
        compute()?
    };
    write_file(&a.out, matrix.to_bytes())?;
    let csv = a.out.with_extension("csv");
    write_file(&csv, matrix.to_csv())?;
    let mut echo = a.settings.clone();
    echo.threads = 0;
    let manifest = ManifestBuilder::new("ged", &echo)
        .input("graphs", &a.graphs)?
        .input("table", &a.table)?
        .corpus(sha256_file(&a.graphs)?);
    manifest.write(&a.out)?;
    manifest.write(&csv)?;
    Ok(matrix)
}

/// Loads embeddings and a distance matrix after checking that both were
/// computed from the same graph file.
pub fn load_aligned(embeddings: &Path, ged: &Path) -> Result<(EmbeddingFile, DistanceMatrix, String)> {
    let emb = EmbeddingFile::load(embeddings)?;
    let emb_manifest = Manifest::load_for(embeddings)?;
    let ged_manifest = Manifest::load_for(ged)?;
    let matrix = DistanceMatrix::load(ged)?;
    let ged_hash = ged_manifest
        .corpus_hash
        .ok_or_else(|| PipelineError::Integrity("distance matrix manifest has no corpus hash".into()))?;
    if emb_manifest.corpus_hash.as_deref() != Some(emb.corpus_hash.as_str()) {
        return Err(PipelineError::Integrity(
            "embeddings file and its manifest name different corpora".into(),
        ));
    }
    if emb.corpus_hash != ged_hash {
        return Err(PipelineError::Integrity(format!(
            "embeddings come from corpus {} but the distance matrix from {}",
            &emb.corpus_hash[..12.min(emb.corpus_hash.len())],
            &ged_hash[..12.min(ged_hash.len())]
        )));
    }
    if emb.vectors.len() != matrix.len() {
        return Err(PipelineError::Integrity(format!(
            "{} embeddings for a {}-graph distance matrix",
            emb.vectors.len(),
            matrix.len()
        )));
    }
    Ok((emb, matrix, ged_hash))
}

fn write_report(
    out: &Path,
    report: &MetricsReport,
    lists: &[crate::metrics::RankedList],
    manifest: ManifestBuilder,
) -> Result<()> {
    let csv = sibling(out, ".csv");
    let json = sibling(out, ".json");
    let rankings = sibling(out, ".rankings.csv");
    write_file(&csv, report.to_csv())?;
    write_file(&json, report.to_json())?;
    write_file(&rankings, rankings_csv(lists))?;
    for p in [&csv, &json, &rankings] {
        manifest.write(p)?;
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub embeddings: PathBuf,
    pub ged: PathBuf,
    /// Prefix for `<out>.csv`, `<out>.json` and `<out>.rankings.csv`.
    pub out: PathBuf,
    pub settings: EvalSettings,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<MetricsReport> {
    let (emb, matrix, hash) = load_aligned(&a.embeddings, &a.ged)?;
    let (report, lists) = evaluate_run(&emb.vectors, &matrix, &a.settings.ks, a.settings.relevant_top)?;
    let manifest = ManifestBuilder::new("evaluate", &a.settings)
        .input("embeddings", &a.embeddings)?
        .input("ged", &a.ged)?
        .corpus(hash);
    write_report(&a.out, &report, &lists, manifest)?;
    Ok(report)
}

pub struct CounterfactualArgs {
    pub embeddings: PathBuf,
    pub ged: PathBuf,
    pub graphs: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_counterfactual(a: &CounterfactualArgs) -> Result<MetricsReport> {
    let (emb, matrix, hash) = load_aligned(&a.embeddings, &a.ged)?;
    if sha256_file(&a.graphs)? != hash {
        return Err(PipelineError::Integrity(
            "the graph file differs from the one the embeddings were computed on".into(),
        ));
    }
    let labels: Vec<Option<String>> = GraphFile::load(&a.graphs)?
        .graphs
        .into_iter()
        .map(|g| g.scene_label)
        .collect();
    if labels.iter().all(Option::is_none) {
        return Err(PipelineError::Data("no graph carries a scene label".into()));
    }
    let (report, lists) = evaluate_counterfactual(&emb.vectors, &matrix, &labels)?;
    let manifest = ManifestBuilder::new("counterfactual", serde_json::Value::Null)
        .input("embeddings", &a.embeddings)?
        .input("ged", &a.ged)?
        .input("graphs", &a.graphs)?
        .corpus(hash);
    write_report(&a.out, &report, &lists, manifest)?;
    Ok(report)
}

/// Named model variants. Grids: `table2` (module ablation: full model, then
/// inner-product decoders, then also no discriminator, then that plus no edge
/// or no feature decoder), `layers` (1 to 4 encoder layers), `encoder`
/// (split or unified) and `gnn` (GIN or GCN).
pub fn ablation_grid(grids: &[String], base: &ModelConfig) -> Result<Vec<(String, ModelConfig)>> {
    let mut out: Vec<(String, ModelConfig)> = Vec::new();
    let mut push = |name: String, cfg: ModelConfig| {
        if !out.iter().any(|(n, _)| *n == name) {
            out.push((name, cfg));
        }
    };
    for grid in grids {
        match grid.as_str() {
            "table2" => {
                let no_mlp = ModelConfig {
                    use_mlp_decoders: false,
                    ..base.clone()
                };
                let no_disc = ModelConfig {
                    use_discriminator: false,
                    ..no_mlp.clone()
                };
                push("scenir".into(), base.clone());
                push("-mlp-decoder".into(), no_mlp);
                push("-discriminator".into(), no_disc.clone());
                push(
                    "-edge-decoder".into(),
                    ModelConfig {
                        use_edge_decoder: false,
                        ..no_disc.clone()
                    },
                );
                push(
                    "-feature-decoder".into(),
                    ModelConfig {
                        use_feature_decoder: false,
                        ..no_disc
                    },
                );
            }
            "layers" => {
                for l in 1..=4 {
                    push(
                        format!("layers-{l}"),
                        ModelConfig {
                            encoder_layers: l,
                            ..base.clone()
                        },
                    );
                }
            }
            "encoder" => {
                push("split".into(), ModelConfig { split_encoder: true, ..base.clone() });
                push("unified".into(), ModelConfig { split_encoder: false, ..base.clone() });
            }
            "gnn" => {
                push("gin".into(), ModelConfig { gnn_kind: GnnKind::Gin, ..base.clone() });
                push("gcn".into(), ModelConfig { gnn_kind: GnnKind::Gcn, ..base.clone() });
            }
            other => {
                return Err(PipelineError::Usage(format!(
                    "unknown ablation grid `{other}` (expected table2, layers, encoder or gnn)"
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    pub outcome: std::result::Result<MetricsReport, String>,
}

pub struct AblateArgs {
    pub train_graphs: PathBuf,
    pub test_graphs: PathBuf,
    pub table: PathBuf,
    pub ged: PathBuf,
    pub out: PathBuf,
    pub grids: Vec<String>,
    pub seeds: Vec<u64>,
    /// Headline metric for the summary table, e.g. `ndcg@3`.
    pub metric: String,
    pub config: RunConfig,
}

/// Trains and evaluates each variant for each seed on the held-out graphs.
/// Variant failures are reported in the table rather than aborting.
pub fn run_ablation(
    train_set: &[GraphMatrices],
    test_set: &[GraphMatrices],
    ged: &DistanceMatrix,
    variants: &[(String, ModelConfig)],
    seeds: &[u64],
    eval: &EvalSettings,
) -> Vec<AblationCell> {
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let (name, cfg) = &variants[v];
            let cfg = ModelConfig { seed, ..cfg.clone() };
            let outcome = train(train_set, cfg)
                .map_err(|e| e.to_string())
                .and_then(|o| o.model.embed_all(test_set).map_err(|e| e.to_string()))
                .and_then(|emb| {
                    evaluate_run(&emb, ged, &eval.ks, eval.relevant_top)
                        .map(|(r, _)| r)
                        .map_err(|e| e.to_string())
                });
            if let Err(e) = &outcome {
                log::warn!("variant {name} seed {seed} failed: {e}");
            }
            AblationCell {
                variant: name.clone(),
                seed,
                outcome,
            }
        })
        .collect()
}

/// Parses a headline metric such as `ndcg@3` or `mrr`.
pub fn parse_metric(spec: &str) -> Result<(String, Option<usize>)> {
    let bad = || PipelineError::Usage(format!("bad metric `{spec}` (expected e.g. ndcg@3 or mrr)"));
    match spec.split_once('@') {
        Some((m, k)) => Ok((m.to_string(), Some(k.parse().map_err(|_| bad())?))),
        None if spec.is_empty() => Err(bad()),
        None => Ok((spec.to_string(), None)),
    }
}

fn metric_label(metric: &str, k: Option<usize>) -> String {
    match k {
        Some(k) => format!("{metric}@{k}"),
        None => metric.to_string(),
    }
}

/// Median of the finite values, NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// One row per variant: the headline metric for each seed, its median over
/// successful seeds and a status column that names any failures.
pub fn ablation_csv(
    cells: &[AblationCell],
    variants: &[(String, ModelConfig)],
    seeds: &[u64],
    metric: &str,
    k: Option<usize>,
) -> String {
    let mut out = String::from("variant,metric");
    for s in seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push_str(",median,status\n");
    let label = metric_label(metric, k);
    for (name, _) in variants {
        let mut values = Vec::new();
        let mut failures = Vec::new();
        out.push_str(&format!("{name},{label}"));
        for s in seeds {
            let cell = cells
                .iter()
                .find(|c| &c.variant == name && c.seed == *s)
                .expect("one cell per variant and seed");
            match &cell.outcome {
                Ok(rep) => {
                    let v = rep.value(metric, k).unwrap_or(f64::NAN);
                    values.push(v);
                    out.push_str(&format!(",{v:?}"));
                }
                Err(e) => {
                    failures.push(format!("seed {s}: {e}"));
                    out.push(',');
                }
            }
        }
        out.push_str(&format!(",{:?},", median(&values)));
        if failures.is_empty() {
            out.push_str("ok");
        } else {
            out.push_str(&format!("\"failed: {}\"", failures.join("; ").replace('"', "'")));
        }
        out.push('\n');
    }
    out
}

/// Every metric of every successful run: `variant,seed,metric,k,value`.
pub fn ablation_full_csv(cells: &[AblationCell]) -> String {
    let mut out = String::from("variant,seed,metric,k,value\n");
    for c in cells {
        if let Ok(rep) = &c.outcome {
            for r in &rep.rows {
                let k = r.k.map(|k| k.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{k},{:?}\n", c.variant, c.seed, r.metric, r.value));
            }
        }
    }
    out
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<Vec<AblationCell>> {
    if a.seeds.is_empty() {
        return Err(PipelineError::Usage("at least one seed is required".into()));
    }
    let table = load_table(&a.table)?;
    let train_set = load_graphs(&a.train_graphs, &table)?;
    let test_set = load_graphs(&a.test_graphs, &table)?;
    let ged_manifest = Manifest::load_for(&a.ged)?;
    if ged_manifest.corpus_hash.as_deref() != Some(test_set.hash.as_str()) {
        return Err(PipelineError::Integrity(
            "the distance matrix was not computed on the test graphs".into(),
        ));
    }
    let ged = DistanceMatrix::load(&a.ged)?;
    let (metric, k) = parse_metric(&a.metric)?;
    let base = effective_model_config(&a.config, &table);
    let variants = ablation_grid(&a.grids, &base)?;
    let cells = run_ablation(
        &train_set.matrices,
        &test_set.matrices,
        &ged,
        &variants,
        &a.seeds,
        &a.config.eval,
    );
    let full = sibling(&a.out, ".full.csv");
    write_file(&a.out, ablation_csv(&cells, &variants, &a.seeds, &metric, k))?;
    write_file(&full, ablation_full_csv(&cells))?;
    let manifest = ManifestBuilder::new("ablate", &a.config)
        .input("train_graphs", &a.train_graphs)?
        .input("test_graphs", &a.test_graphs)?
        .input("table", &a.table)?
        .input("ged", &a.ged)?
        .corpus(test_set.hash);
    manifest.write(&a.out)?;
    manifest.write(&full)?;
    Ok(cells)
}

pub struct SynthTableArgs {
    pub seed: u64,
    pub objects: usize,
    pub predicates: usize,
    pub dim: usize,
    pub out: PathBuf,
    pub binary: bool,
}

pub fn cmd_synth_table(a: &SynthTableArgs) -> Result<ClassEmbeddingTable> {
    let table = synth_table(a.seed, a.objects, a.predicates, a.dim)
        .map_err(|e| PipelineError::Usage(e.to_string()))?;
    if a.binary {
        write_file(&a.out, table.to_binary())?;
    } else {
        write_file(&a.out, table.to_text())?;
    }
    #[derive(Serialize)]
    struct Echo {
        seed: u64,
        objects: usize,
        predicates: usize,
        dim: usize,
    }
    ManifestBuilder::new(
        "synth-table",
        Echo {
            seed: a.seed,
            objects: a.objects,
            predicates: a.predicates,
            dim: a.dim,
        },
    )
    .write(&a.out)?;
    Ok(table)
}

pub struct SynthCorpusArgs {
    pub table: PathBuf,
    pub out: PathBuf,
    pub config: SynthCorpusConfig,
}

/// Writes the corpus and `<out>.planted.csv` listing planted index pairs.
pub fn cmd_synth_corpus(a: &SynthCorpusArgs) -> Result<crate::synthetic::SynthCorpus> {
    let table = load_table(&a.table)?;
    let corpus = synth_corpus(&table, &a.config).map_err(|e| PipelineError::Usage(e.to_string()))?;
    write_file(&a.out, corpus_to_json(&corpus.records))?;
    let mut planted = String::from("source,copy\n");
    for (s, c) in &corpus.planted {
        planted.push_str(&format!("{s},{c}\n"));
    }
    let planted_path = sibling(&a.out, ".planted.csv");
    write_file(&planted_path, planted)?;
    let manifest = ManifestBuilder::new("synth-corpus", &a.config).input("table", &a.table)?;
    manifest.write(&a.out)?;
    manifest.write(&planted_path)?;
    Ok(corpus)
}
