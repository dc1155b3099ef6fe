use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::commands::*;
use super::{PipelineError, Result, RunConfig};
use crate::model::GnnKind;
use crate::synthetic::SynthCorpusConfig;

#[derive(Debug, Parser)]
#[command(name = "scenir", version, about = "Unsupervised scene-graph retrieval")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GnnArg {
    Gcn,
    Gin,
}

/// Run-config file plus the overrides shared by training commands.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub gnn: Option<GnnArg>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Share all but the last encoder layer between the mean and deviation branches.
    #[arg(long)]
    pub unified: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            rc.seed = self.seed;
        }
        let m = &mut rc.model;
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.lr {
            m.learning_rate = v;
        }
        if let Some(v) = self.gnn {
            m.gnn_kind = match v {
                GnnArg::Gcn => GnnKind::Gcn,
                GnnArg::Gin => GnnKind::Gin,
            };
        }
        if let Some(v) = self.layers {
            m.encoder_layers = v;
        }
        if let Some(v) = self.latent_dim {
            m.latent_dim = v;
        }
        if let Some(v) = self.hidden_dim {
            m.hidden_dim = v;
        }
        if self.unified {
            m.split_encoder = false;
        }
        Ok(rc)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic random class-embedding table.
    SynthTable {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        objects: usize,
        #[arg(long, default_value_t = 12)]
        predicates: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Write the binary format instead of text.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic annotation corpus over a table's vocabulary.
    SynthCorpus {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        graphs: usize,
        #[arg(long, default_value_t = 0)]
        planted_pairs: usize,
        #[arg(long, default_value_t = 3)]
        min_objects: usize,
        #[arg(long, default_value_t = 5)]
        max_objects: usize,
        #[arg(long, default_value_t = 1)]
        extra_relations: usize,
        #[arg(long, default_value_t = 0)]
        scene_classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn raw annotations into preprocessed scene graphs.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on preprocessed graphs.
    Train {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute graph embeddings with a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// All-pairs graph edit distances.
    Ged {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exact search instead of the bipartite approximation.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        node_budget: Option<usize>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score embedding rankings against distance-derived ground truth.
    Evaluate {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ged: PathBuf,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cutoffs, comma separated.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        relevant_top: Option<usize>,
    },
    /// Single-target evaluation: the nearest graph with a different scene label.
    Counterfactual {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ged: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate model variants over several seeds.
    Ablate {
        #[arg(long)]
        train_graphs: PathBuf,
        #[arg(long)]
        test_graphs: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        ged: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grids: table2, layers, encoder, gnn.
        #[arg(long, value_delimiter = ',', default_value = "table2")]
        grid: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Metric summarised per variant, e.g. ndcg@3 or mrr.
        #[arg(long, default_value = "ndcg@3")]
        metric: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthTable { seed, objects, predicates, dim, binary, out } => {
            cmd_synth_table(&SynthTableArgs { seed, objects, predicates, dim, out, binary })?;
        }
        Command::SynthCorpus {
            table,
            out,
            graphs,
            planted_pairs,
            min_objects,
            max_objects,
            extra_relations,
            scene_classes,
            seed,
        } => {
            let config = SynthCorpusConfig {
                graphs,
                planted_pairs,
                min_objects,
                max_objects,
                extra_relations,
                scene_classes,
                seed,
            };
            cmd_synth_corpus(&SynthCorpusArgs { table, out, config })?;
        }
        Command::Preprocess { corpus, table, out } => {
            let stats = cmd_preprocess(&PreprocessArgs { corpus, table, out })?;
            if stats.kept == 0 {
                return Err(PipelineError::Data("every record was rejected".into()));
            }
        }
        Command::Train { graphs, table, out, config } => {
            let config = config.resolve()?;
            cmd_train(&TrainArgs { graphs, table, out, config })?;
        }
        Command::Embed { model, graphs, table, out } => {
            cmd_embed(&EmbedArgs { model, graphs, table, out })?;
        }
        Command::Ged { graphs, table, out, config, exact, node_budget, threads } => {
            let mut settings = load_config(&config)?.ged;
            settings.exact |= exact;
            if let Some(b) = node_budget {
                settings.node_budget = b;
            }
            if let Some(t) = threads {
                settings.threads = t;
            }
            cmd_ged(&GedArgs { graphs, table, out, settings })?;
        }
        Command::Evaluate { embeddings, ged, out, config, k, relevant_top } => {
            let mut settings = load_config(&config)?.eval;
            if let Some(k) = k {
                settings.ks = k;
            }
            if let Some(t) = relevant_top {
                settings.relevant_top = t;
            }
            let report = cmd_evaluate(&EvaluateArgs { embeddings, ged, out, settings })?;
            print!("{}", report.to_csv());
        }
        Command::Counterfactual { embeddings, ged, graphs, out } => {
            let report = cmd_counterfactual(&CounterfactualArgs { embeddings, ged, graphs, out })?;
            print!("{}", report.to_csv());
        }
        Command::Ablate { train_graphs, test_graphs, table, ged, out, grid, seeds, metric, config } => {
            let config = config.resolve()?;
            cmd_ablate(&AblateArgs {
                train_graphs,
                test_graphs,
                table,
                ged,
                out,
                grids: grid,
                seeds,
                metric,
                config,
            })?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 for usage errors, 2 for bad or inconsistent data and 3
/// for numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
