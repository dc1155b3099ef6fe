//! The scene-graph autoencoder: split GNN encoder, MLP edge and feature
//! decoders, latent discriminator, composite loss and training loop.
//!
//! Parameters live in two [`ParamSet`]s, one for the autoencoder and one for
//! the discriminator, because each has its own optimiser. Names follow
//! `enc.<branch>.<layer>.<tensor>`, `dec.<edge|feat>.<layer>.<tensor>` and
//! `disc.<layer>.<tensor>`; weights are `in x out`, biases `1 x out`.

mod checkpoint;
mod config;
mod forward;
mod train;

pub use checkpoint::{CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{GnnKind, ModelConfig};
pub use forward::{
    gcn_layer, gin_layer, mlp2, propagation_matrix, reparameterize, standard_normal, Binding,
    EncodeMode, ForwardPass, LatentOutput, LossBreakdown,
};
pub use train::{loss_log_csv, train, train_with, EpochLog, TrainError, TrainOutcome};

use rand::Rng;
use rayon::prelude::*;

use crate::graph::GraphMatrices;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{ParamSet, Tensor, TensorError};

/// Which optimiser group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Autoencoder,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
}

/// Encoder branch names for layer `l` of `layers`, as (mu, sigma). Shared
/// layers of the unified encoder return the same name twice.
pub(crate) fn branch_names(config: &ModelConfig, l: usize) -> (String, Option<String>) {
    let last = l + 1 == config.encoder_layers;
    if !config.use_variational {
        return ("mu".into(), None);
    }
    if config.split_encoder || last {
        ("mu".into(), Some("sigma".into()))
    } else {
        ("shared".into(), Some("shared".into()))
    }
}

/// Every parameter tensor implied by `config`, in initialisation order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, rows, cols, group| {
        specs.push(ParamSpec {
            name,
            rows,
            cols,
            group,
        })
    };
    let ae = ParamGroup::Autoencoder;
    let linear = |push: &mut dyn FnMut(String, usize, usize, ParamGroup), prefix: &str, i, o, g| {
        push(format!("{prefix}.weight"), i, o, g);
        push(format!("{prefix}.bias"), 1, o, g);
    };

    let l_count = config.encoder_layers;
    let mut branches: Vec<String> = Vec::new();
    for l in 0..l_count {
        let (mu, sigma) = branch_names(config, l);
        branches.clear();
        branches.push(mu);
        if let Some(s) = sigma {
            if !branches.contains(&s) {
                branches.push(s);
            }
        }
        let in_dim = if l == 0 { config.input_dim } else { config.hidden_dim };
        let out_dim = if l + 1 == l_count {
            config.latent_dim
        } else {
            config.hidden_dim
        };
        for b in &branches {
            match config.gnn_kind {
                GnnKind::Gcn => linear(&mut push, &format!("enc.{b}.{l}"), in_dim, out_dim, ae),
                GnnKind::Gin => {
                    linear(&mut push, &format!("enc.{b}.{l}.mlp0"), in_dim, out_dim, ae);
                    linear(&mut push, &format!("enc.{b}.{l}.mlp1"), out_dim, out_dim, ae);
                }
            }
        }
    }

    let (dl, h) = (config.latent_dim, config.hidden_dim);
    if config.use_mlp_decoders {
        if config.use_edge_decoder {
            linear(&mut push, "dec.edge.0", dl, h, ae);
            linear(&mut push, "dec.edge.1", h, config.edge_decoder_out, ae);
        }
        if config.use_feature_decoder {
            linear(&mut push, "dec.feat.0", dl, h, ae);
            linear(&mut push, "dec.feat.1", h, config.feature_decoder_out, ae);
        }
    } else if config.use_feature_decoder {
        linear(&mut push, "dec.feat.lin", dl, config.feature_decoder_out, ae);
    }

    if config.use_discriminator {
        let d = ParamGroup::Discriminator;
        linear(&mut push, "disc.0", dl, h, d);
        linear(&mut push, "disc.1", h, 1, d);
    }
    specs
}

/// Model weights together with the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenir {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub discriminator: ParamSet,
}

impl Scenir {
    /// Glorot-uniform weights and zero biases drawn from the
    /// [`Stream::Init`] stream of `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self, TensorError> {
        config.validate().map_err(TensorError::Invalid)?;
        let mut rng = stream_rng(config.seed, Stream::Init);
        let mut params = ParamSet::new();
        let mut discriminator = ParamSet::new();
        for spec in parameter_layout(&config) {
            let mut t = Tensor::zeros(spec.rows, spec.cols);
            if spec.name.ends_with(".weight") {
                let a = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
            }
            match spec.group {
                ParamGroup::Autoencoder => params.insert(spec.name, t),
                ParamGroup::Discriminator => discriminator.insert(spec.name, t),
            };
        }
        Ok(Self {
            config,
            params,
            discriminator,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count() + self.discriminator.scalar_count()
    }

    /// Latent node means in inference mode.
    pub fn node_embeddings(&self, g: &GraphMatrices) -> Result<Tensor, TensorError> {
        let mut pass = ForwardPass::new(self, false)?;
        let latent = pass.encode(g, EncodeMode::Infer, None)?;
        Ok(pass.tape.value(latent.z_mu).clone())
    }

    /// Sum-pooled latent means: the graph-level retrieval embedding.
    pub fn graph_embedding(&self, g: &GraphMatrices) -> Result<Vec<f64>, TensorError> {
        Ok(self.node_embeddings(g)?.sum_rows().into_data())
    }

    /// Embeddings for many graphs, computed in parallel; output order
    /// matches input order.
    pub fn embed_all(&self, graphs: &[GraphMatrices]) -> Result<Vec<Vec<f64>>, TensorError> {
        graphs.par_iter().map(|g| self.graph_embedding(g)).collect()
    }

    /// Fraction of off-diagonal entries where the decoded adjacency,
    /// thresholded at 0.5, matches the symmetrised input adjacency.
    pub fn edge_accuracy(&self, g: &GraphMatrices) -> Result<f64, TensorError> {
        let n = g.node_count();
        if n < 2 {
            return Ok(1.0);
        }
        let mut pass = ForwardPass::new(self, false)?;
        let latent = pass.encode(g, EncodeMode::Infer, None)?;
        let probs = pass.decode_edges(latent.z_sample)?;
        let probs = pass.tape.value(probs);
        let target = g.symmetric_adjacency();
        let mut correct = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i != j && ((probs.get(i, j) > 0.5) == (target.get(i, j) == 1.0)) {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / (n * (n - 1)) as f64)
    }
}
