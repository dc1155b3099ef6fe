use rand::seq::SliceRandom;

use super::forward::{discriminator_loss, standard_normal, ForwardPass};
use super::{EncodeMode, ModelConfig, Scenir};
use crate::graph::GraphMatrices;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{AdamW, AdamWConfig, ExponentialLr, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Setup(String),
    #[error("numerical failure at epoch {epoch}, batch {batch}: {source}")]
    Numerical {
        epoch: usize,
        batch: usize,
        #[source]
        source: TensorError,
    },
}

/// Mean per-graph loss terms over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub feat_recon: f64,
    pub edge_recon: f64,
    pub adversarial: f64,
    pub kl: f64,
    pub total: f64,
    pub discriminator: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Scenir,
    pub log: Vec<EpochLog>,
}

/// `epoch,term,value` rows for every logged term.
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,term,value\n");
    for e in log {
        for (term, v) in [
            ("feat_recon", e.feat_recon),
            ("edge_recon", e.edge_recon),
            ("adversarial", e.adversarial),
            ("kl", e.kl),
            ("total", e.total),
            ("discriminator", e.discriminator),
            ("lr", e.learning_rate),
        ] {
            out.push_str(&format!("{},{},{:?}\n", e.epoch, term, v));
        }
    }
    out
}

fn add_into(acc: &mut [Tensor], grads: Vec<Tensor>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.add_assign(&g);
    }
}

fn averaged(acc: Vec<Tensor>, n: usize) -> Vec<Option<Tensor>> {
    let k = 1.0 / n as f64;
    acc.into_iter().map(|t| Some(t.scale(k))).collect()
}

fn zeros_like(set: &crate::tensor::ParamSet) -> Vec<Tensor> {
    set.tensors()
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect()
}

/// Trains a fresh model on `corpus`. Each batch first updates the
/// discriminator against the current encoder, then the autoencoder on the
/// full objective; both see the same noise draw.
pub fn train(corpus: &[GraphMatrices], config: ModelConfig) -> Result<TrainOutcome, TrainError> {
    train_with(corpus, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    corpus: &[GraphMatrices],
    config: ModelConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Setup("training corpus is empty".into()));
    }
    config.validate().map_err(TrainError::Setup)?;
    if let Some(g) = corpus.iter().find(|g| g.feature_dim() != config.input_dim) {
        return Err(TrainError::Setup(format!(
            "graph feature width {} does not match model input width {}",
            g.feature_dim(),
            config.input_dim
        )));
    }

    let mut model = Scenir::init(config.clone()).map_err(|e| TrainError::Setup(e.to_string()))?;
    let opt_cfg = AdamWConfig {
        lr: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: 1e-8,
        weight_decay: config.weight_decay,
    };
    let mut opt_ae = AdamW::new(opt_cfg, &model.params);
    let mut opt_d = AdamW::new(opt_cfg, &model.discriminator);
    let mut schedule = ExponentialLr::new(config.learning_rate, config.lr_gamma)
        .map_err(|e| TrainError::Setup(e.to_string()))?;
    let mut shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
    let mut noise_rng = stream_rng(config.seed, Stream::Sampling);

    let dl = config.latent_dim;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = EpochLog {
            epoch,
            learning_rate: opt_ae.lr(),
            ..EpochLog::default()
        };

        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let fail = |source| TrainError::Numerical {
                epoch,
                batch,
                source,
            };
            let draws: Vec<(Option<Tensor>, Option<Tensor>)> = chunk
                .iter()
                .map(|&i| {
                    let n = corpus[i].node_count();
                    let eps = config
                        .use_variational
                        .then(|| standard_normal(&mut noise_rng, n, dl));
                    let prior = config
                        .use_discriminator
                        .then(|| standard_normal(&mut noise_rng, n, dl));
                    (eps, prior)
                })
                .collect();

            if config.use_discriminator {
                let mut acc = zeros_like(&model.discriminator);
                for (&i, (eps, prior)) in chunk.iter().zip(&draws) {
                    let mut pass = ForwardPass::new(&model, false).map_err(fail)?;
                    let lat = pass
                        .encode(&corpus[i], EncodeMode::Train, eps.as_ref())
                        .map_err(fail)?;
                    let fake = pass.tape.value(lat.z_sample).clone();
                    let prior = prior.as_ref().expect("drawn when discriminator is on");
                    let (loss, grads) = discriminator_loss(&model, prior, &fake).map_err(fail)?;
                    sums.discriminator += loss;
                    add_into(&mut acc, grads);
                }
                opt_d
                    .step(&mut model.discriminator, &averaged(acc, chunk.len()))
                    .map_err(fail)?;
            }

            let mut acc = zeros_like(&model.params);
            for (&i, (eps, _)) in chunk.iter().zip(&draws) {
                let mut pass = ForwardPass::new(&model, true).map_err(fail)?;
                let lat = pass
                    .encode(&corpus[i], EncodeMode::Train, eps.as_ref())
                    .map_err(fail)?;
                let (total, parts) = pass.compute_loss(&corpus[i], &lat).map_err(fail)?;
                if pass.tape.requires_grad(total) {
                    pass.tape.backward(total).map_err(fail)?;
                }
                add_into(&mut acc, pass.params.grads(&pass.tape));
                sums.feat_recon += parts.feat_recon;
                sums.edge_recon += parts.edge_recon;
                sums.adversarial += parts.adversarial;
                sums.kl += parts.kl;
                sums.total += parts.total;
            }
            opt_ae
                .step(&mut model.params, &averaged(acc, chunk.len()))
                .map_err(fail)?;
        }

        let n = corpus.len() as f64;
        for v in [
            &mut sums.feat_recon,
            &mut sums.edge_recon,
            &mut sums.adversarial,
            &mut sums.kl,
            &mut sums.total,
            &mut sums.discriminator,
        ] {
            *v /= n;
        }
        log::debug!(
            "epoch {epoch}: total {:.6} feat {:.6} edge {:.6} adv {:.6} kl {:.6} disc {:.6}",
            sums.total,
            sums.feat_recon,
            sums.edge_recon,
            sums.adversarial,
            sums.kl,
            sums.discriminator
        );
        on_epoch(&sums);
        log.push(sums);
        schedule.step(&mut [&mut opt_ae, &mut opt_d]);
    }
    Ok(TrainOutcome { model, log })
}
