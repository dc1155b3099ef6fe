use rand::Rng;
use rand_distr::StandardNormal;

use super::{branch_names, GnnKind, Scenir};
use crate::graph::GraphMatrices;
use crate::tensor::{ParamSet, Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

const LOG_SIGMA_MIN: f64 = -10.0;
const LOG_SIGMA_MAX: f64 = 10.0;

/// Tape variables for every tensor of a [`ParamSet`], addressed by name.
pub struct Binding {
    vars: Vec<Var>,
    names: std::collections::HashMap<String, usize>,
}

impl Binding {
    pub fn bind(tape: &mut Tape, set: &ParamSet, trainable: bool) -> Result<Self> {
        let mut vars = Vec::with_capacity(set.len());
        let mut names = std::collections::HashMap::with_capacity(set.len());
        for (i, (name, t)) in set.iter().enumerate() {
            let v = if trainable {
                tape.param(t.clone())?
            } else {
                tape.constant(t.clone())?
            };
            vars.push(v);
            names.insert(name.to_string(), i);
        }
        Ok(Self { vars, names })
    }

    pub fn get(&self, name: &str) -> Var {
        match self.names.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter `{name}` is not part of the model layout"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; parameters the loss did not reach get
    /// zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad(v).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.value(v).shape();
                    Tensor::zeros(r, c)
                })
            })
            .collect()
    }
}

/// Constant propagation operator for one graph, built on the symmetrised
/// adjacency `S`: `D^-1/2 (S + I) D^-1/2` for GCN and `(1 + eps) I + S` for
/// GIN.
pub fn propagation_matrix(kind: GnnKind, adjacency: &Tensor, gin_eps: f64) -> Tensor {
    let s = adjacency
        .symmetrize_max()
        .expect("adjacency must be square");
    let n = s.rows();
    let mut m = s.clone();
    match kind {
        GnnKind::Gcn => {
            for i in 0..n {
                m.set(i, i, 1.0);
            }
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|i| 1.0 / m.row(i).iter().sum::<f64>().sqrt())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let v = m.get(i, j);
                    if v != 0.0 {
                        m.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
                    }
                }
            }
        }
        GnnKind::Gin => {
            for i in 0..n {
                m.set(i, i, 1.0 + gin_eps);
            }
        }
    }
    m
}

/// `act(P X W + b)`.
pub fn gcn_layer(tape: &mut Tape, prop: Var, x: Var, w: Var, b: Var, activate: bool) -> Result<Var> {
    let agg = tape.matmul_exact(prop, x)?;
    let lin = tape.matmul(agg, w)?;
    let out = tape.add_row(lin, b)?;
    if activate {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

/// `act(MLP(P X))` with `MLP(h) = relu(h W0 + b0) W1 + b1`.
pub fn gin_layer(
    tape: &mut Tape,
    prop: Var,
    x: Var,
    mlp: [Var; 4],
    activate: bool,
) -> Result<Var> {
    let agg = tape.matmul_exact(prop, x)?;
    let out = mlp2(tape, agg, mlp)?;
    if activate {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

/// `relu(x W0 + b0) W1 + b1`.
pub fn mlp2(tape: &mut Tape, x: Var, [w0, b0, w1, b1]: [Var; 4]) -> Result<Var> {
    let h = tape.matmul(x, w0)?;
    let h = tape.add_row(h, b0)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, w1)?;
    tape.add_row(o, b1)
}

/// `z = mu + exp(log_sigma) * noise`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_sigma: Var, noise: &Tensor) -> Result<Var> {
    let eps = tape.constant(noise.clone())?;
    let sigma = tape.exp(log_sigma)?;
    let scaled = tape.mul(sigma, eps)?;
    tape.add(mu, scaled)
}

pub fn standard_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    /// Both branches; sampled latent when the model is variational.
    Train,
    /// Mean branch only; the latent sample equals the mean.
    Infer,
}

#[derive(Clone, Copy, Debug)]
pub struct LatentOutput {
    pub z_mu: Var,
    pub z_log_sigma: Option<Var>,
    pub z_sample: Var,
}

/// Per-term loss values of one graph (already including no weights).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub feat_recon: f64,
    pub edge_recon: f64,
    pub adversarial: f64,
    pub kl: f64,
    pub total: f64,
}

/// One forward computation of the model recorded on its own tape.
pub struct ForwardPass<'m> {
    pub tape: Tape,
    pub model: &'m Scenir,
    pub params: Binding,
    pub disc: Binding,
}

impl<'m> ForwardPass<'m> {
    /// Binds the autoencoder parameters (differentiable when `trainable`)
    /// and the discriminator parameters (always constant).
    pub fn new(model: &'m Scenir, trainable: bool) -> Result<Self> {
        let mut tape = Tape::new();
        let params = Binding::bind(&mut tape, &model.params, trainable)?;
        let disc = Binding::bind(&mut tape, &model.discriminator, false)?;
        Ok(Self {
            tape,
            model,
            params,
            disc,
        })
    }

    fn encoder_layer(&mut self, prop: Var, h: Var, branch: &str, l: usize) -> Result<Var> {
        let cfg = &self.model.config;
        let activate = l + 1 < cfg.encoder_layers;
        let prefix = format!("enc.{branch}.{l}");
        match cfg.gnn_kind {
            GnnKind::Gcn => {
                let w = self.params.get(&format!("{prefix}.weight"));
                let b = self.params.get(&format!("{prefix}.bias"));
                gcn_layer(&mut self.tape, prop, h, w, b, activate)
            }
            GnnKind::Gin => {
                let p = |s: &str| self.params.get(&format!("{prefix}.{s}"));
                let mlp = [
                    p("mlp0.weight"),
                    p("mlp0.bias"),
                    p("mlp1.weight"),
                    p("mlp1.bias"),
                ];
                gin_layer(&mut self.tape, prop, h, mlp, activate)
            }
        }
    }

    /// Runs the encoder. `noise` (n x latent) is required in train mode for
    /// variational models.
    pub fn encode(
        &mut self,
        g: &GraphMatrices,
        mode: EncodeMode,
        noise: Option<&Tensor>,
    ) -> Result<LatentOutput> {
        let cfg = &self.model.config;
        if g.feature_dim() != cfg.input_dim {
            return Err(TensorError::Shape {
                op: "encode",
                left: (g.node_count(), g.feature_dim()),
                right: (g.node_count(), cfg.input_dim),
            });
        }
        let layers = cfg.encoder_layers;
        let with_sigma = mode == EncodeMode::Train && cfg.use_variational;
        let prop = propagation_matrix(cfg.gnn_kind, &g.adjacency, cfg.gin_eps);
        let prop = self.tape.constant(prop)?;
        let x = self.tape.constant(g.features.clone())?;

        let (mut h_mu, mut h_sigma) = (x, x);
        for l in 0..layers {
            let (bm, bs) = branch_names(&self.model.config, l);
            match bs {
                Some(bs) if bs == bm => {
                    h_mu = self.encoder_layer(prop, h_mu, &bm, l)?;
                    h_sigma = h_mu;
                }
                Some(bs) if with_sigma => {
                    h_mu = self.encoder_layer(prop, h_mu, &bm, l)?;
                    h_sigma = self.encoder_layer(prop, h_sigma, &bs, l)?;
                }
                _ => h_mu = self.encoder_layer(prop, h_mu, &bm, l)?,
            }
        }

        if !with_sigma {
            return Ok(LatentOutput {
                z_mu: h_mu,
                z_log_sigma: None,
                z_sample: h_mu,
            });
        }
        let log_sigma = self.tape.clamp(h_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
        let noise = noise.ok_or_else(|| {
            TensorError::Invalid("train-mode encoding of a variational model needs noise".into())
        })?;
        let z = reparameterize(&mut self.tape, h_mu, log_sigma, noise)?;
        Ok(LatentOutput {
            z_mu: h_mu,
            z_log_sigma: Some(log_sigma),
            z_sample: z,
        })
    }

    fn ae_mlp(&self, prefix: &str) -> [Var; 4] {
        let p = |s: &str| self.params.get(&format!("{prefix}.{s}"));
        [p("0.weight"), p("0.bias"), p("1.weight"), p("1.bias")]
    }

    /// Edge probabilities `sigmoid(Ze Ze^T)`.
    pub fn decode_edges(&mut self, z: Var) -> Result<Var> {
        let ze = if self.model.config.use_mlp_decoders && self.model.config.use_edge_decoder {
            let mlp = self.ae_mlp("dec.edge");
            mlp2(&mut self.tape, z, mlp)?
        } else {
            z
        };
        let zt = self.tape.transpose(ze)?;
        let logits = self.tape.matmul(ze, zt)?;
        self.tape.sigmoid(logits)
    }

    /// Reconstructed node features.
    pub fn decode_features(&mut self, z: Var) -> Result<Var> {
        if self.model.config.use_mlp_decoders {
            let mlp = self.ae_mlp("dec.feat");
            mlp2(&mut self.tape, z, mlp)
        } else {
            let w = self.params.get("dec.feat.lin.weight");
            let b = self.params.get("dec.feat.lin.bias");
            let o = self.tape.matmul(z, w)?;
            self.tape.add_row(o, b)
        }
    }

    /// One real/fake logit per latent row.
    pub fn discriminate(&mut self, z: Var) -> Result<Var> {
        let p = |s: &str| self.disc.get(&format!("disc.{s}"));
        let mlp = [p("0.weight"), p("0.bias"), p("1.weight"), p("1.bias")];
        mlp2(&mut self.tape, z, mlp)
    }

    /// `lr * (feat + edge) + la * adv + lk * kl` for one graph, with
    /// disabled components contributing exactly zero.
    pub fn compute_loss(
        &mut self,
        g: &GraphMatrices,
        latent: &LatentOutput,
    ) -> Result<(Var, LossBreakdown)> {
        let cfg = self.model.config.clone();
        let mut parts = LossBreakdown::default();
        let mut recon: Option<Var> = None;

        if cfg.use_feature_decoder {
            let zf = self.decode_features(latent.z_sample)?;
            let x = self.tape.constant(g.features.clone())?;
            let l = self.tape.mse_loss(zf, x)?;
            parts.feat_recon = self.tape.value(l).item();
            recon = Some(l);
        }
        if cfg.use_edge_decoder && g.node_count() > 1 {
            let probs = self.decode_edges(latent.z_sample)?;
            let target = g.symmetric_adjacency();
            let n = g.node_count();
            let mut mask = Tensor::filled(n, n, 1.0);
            for i in 0..n {
                mask.set(i, i, 0.0);
            }
            let positives: f64 = target.data().iter().sum();
            let negatives = (n * (n - 1)) as f64 - positives;
            let pos_weight = if cfg.edge_pos_weight && positives > 0.0 && negatives > 0.0 {
                negatives / positives
            } else {
                1.0
            };
            let l = self
                .tape
                .weighted_bce_loss_masked(probs, &target, &mask, pos_weight, 1.0)?;
            parts.edge_recon = self.tape.value(l).item();
            recon = Some(match recon {
                Some(r) => self.tape.add(r, l)?,
                None => l,
            });
        }

        let mut total = match recon {
            Some(r) => Some(self.tape.scale(r, cfg.lambda_recon)?),
            None => None,
        };
        let mut accumulate = |tape: &mut Tape, term: Var, w: f64| -> Result<()> {
            let scaled = tape.scale(term, w)?;
            total = Some(match total {
                Some(t) => tape.add(t, scaled)?,
                None => scaled,
            });
            Ok(())
        };

        if cfg.use_discriminator {
            let logits = self.discriminate(latent.z_sample)?;
            let l = self.tape.bce_with_logits(logits, 1.0)?;
            parts.adversarial = self.tape.value(l).item();
            accumulate(&mut self.tape, l, cfg.lambda_adv)?;
        }
        if let Some(ls) = latent.z_log_sigma {
            let l = self.tape.kl_gaussian(latent.z_mu, ls)?;
            parts.kl = self.tape.value(l).item();
            accumulate(&mut self.tape, l, cfg.lambda_kl)?;
        }
        let total = match total {
            Some(t) => t,
            None => self.tape.constant(Tensor::scalar(0.0))?,
        };
        parts.total = self.tape.value(total).item();
        Ok((total, parts))
    }
}

/// Discriminator objective on one graph: prior rows labelled real, encoder
/// rows (treated as constants) labelled fake. Returns the loss value and the
/// discriminator gradients in parameter order.
pub(crate) fn discriminator_loss(
    model: &Scenir,
    prior: &Tensor,
    fake: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let disc = Binding::bind(&mut tape, &model.discriminator, true)?;
    let p = |s: &str| disc.get(&format!("disc.{s}"));
    let mlp = [p("0.weight"), p("0.bias"), p("1.weight"), p("1.bias")];
    let real = tape.constant(prior.clone())?;
    let fake = tape.constant(fake.clone())?;
    let real_logits = mlp2(&mut tape, real, mlp)?;
    let fake_logits = mlp2(&mut tape, fake, mlp)?;
    let l_real = tape.bce_with_logits(real_logits, 1.0)?;
    let l_fake = tape.bce_with_logits(fake_logits, 0.0)?;
    let loss = tape.add(l_real, l_fake)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).item(), disc.grads(&tape)))
}
