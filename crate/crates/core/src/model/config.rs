use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Gin,
}

impl std::fmt::Display for GnnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Gin => "gin",
        })
    }
}

/// Architecture, loss weights and optimisation settings.
///
/// Defaults are the reference settings: GIN, three split encoder layers,
/// latent width 1000, edge decoder width 32, 768-dim features, loss weights
/// (3, 1/6, 1/3), 30 epochs of batch 64, AdamW(lr 1e-3, wd 0.01) with an
/// exponential decay of 0.95 per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub gnn_kind: GnnKind,
    pub encoder_layers: usize,
    /// Independent mean and log-deviation branches; otherwise all layers but
    /// the last are shared.
    pub split_encoder: bool,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub edge_decoder_out: usize,
    pub feature_decoder_out: usize,
    /// Two-layer MLP decoders; when off the edge decoder is the plain inner
    /// product and the feature decoder a single linear map.
    pub use_mlp_decoders: bool,
    pub use_edge_decoder: bool,
    pub use_feature_decoder: bool,
    pub use_discriminator: bool,
    pub use_variational: bool,
    /// Positive-class reweighting of the edge reconstruction loss.
    pub edge_pos_weight: bool,
    pub gin_eps: f64,
    pub lambda_recon: f64,
    pub lambda_adv: f64,
    pub lambda_kl: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr_gamma: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gnn_kind: GnnKind::Gin,
            encoder_layers: 3,
            split_encoder: true,
            input_dim: 768,
            hidden_dim: 256,
            latent_dim: 1000,
            edge_decoder_out: 32,
            feature_decoder_out: 768,
            use_mlp_decoders: true,
            use_edge_decoder: true,
            use_feature_decoder: true,
            use_discriminator: true,
            use_variational: true,
            edge_pos_weight: true,
            gin_eps: 0.0,
            lambda_recon: 3.0,
            lambda_adv: 1.0 / 6.0,
            lambda_kl: 1.0 / 3.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            lr_gamma: 0.95,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reference settings with the feature width set to `input_dim`.
    pub fn with_input_dim(input_dim: usize) -> Self {
        Self {
            input_dim,
            feature_decoder_out: input_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            ("encoder_layers", self.encoder_layers),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("edge_decoder_out", self.edge_decoder_out),
            ("feature_decoder_out", self.feature_decoder_out),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.feature_decoder_out != self.input_dim {
            return Err(format!(
                "feature_decoder_out ({}) must equal input_dim ({})",
                self.feature_decoder_out, self.input_dim
            ));
        }
        for (name, v) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_adv", self.lambda_adv),
            ("lambda_kl", self.lambda_kl),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if !(self.weight_decay >= 0.0) {
            return Err("weight_decay must be non-negative".into());
        }
        Ok(())
    }
}
