use std::io::{Read, Write};
use std::path::Path;

use super::{parameter_layout, ModelConfig, ParamGroup, Scenir};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCNRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("checkpoint tensor `{name}`: {message}")]
    Tensor { name: String, message: String },
    #[error("checkpoint truncated")]
    Truncated,
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if buf.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn take_u32(buf: &mut &[u8]) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

impl Scenir {
    /// Binary checkpoint: magic, version, JSON config, then named f64
    /// tensors in layout order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serialises");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        let all: Vec<(&str, &Tensor)> = self.params.iter().chain(self.discriminator.iter()).collect();
        out.extend_from_slice(&(all.len() as u32).to_le_bytes());
        for (name, t) in all {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut buf = bytes;
        if take(&mut buf, 8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = take_u32(&mut buf)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let cfg_len = take_u32(&mut buf)? as usize;
        let config: ModelConfig = serde_json::from_slice(take(&mut buf, cfg_len)?)
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        config.validate().map_err(CheckpointError::Config)?;

        let count = take_u32(&mut buf)? as usize;
        let mut found = std::collections::HashMap::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(take(&mut buf, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut buf, len)?.to_vec()).map_err(|_| {
                CheckpointError::Tensor {
                    name: "?".into(),
                    message: "name is not utf-8".into(),
                }
            })?;
            let rows = take_u32(&mut buf)? as usize;
            let cols = take_u32(&mut buf)? as usize;
            let raw = take(&mut buf, rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(rows, cols, data).expect("sized");
            if found.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Tensor {
                    name,
                    message: "appears twice".into(),
                });
            }
        }
        if !buf.is_empty() {
            return Err(CheckpointError::Config("trailing bytes after tensors".into()));
        }

        let mut params = ParamSet::new();
        let mut discriminator = ParamSet::new();
        for spec in parameter_layout(&config) {
            let t = found.remove(&spec.name).ok_or_else(|| CheckpointError::Tensor {
                name: spec.name.clone(),
                message: "missing".into(),
            })?;
            if t.shape() != (spec.rows, spec.cols) {
                return Err(CheckpointError::Tensor {
                    name: spec.name,
                    message: format!(
                        "shape {:?}, config implies {:?}",
                        t.shape(),
                        (spec.rows, spec.cols)
                    ),
                });
            }
            match spec.group {
                ParamGroup::Autoencoder => params.insert(spec.name, t),
                ParamGroup::Discriminator => discriminator.insert(spec.name, t),
            };
        }
        if let Some(name) = found.into_keys().next() {
            return Err(CheckpointError::Tensor {
                name,
                message: "not part of the configured model".into(),
            });
        }
        Ok(Self {
            config,
            params,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenir {
        Scenir::init(ModelConfig {
            input_dim: 4,
            feature_decoder_out: 4,
            hidden_dim: 3,
            latent_dim: 2,
            edge_decoder_out: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = m.to_bytes();
        let back = Scenir::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = small().to_bytes();
        assert!(matches!(
            Scenir::from_bytes(b"NOTACKPTxxxx"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            Scenir::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated)
        ));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Scenir::from_bytes(&v), Err(CheckpointError::Version(9))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = small();
        let name = m.params.name(0).to_string();
        *m.params.get_mut(&name).unwrap() = Tensor::zeros(1, 1);
        let err = Scenir::from_bytes(&m.to_bytes()).unwrap_err();
        assert!(matches!(err, CheckpointError::Tensor { .. }), "{err}");
    }
}
