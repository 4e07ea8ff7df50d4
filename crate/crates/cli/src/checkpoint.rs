//! Versioned binary checkpoints.
//!
//! Layout: the magic bytes, a little-endian `u32` version, a `u64` header
//! length, a JSON header describing every tensor, then the tensors
//! themselves as little-endian `f64` in header order (model parameters,
//! then Adam first moments, then second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};
use smd_core::backbone::{ConvActivation, ConvLayer, ConvNet};
use smd_core::field::{Activation, DenseLayer, HeadKind, MlpHead};
use smd_core::model::SmdModel;
use smd_core::optim::AdamState;
use smd_core::train::{TrainConfig, Trainer};
use smd_core::{Result, SmdError};

pub const MAGIC: &[u8; 8] = b"SMDCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SmdModel,
    pub train: TrainConfig,
    pub adam: AdamState,
    pub losses: Vec<f64>,
    pub d_max: f64,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, d_max: f64) -> Self {
        Self {
            model: t.model.clone(),
            train: t.config,
            adam: t.adam.clone(),
            losses: t.losses.clone(),
            d_max,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::resume(self.train, self.model, self.adam, self.losses)
    }
}

#[derive(Serialize, Deserialize)]
struct ConvSpec {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    skip: Option<usize>,
    activation: ConvActivation,
}

#[derive(Serialize, Deserialize)]
struct DenseSpec {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: HeadKind,
    frequency: f64,
    net: Vec<ConvSpec>,
    head: Vec<DenseSpec>,
    train: TrainConfig,
    adam: AdamMeta,
    losses: Vec<f64>,
    d_max: f64,
    /// Number of `f64` values following the header.
    payload: usize,
}

fn ckpt_err(msg: impl Into<String>) -> SmdError {
    SmdError::Checkpoint(msg.into())
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck.model.params();
    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    if ck.adam.shapes() != sizes {
        return Err(ckpt_err("optimizer state does not match model"));
    }
    let payload = 3 * sizes.iter().sum::<usize>();
    let header = Header {
        kind: ck.model.kind,
        frequency: ck.model.head.frequency,
        net: ck
            .model
            .net
            .layers
            .iter()
            .map(|l| ConvSpec {
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                stride: l.stride,
                skip: l.skip,
                activation: l.activation,
            })
            .collect(),
        head: ck
            .model
            .head
            .layers
            .iter()
            .map(|l| DenseSpec {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation,
            })
            .collect(),
        train: ck.train,
        adam: AdamMeta {
            step: ck.adam.step,
            beta1: ck.adam.beta1,
            beta2: ck.adam.beta2,
            eps: ck.adam.eps,
            lr: ck.adam.lr,
        },
        losses: ck.losses.clone(),
        d_max: ck.d_max,
        payload,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ckpt_err(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + payload * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let tensors = params.iter().copied().chain(ck.adam.m.iter().map(Vec::as_slice)).chain(ck.adam.v.iter().map(Vec::as_slice));
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(ckpt_err("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ckpt_err(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(ckpt_err("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| ckpt_err(format!("bad header: {e}")))?;
    let data = &body[hlen..];
    if data.len() != header.payload * 8 {
        return Err(ckpt_err(format!(
            "payload holds {} bytes, header promises {}",
            data.len(),
            header.payload * 8
        )));
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let net = ConvNet::from_layers(
        header
            .net
            .iter()
            .map(|s| ConvLayer::new(s.in_channels, s.out_channels, s.stride, s.skip, s.activation))
            .collect(),
    )?;
    let head = MlpHead::from_layers(
        header
            .head
            .iter()
            .map(|s| DenseLayer::zeros(s.fan_in, s.fan_out, s.activation))
            .collect(),
        header.frequency,
    )?;
    let mut model = SmdModel::from_parts(header.kind, net, head)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if header.payload != 3 * sizes.iter().sum::<usize>() {
        return Err(ckpt_err("payload size does not match the declared layers"));
    }
    for t in model.params_mut() {
        for (dst, src) in t.iter_mut().zip(&mut values) {
            *dst = src;
        }
    }
    let mut take = || -> Vec<Vec<f64>> { sizes.iter().map(|&n| (&mut values).take(n).collect()).collect() };
    let m = take();
    let v = take();
    let adam = AdamState {
        step: header.adam.step,
        beta1: header.adam.beta1,
        beta2: header.adam.beta2,
        eps: header.adam.eps,
        lr: header.adam.lr,
        m,
        v,
    };
    Ok(Checkpoint {
        model,
        train: header.train,
        adam,
        losses: header.losses,
        d_max: header.d_max,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(ck)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use smd_core::backbone::BackboneConfig;
    use smd_core::model::ModelConfig;

    fn sample() -> Checkpoint {
        let mut train = TrainConfig::default();
        train.model = ModelConfig {
            kind: HeadKind::Unimodal,
            backbone: BackboneConfig {
                base_channels: 2,
                feature_dim: 3,
            },
            width_factor: 1.0 / 64.0,
            frequency: 1.0,
        };
        let mut t = Trainer::new(train).unwrap();
        t.adam.step = 2;
        t.adam.m[0][0] = 0.125;
        t.adam.v[3][1] = 1e-300;
        t.losses = vec![0.1 + 0.2, -1.0 / 3.0];
        Checkpoint::from_trainer(&t, 20.0)
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        assert_eq!(decode(&bytes).unwrap(), ck);
        assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"not a checkpoint at all").is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(decode(&v2).unwrap_err().to_string().contains("version"));
    }
}
