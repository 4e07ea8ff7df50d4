//! Backbone plus head, and the batched point loss that ties them together.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, ConvNet};
use crate::error::{Result, SmdError};
use crate::field::{scaled_widths, BilinearTap, FeatureGrid, HeadKind, MlpHead, SINE_FREQUENCY};
use crate::parallel::{map_ordered, tree_reduce, ExecMode};

/// Architecture of a full model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: HeadKind,
    pub backbone: BackboneConfig,
    /// Multiplier on the hidden widths `(1024, 512, 256, 128)`.
    pub width_factor: f64,
    /// Multiplier inside the hidden sine activations.
    pub frequency: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Bimodal,
            backbone: BackboneConfig::default(),
            width_factor: 0.125,
            frequency: SINE_FREQUENCY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmdModel {
    pub kind: HeadKind,
    pub net: ConvNet,
    pub head: MlpHead,
}

impl SmdModel {
    /// Freshly initialized model; backbone and head draw from derived seeds.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let net = ConvNet::unet(cfg.backbone).init(seed);
        let mut head = MlpHead::new(
            cfg.backbone.feature_dim,
            &scaled_widths(cfg.width_factor),
            cfg.kind.output_dim(),
        );
        head.frequency = cfg.frequency;
        Self {
            kind: cfg.kind,
            net,
            head: head.sine_init(seed.wrapping_add(0x5EED)),
        }
    }

    pub fn from_parts(kind: HeadKind, net: ConvNet, head: MlpHead) -> Result<Self> {
        net.validate()?;
        if head.input_dim() != net.feature_dim() {
            return Err(SmdError::Shape(format!(
                "head expects {} features, backbone yields {}",
                head.input_dim(),
                net.feature_dim()
            )));
        }
        if head.output_dim() != kind.output_dim() {
            return Err(SmdError::Shape(format!(
                "{} head needs {} outputs, has {}",
                kind.name(),
                kind.output_dim(),
                head.output_dim()
            )));
        }
        Ok(Self { kind, net, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            net: self.net.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Backbone tensors followed by head tensors.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.net.params();
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// A supervised query in feature-grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureQuery {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

/// Mean loss over a set of queries with gradients for the head and the grid.
#[derive(Debug, Clone)]
pub struct PointLoss {
    pub loss: f64,
    pub head_grad: MlpHead,
    pub grid_grad: FeatureGrid,
}

/// Points evaluated together in one head batch.
pub const POINT_CHUNK: usize = 256;

struct ChunkResult {
    loss_sum: f64,
    head_grad: MlpHead,
    taps: Vec<BilinearTap>,
    feat_grad: Array2<f64>,
}

/// Builds the `(n, D)` feature matrix for a set of taps.
pub fn gather_features(grid: &FeatureGrid, taps: &[BilinearTap]) -> Array2<f64> {
    let d = grid.depth();
    let mut feats = Array2::zeros((taps.len(), d));
    for (tap, mut row) in taps.iter().zip(feats.rows_mut()) {
        grid.interp_into(tap, row.as_slice_mut().expect("standard layout"));
    }
    feats
}

/// Mean loss of `queries` under `head`/`kind` reading features from `grid`,
/// with gradients. Chunks may run in parallel; their results are combined in
/// a fixed order, so the output is bitwise independent of the thread count.
pub fn point_loss(
    head: &MlpHead,
    kind: HeadKind,
    grid: &FeatureGrid,
    queries: &[FeatureQuery],
    mode: ExecMode,
) -> Result<PointLoss> {
    if queries.is_empty() {
        return Err(SmdError::Empty("no query points".into()));
    }
    if head.output_dim() != kind.output_dim() || head.input_dim() != grid.depth() {
        return Err(SmdError::Shape("head does not match grid or loss kind".into()));
    }
    let inv_n = 1.0 / queries.len() as f64;
    let chunks: Vec<&[FeatureQuery]> = queries.chunks(POINT_CHUNK).collect();
    let out_dim = kind.output_dim();
    let results: Vec<Result<ChunkResult>> = map_ordered(mode, &chunks, |chunk| {
        let taps = chunk
            .iter()
            .map(|q| grid.tap(q.x, q.y))
            .collect::<Result<Vec<_>>>()?;
        let feats = gather_features(grid, &taps);
        let cache = head.forward_batch(&feats)?;
        let mut upstream = Array2::zeros((chunk.len(), out_dim));
        let mut loss_sum = 0.0;
        for (i, q) in chunk.iter().enumerate() {
            let raw = cache.output().row(i);
            let (l, g) = kind.loss_and_grad(raw.as_slice().expect("standard layout"), q.d);
            loss_sum += l;
            for k in 0..out_dim {
                upstream[[i, k]] = g[k] * inv_n;
            }
        }
        let (head_grad, feat_grad) = head.backward_batch(&cache, &upstream)?;
        Ok(ChunkResult {
            loss_sum,
            head_grad,
            taps,
            feat_grad,
        })
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut grid_grad = FeatureGrid::zeros(grid.width(), grid.height(), grid.depth());
    for r in &results {
        for (tap, row) in r.taps.iter().zip(r.feat_grad.rows()) {
            grid_grad.scatter(tap, row.as_slice().expect("standard layout"));
        }
    }
    let loss = tree_reduce(results.iter().map(|r| r.loss_sum).collect(), |a, b| a + b).unwrap_or(0.0) * inv_n;
    let head_grad = tree_reduce(results.into_iter().map(|r| r.head_grad).collect(), |mut a, b| {
        a.accumulate(&b);
        a
    })
    .expect("at least one chunk");
    Ok(PointLoss {
        loss,
        head_grad,
        grid_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn model_shapes() {
        let cfg = ModelConfig {
            kind: HeadKind::L1,
            backbone: BackboneConfig { base_channels: 4, feature_dim: 6 },
            width_factor: 1.0 / 64.0,
            frequency: 1.0,
        };
        let m = SmdModel::new(&cfg, 3);
        assert_eq!(m.head.widths(), vec![6, 16, 8, 4, 2, 1]);
        assert_eq!(m.params().len(), 2 * 8 + 2 * 5);
        assert!(SmdModel::from_parts(HeadKind::Bimodal, m.net.clone(), m.head.clone()).is_err());
    }

    #[test]
    fn point_loss_modes_agree_bitwise() {
        let grid = FeatureGrid::new(Array3::from_shape_fn((5, 6, 3), |(y, x, c)| {
            ((y * 18 + x * 3 + c) as f64 * 0.37).sin()
        }))
        .unwrap();
        let head = MlpHead::new(3, &[8, 4], 5).sine_init(1);
        let qs: Vec<FeatureQuery> = (0..700)
            .map(|i| FeatureQuery {
                x: (i as f64 * 0.731) % 5.0,
                y: (i as f64 * 0.377) % 4.0,
                d: (i as f64 * 0.13) % 1.0,
            })
            .collect();
        let a = point_loss(&head, HeadKind::Bimodal, &grid, &qs, ExecMode::Sequential).unwrap();
        let b = point_loss(&head, HeadKind::Bimodal, &grid, &qs, ExecMode::Parallel).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.head_grad, b.head_grad);
        assert_eq!(a.grid_grad, b.grid_grad);
        assert!(point_loss(&head, HeadKind::Bimodal, &grid, &[], ExecMode::Sequential).is_err());
        assert!(point_loss(&head, HeadKind::L1, &grid, &qs, ExecMode::Sequential).is_err());
    }
}
