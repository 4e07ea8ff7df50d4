//! Dense prediction at arbitrary output resolution.

use crate::backbone::StereoInput;
use crate::error::{Result, SmdError};
use crate::field::{Decoded, FeatureGrid, HeadKind, MlpHead};
use crate::model::{gather_features, SmdModel};
use crate::parallel::{map_range, ExecMode};
use crate::sampling::DisparityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOptions {
    /// Queries evaluated per head batch.
    pub batch_size: usize,
    /// Compute differential entropy per query (quadrature, slow).
    pub uncertainty: bool,
    /// Keep the mixture weight and mean maps.
    pub aux: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            batch_size: 4096,
            uncertainty: false,
            aux: false,
        }
    }
}

/// Buffer accounting for one inference call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferStats {
    /// f64 values held by the backbone's activation cache.
    pub backbone_activation_floats: usize,
    /// Largest number of query rows alive in one head batch.
    pub max_batch_rows: usize,
    pub batches: usize,
}

/// Prediction maps in normalized disparity.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub disparity: DisparityField,
    /// Entropy in nats; absent for point heads or when not requested.
    pub entropy: Option<DisparityField>,
    /// `pi`, `mu1`, `mu2` for bimodal heads when `aux` is requested.
    pub pi: Option<DisparityField>,
    pub mu1: Option<DisparityField>,
    pub mu2: Option<DisparityField>,
    pub stats: InferStats,
}

/// Maps a continuous coordinate on an axis of `out` pixels (pixel centres at
/// integers) onto a grid axis of `base` pixels covering the same extent,
/// clamped to the grid.
#[inline]
pub fn to_grid(v: f64, out: usize, base: usize) -> f64 {
    ((v + 0.5) * base as f64 / out as f64 - 0.5).clamp(0.0, (base - 1) as f64)
}

/// Grid coordinate of the centre of output pixel `i`.
#[inline]
pub fn query_coord(i: usize, out: usize, base: usize) -> f64 {
    to_grid(i as f64, out, base)
}

#[derive(Default)]
struct Batch {
    disparity: Vec<f64>,
    entropy: Vec<f64>,
    pi: Vec<f64>,
    mu1: Vec<f64>,
    mu2: Vec<f64>,
}

fn run_batch(
    grid: &FeatureGrid,
    head: &MlpHead,
    kind: HeadKind,
    range: std::ops::Range<usize>,
    out_w: usize,
    out_h: usize,
    opts: InferOptions,
) -> Result<Batch> {
    let taps = range
        .map(|q| {
            let x = query_coord(q % out_w, out_w, grid.width());
            let y = query_coord(q / out_w, out_h, grid.height());
            grid.tap(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    let cache = head.forward_batch(&gather_features(grid, &taps))?;
    let mut b = Batch::default();
    for row in cache.output().rows() {
        let dec = kind.decode(row.as_slice().expect("standard layout"));
        b.disparity.push(dec.disparity());
        if opts.uncertainty {
            if let Some(h) = dec.entropy() {
                b.entropy.push(h);
            }
        }
        if opts.aux {
            if let Decoded::Bimodal(p) = dec {
                b.pi.push(p.pi());
                b.mu1.push(p.mu1());
                b.mu2.push(p.mu2());
            }
        }
    }
    Ok(b)
}

/// Runs the backbone once and queries the head on an `out_w x out_h` grid
/// in bounded batches.
pub fn infer_grid(
    model: &SmdModel,
    input: &StereoInput,
    out_w: usize,
    out_h: usize,
    opts: InferOptions,
    mode: ExecMode,
) -> Result<Prediction> {
    if out_w == 0 || out_h == 0 || opts.batch_size == 0 {
        return Err(SmdError::Config("output size and batch size must be positive".into()));
    }
    let (grid, cache) = model.net.forward(input)?;
    let backbone_activation_floats = cache.activation_floats();
    drop(cache);
    let total = out_w * out_h;
    let n_batches = total.div_ceil(opts.batch_size);
    let batches = map_range(mode, n_batches, |i| {
        let lo = i * opts.batch_size;
        let hi = (lo + opts.batch_size).min(total);
        run_batch(&grid, &model.head, model.kind, lo..hi, out_w, out_h, opts)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let max_batch_rows = opts.batch_size.min(total);

    let collect = |f: fn(&Batch) -> &Vec<f64>| -> Option<DisparityField> {
        let v: Vec<f64> = batches.iter().flat_map(|b| f(b).iter().copied()).collect();
        (v.len() == total).then(|| DisparityField::new(out_w, out_h, v).expect("sized to grid"))
    };
    Ok(Prediction {
        disparity: collect(|b| &b.disparity).expect("one disparity per query"),
        entropy: collect(|b| &b.entropy),
        pi: collect(|b| &b.pi),
        mu1: collect(|b| &b.mu1),
        mu2: collect(|b| &b.mu2),
        stats: InferStats {
            backbone_activation_floats,
            max_batch_rows,
            batches: n_batches,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::field::{decode_params, sigmoid, RawOutput5};
    use crate::mixture::select_mode;
    use crate::model::ModelConfig;
    use ndarray::Array3;

    fn model(kind: HeadKind) -> SmdModel {
        let cfg = ModelConfig {
            kind,
            backbone: BackboneConfig {
                base_channels: 2,
                feature_dim: 4,
            },
            width_factor: 1.0 / 64.0,
            frequency: 1.0,
        };
        SmdModel::new(&cfg, 5)
    }

    fn input() -> StereoInput {
        StereoInput::new(Array3::from_shape_fn((6, 8, 12), |(c, y, x)| {
            ((c + 2 * y + 3 * x) as f64 * 0.1).sin() * 0.5 + 0.5
        }))
        .unwrap()
    }

    #[test]
    fn coords_cover_domain() {
        assert_eq!(query_coord(0, 32, 8), 0.0);
        assert_eq!(query_coord(1, 32, 8), 0.0);
        assert_eq!(query_coord(2, 32, 8), 0.125);
        assert_eq!(query_coord(6, 32, 8), 1.125);
        assert_eq!(query_coord(31, 32, 8), 7.0);
        assert_eq!(query_coord(5, 8, 8), 5.0);
        assert_eq!(query_coord(2, 16, 8), 0.75);
    }

    #[test]
    fn zero_head_gives_constant_map() {
        let mut m = model(HeadKind::Bimodal);
        for layer in &mut m.head.layers {
            layer.weight.fill(0.0);
        }
        let last = m.head.layers.last_mut().unwrap();
        last.bias.assign(&ndarray::arr1(&[0.3, -1.0, 0.2, 1.5, -0.4]));
        let p = infer_grid(&m, &input(), 12, 8, InferOptions::default(), ExecMode::Sequential).unwrap();
        let raw = RawOutput5([0.3, -1.0, 0.2, 1.5, -0.4].map(sigmoid));
        let want = select_mode(&decode_params(&raw));
        assert!(p.disparity.values().iter().all(|v| *v == want));
    }

    #[test]
    fn batching_is_transparent_and_bounded() {
        let m = model(HeadKind::Bimodal);
        let opts = InferOptions {
            batch_size: 50,
            uncertainty: true,
            aux: true,
        };
        let small = infer_grid(&m, &input(), 12, 8, opts, ExecMode::Parallel).unwrap();
        let big = infer_grid(&m, &input(), 48, 32, opts, ExecMode::Parallel).unwrap();
        let one = infer_grid(&m, &input(), 48, 32, InferOptions { batch_size: 10_000, ..opts }, ExecMode::Sequential)
            .unwrap();
        assert_eq!(big.disparity, one.disparity);
        assert_eq!(big.stats.backbone_activation_floats, small.stats.backbone_activation_floats);
        assert_eq!(big.stats.max_batch_rows, 50);
        assert_eq!(big.stats.batches, 48 * 32 / 50 + 1);
        assert!(big.entropy.is_some() && big.pi.is_some() && big.mu2.is_some());
        // At 3x, output pixel 3i + 1 is centred on input pixel i.
        let three = infer_grid(&m, &input(), 36, 24, opts, ExecMode::Parallel).unwrap();
        assert_eq!(three.disparity.get(7, 4), small.disparity.get(2, 1));
    }

    #[test]
    fn point_head_has_no_aux() {
        let m = model(HeadKind::L1);
        let opts = InferOptions {
            uncertainty: true,
            aux: true,
            ..InferOptions::default()
        };
        let p = infer_grid(&m, &input(), 12, 8, opts, ExecMode::Sequential).unwrap();
        assert!(p.entropy.is_none() && p.pi.is_none());
        assert_eq!(p.disparity.width(), 12);
    }
}
