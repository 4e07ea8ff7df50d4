//! Boundary-aware disparity error metrics. All errors are reported in raw
//! disparity pixels (normalized values times `d_max`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmdError};
use crate::parallel::{map_range, ExecMode};
use crate::sampling::{boundary_mask, BoundaryMask, DisparityField};

fn same_size(pred: &DisparityField, gt: &DisparityField) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(SmdError::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Soft edge error at every boundary pixel, in row-major order: the smallest
/// absolute difference between the prediction at `p` and any valid ground
/// truth value in the `k x k` window centred on `p` (clipped at borders).
pub fn see_k(
    pred: &DisparityField,
    gt: &DisparityField,
    boundary: &BoundaryMask,
    k: usize,
    d_max: f64,
) -> Result<Vec<f64>> {
    same_size(pred, gt)?;
    if boundary.width() != gt.width() || boundary.height() != gt.height() {
        return Err(SmdError::Shape("boundary mask size differs from ground truth".into()));
    }
    if k.is_multiple_of(2) {
        return Err(SmdError::Config(format!("window size {k} must be odd")));
    }
    let (w, h) = (gt.width(), gt.height());
    let r = k / 2;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !boundary.get(x, y) {
                continue;
            }
            let p = pred.get(x, y);
            let mut best = f64::INFINITY;
            for qy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for qx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    if gt.is_valid(qx, qy) {
                        best = best.min((p - gt.get(qx, qy)).abs());
                    }
                }
            }
            if best.is_finite() {
                out.push(best * d_max);
            }
        }
    }
    Ok(out)
}

/// Absolute error at every valid ground-truth pixel, row-major.
pub fn epe(pred: &DisparityField, gt: &DisparityField, d_max: f64) -> Result<Vec<f64>> {
    same_size(pred, gt)?;
    Ok(pred
        .values()
        .iter()
        .zip(gt.values())
        .enumerate()
        .filter(|(i, _)| gt.validity().is_none_or(|v| v[*i]))
        .map(|(_, (p, g))| (p - g).abs() * d_max)
        .collect())
}

/// Percentage of errors strictly greater than `delta`.
pub fn sigma(errors: &[f64], delta: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(SmdError::Empty("no errors to summarize".into()));
    }
    let bad = errors.iter().filter(|e| **e > delta).count();
    Ok(100.0 * bad as f64 / errors.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sigma_or_zero(v: &[f64], delta: f64) -> f64 {
    sigma(v, delta).unwrap_or(0.0)
}

/// Summary statistics in the layout of a comparison-table row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub see3_avg: f64,
    pub see3_sigma1: f64,
    pub see3_sigma2: f64,
    pub see5_avg: f64,
    pub see5_sigma1: f64,
    pub see5_sigma2: f64,
    pub epe_avg: f64,
    pub epe_sigma1: f64,
    pub epe_sigma2: f64,
    pub epe_sigma3: f64,
    pub boundary_pixels: usize,
    pub total_pixels: usize,
}

const KV_KEYS: [&str; 12] = [
    "see3_avg",
    "see3_sigma1",
    "see3_sigma2",
    "see5_avg",
    "see5_sigma1",
    "see5_sigma2",
    "epe_avg",
    "epe_sigma1",
    "epe_sigma2",
    "epe_sigma3",
    "boundary_pixels",
    "total_pixels",
];

impl ErrorReport {
    fn values(&self) -> [f64; 12] {
        [
            self.see3_avg,
            self.see3_sigma1,
            self.see3_sigma2,
            self.see5_avg,
            self.see5_sigma1,
            self.see5_sigma2,
            self.epe_avg,
            self.epe_sigma1,
            self.epe_sigma2,
            self.epe_sigma3,
            self.boundary_pixels as f64,
            self.total_pixels as f64,
        ]
    }

    /// Flat `key = value` text block.
    pub fn to_kv(&self) -> String {
        KV_KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut vals = [None; 12];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SmdError::Config(format!("malformed report line '{line}'")))?;
            let idx = KV_KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| SmdError::Config(format!("unknown report key '{}'", k.trim())))?;
            let parsed: f64 = v
                .trim()
                .parse()
                .map_err(|_| SmdError::Config(format!("bad value in '{line}'")))?;
            vals[idx] = Some(parsed);
        }
        let get = |i: usize| vals[i].ok_or_else(|| SmdError::Config(format!("missing key {}", KV_KEYS[i])));
        Ok(Self {
            see3_avg: get(0)?,
            see3_sigma1: get(1)?,
            see3_sigma2: get(2)?,
            see5_avg: get(3)?,
            see5_sigma1: get(4)?,
            see5_sigma2: get(5)?,
            epe_avg: get(6)?,
            epe_sigma1: get(7)?,
            epe_sigma2: get(8)?,
            epe_sigma3: get(9)?,
            boundary_pixels: get(10)? as usize,
            total_pixels: get(11)? as usize,
        })
    }

    /// Pools several reports: SEE statistics are weighted by boundary pixel
    /// counts and EPE statistics by total pixel counts, which equals
    /// evaluating the concatenation of all pixels.
    pub fn aggregate(reports: &[ErrorReport]) -> ErrorReport {
        let nb: usize = reports.iter().map(|r| r.boundary_pixels).sum();
        let nt: usize = reports.iter().map(|r| r.total_pixels).sum();
        let wmean = |f: &dyn Fn(&ErrorReport) -> f64, boundary: bool| -> f64 {
            let total = if boundary { nb } else { nt };
            if total == 0 {
                return 0.0;
            }
            reports
                .iter()
                .map(|r| f(r) * if boundary { r.boundary_pixels } else { r.total_pixels } as f64)
                .sum::<f64>()
                / total as f64
        };
        ErrorReport {
            see3_avg: wmean(&|r| r.see3_avg, true),
            see3_sigma1: wmean(&|r| r.see3_sigma1, true),
            see3_sigma2: wmean(&|r| r.see3_sigma2, true),
            see5_avg: wmean(&|r| r.see5_avg, true),
            see5_sigma1: wmean(&|r| r.see5_sigma1, true),
            see5_sigma2: wmean(&|r| r.see5_sigma2, true),
            epe_avg: wmean(&|r| r.epe_avg, false),
            epe_sigma1: wmean(&|r| r.epe_sigma1, false),
            epe_sigma2: wmean(&|r| r.epe_sigma2, false),
            epe_sigma3: wmean(&|r| r.epe_sigma3, false),
            boundary_pixels: nb,
            total_pixels: nt,
        }
    }
}

/// Full report for one prediction. The boundary set uses the 1-pixel jump
/// rule on the ground truth, without dilation.
pub fn evaluate(pred: &DisparityField, gt: &DisparityField, d_max: f64) -> Result<ErrorReport> {
    same_size(pred, gt)?;
    let boundary = boundary_mask(gt, 1.0 / d_max);
    let see3 = see_k(pred, gt, &boundary, 3, d_max)?;
    let see5 = see_k(pred, gt, &boundary, 5, d_max)?;
    let e = epe(pred, gt, d_max)?;
    Ok(ErrorReport {
        see3_avg: mean(&see3),
        see3_sigma1: sigma_or_zero(&see3, 1.0),
        see3_sigma2: sigma_or_zero(&see3, 2.0),
        see5_avg: mean(&see5),
        see5_sigma1: sigma_or_zero(&see5, 1.0),
        see5_sigma2: sigma_or_zero(&see5, 2.0),
        epe_avg: mean(&e),
        epe_sigma1: sigma_or_zero(&e, 1.0),
        epe_sigma2: sigma_or_zero(&e, 2.0),
        epe_sigma3: sigma_or_zero(&e, 3.0),
        boundary_pixels: see3.len(),
        total_pixels: e.len(),
    })
}

/// Evaluates many pairs, one report each, in input order.
pub fn evaluate_many(
    pairs: &[(DisparityField, DisparityField)],
    d_max: f64,
    mode: ExecMode,
) -> Vec<Result<ErrorReport>> {
    map_range(mode, pairs.len(), |i| evaluate(&pairs[i].0, &pairs[i].1, d_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, v: &[f64]) -> DisparityField {
        DisparityField::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn see_examples() {
        let gt = field(3, 3, &[4.0; 9]);
        let mut pred = field(3, 3, &[4.0; 9]);
        pred.set(1, 1, 5.0);
        let mut m = BoundaryMask::empty(3, 3);
        m.set(1, 1, true);
        assert_eq!(see_k(&pred, &gt, &m, 3, 1.0).unwrap(), vec![1.0]);
        let mut gt2 = gt.clone();
        gt2.set(0, 2, 5.0);
        assert_eq!(see_k(&pred, &gt2, &m, 3, 1.0).unwrap(), vec![0.0]);
        assert!(see_k(&pred, &gt, &m, 4, 1.0).is_err());
        assert!(see_k(&field(2, 1, &[0.0, 0.0]), &gt, &m, 3, 1.0).is_err());
    }

    #[test]
    fn epe_examples() {
        let gt = field(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert!(epe(&gt, &gt, 10.0).unwrap().iter().all(|e| *e == 0.0));
        let shifted = gt.map(|v| v + 0.25);
        for e in epe(&shifted, &gt, 4.0).unwrap() {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(&[0.5, 2.5, 3.5, 0.1], 2.0).unwrap(), 50.0);
        assert_eq!(sigma(&[0.0; 4], 1.0).unwrap(), 0.0);
        assert_eq!(sigma(&[2.0; 5], 2.0).unwrap(), 0.0);
        assert!(sigma(&[], 1.0).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let gt = DisparityField::from_fn(8, 6, |x, _| if x < 4 { 2.0 } else { 9.0 });
        let r = evaluate(&gt, &gt, 1.0).unwrap();
        assert_eq!(r.boundary_pixels, 12);
        assert_eq!(r.see3_avg + r.see5_avg + r.epe_avg + r.epe_sigma1 + r.see3_sigma1, 0.0);
        let pred = gt.map(|v| v + 2.0);
        let r = evaluate(&pred, &gt, 1.0).unwrap();
        assert_eq!(r.epe_avg, 2.0);
        assert_eq!(r.epe_sigma1, 100.0);
        assert_eq!(r.epe_sigma3, 0.0);
        assert!(r.see3_avg <= 2.0 && r.see5_avg <= r.see3_avg);
    }

    #[test]
    fn report_kv_round_trip() {
        let r = ErrorReport {
            see3_avg: 1.25,
            epe_sigma3: 3.5,
            boundary_pixels: 17,
            total_pixels: 100,
            ..Default::default()
        };
        assert_eq!(ErrorReport::from_kv(&r.to_kv()).unwrap(), r);
        assert!(ErrorReport::from_kv("bogus = 1").is_err());
    }
}
